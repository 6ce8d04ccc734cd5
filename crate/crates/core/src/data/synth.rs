//! Synthetic paired scenes: a parametric object glyph, with a stick figure
//! touching its class-specific contact regions in the interactive image.

use super::{part_heatmaps, PartPoints, SamplePair, NUM_PARTS};
use crate::blocks::NUM_JOINTS;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

const HAND: usize = 0;
const FEET: usize = 1;
const MOUTH: usize = 2;
const HIPS: usize = 3;
const BACK: usize = 4;
const EYE: usize = 5;
const OUTSIDE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffordanceClass {
    pub name: &'static str,
    /// Channels that carry contact points for this class.
    pub parts: &'static [usize],
    pub objects: [&'static str; 2],
}

pub const CLASSES: [AffordanceClass; 7] = [
    AffordanceClass { name: "sit", parts: &[HIPS, BACK], objects: ["chair", "bench"] },
    AffordanceClass { name: "ride", parts: &[HAND, FEET, HIPS, OUTSIDE], objects: ["bicycle", "horse"] },
    AffordanceClass { name: "drink", parts: &[HAND, MOUTH], objects: ["cup", "bottle"] },
    AffordanceClass { name: "kick", parts: &[FEET], objects: ["ball", "crate"] },
    AffordanceClass { name: "cut", parts: &[HAND, OUTSIDE], objects: ["knife", "scissors"] },
    AffordanceClass { name: "look", parts: &[EYE], objects: ["telescope", "binoculars"] },
    AffordanceClass { name: "lie", parts: &[BACK, HIPS, FEET], objects: ["bed", "sofa"] },
];

impl AffordanceClass {
    pub fn by_name(name: &str) -> Result<&'static AffordanceClass> {
        CLASSES
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Config(format!("unknown affordance class {name:?}")))
    }
}

#[derive(Clone, Copy)]
enum Prim {
    /// `x, y, w, h` relative to the object box.
    Rect(f64, f64, f64, f64),
    /// `cx, cy, rx, ry` relative to the object box.
    Ellipse(f64, f64, f64, f64),
}

struct Glyph {
    name: &'static str,
    /// Height over width.
    aspect: f64,
    prims: &'static [Prim],
    anchors: &'static [(usize, f64, f64)],
}

use Prim::{Ellipse as E, Rect as R};

const GLYPHS: [Glyph; 14] = [
    Glyph {
        name: "chair",
        aspect: 1.2,
        prims: &[R(0.0, 0.45, 1.0, 0.12), R(0.8, 0.0, 0.15, 0.5), R(0.05, 0.57, 0.09, 0.43), R(0.84, 0.57, 0.09, 0.43)],
        anchors: &[(HIPS, 0.45, 0.45), (BACK, 0.8, 0.22)],
    },
    Glyph {
        name: "bench",
        aspect: 0.7,
        prims: &[R(0.0, 0.5, 1.0, 0.16), R(0.86, 0.0, 0.12, 0.5), R(0.1, 0.66, 0.1, 0.34), R(0.8, 0.66, 0.1, 0.34), R(0.0, 0.08, 0.86, 0.1)],
        anchors: &[(HIPS, 0.55, 0.5), (BACK, 0.86, 0.25)],
    },
    Glyph {
        name: "bicycle",
        aspect: 0.7,
        prims: &[
            E(0.2, 0.72, 0.18, 0.26),
            E(0.8, 0.72, 0.18, 0.26),
            R(0.2, 0.5, 0.6, 0.07),
            R(0.32, 0.35, 0.06, 0.18),
            R(0.26, 0.32, 0.18, 0.06),
            R(0.74, 0.25, 0.06, 0.28),
            R(0.7, 0.22, 0.16, 0.05),
        ],
        anchors: &[(HIPS, 0.35, 0.32), (HAND, 0.78, 0.23), (FEET, 0.5, 0.62), (OUTSIDE, 0.2, 0.97), (OUTSIDE, 0.8, 0.97)],
    },
    Glyph {
        name: "horse",
        aspect: 0.8,
        prims: &[
            E(0.45, 0.45, 0.35, 0.18),
            R(0.72, 0.12, 0.1, 0.3),
            E(0.86, 0.12, 0.12, 0.08),
            R(0.18, 0.55, 0.07, 0.45),
            R(0.32, 0.55, 0.07, 0.45),
            R(0.56, 0.55, 0.07, 0.45),
            R(0.68, 0.55, 0.07, 0.45),
        ],
        anchors: &[(HIPS, 0.42, 0.28), (HAND, 0.74, 0.18), (FEET, 0.42, 0.6), (OUTSIDE, 0.21, 0.98), (OUTSIDE, 0.71, 0.98)],
    },
    Glyph {
        name: "cup",
        aspect: 1.1,
        prims: &[R(0.1, 0.2, 0.6, 0.8), R(0.05, 0.12, 0.7, 0.09), E(0.82, 0.55, 0.14, 0.2)],
        anchors: &[(MOUTH, 0.25, 0.14), (HAND, 0.88, 0.55)],
    },
    Glyph {
        name: "bottle",
        aspect: 2.2,
        prims: &[R(0.2, 0.4, 0.6, 0.6), R(0.38, 0.08, 0.24, 0.34), R(0.34, 0.02, 0.32, 0.07)],
        anchors: &[(MOUTH, 0.5, 0.03), (HAND, 0.5, 0.7)],
    },
    Glyph {
        name: "ball",
        aspect: 1.0,
        prims: &[E(0.5, 0.5, 0.5, 0.5), R(0.1, 0.46, 0.8, 0.08)],
        anchors: &[(FEET, 0.05, 0.62)],
    },
    Glyph {
        name: "crate",
        aspect: 0.8,
        prims: &[R(0.0, 0.0, 1.0, 1.0), R(0.0, 0.0, 1.0, 0.12), R(0.44, 0.0, 0.12, 1.0)],
        anchors: &[(FEET, 0.03, 0.75)],
    },
    Glyph {
        name: "knife",
        aspect: 0.3,
        prims: &[R(0.0, 0.3, 0.35, 0.4), R(0.35, 0.38, 0.65, 0.3)],
        anchors: &[(HAND, 0.15, 0.5), (OUTSIDE, 0.8, 0.68)],
    },
    Glyph {
        name: "scissors",
        aspect: 0.45,
        prims: &[E(0.12, 0.3, 0.12, 0.22), E(0.12, 0.7, 0.12, 0.22), R(0.24, 0.38, 0.76, 0.1), R(0.24, 0.52, 0.76, 0.1)],
        anchors: &[(HAND, 0.12, 0.3), (HAND, 0.12, 0.7), (OUTSIDE, 0.95, 0.5)],
    },
    Glyph {
        name: "telescope",
        aspect: 0.6,
        prims: &[R(0.0, 0.3, 0.12, 0.16), R(0.12, 0.25, 0.88, 0.26), R(0.45, 0.51, 0.06, 0.49), R(0.3, 0.9, 0.36, 0.1)],
        anchors: &[(EYE, 0.02, 0.38)],
    },
    Glyph {
        name: "binoculars",
        aspect: 0.7,
        prims: &[E(0.55, 0.28, 0.42, 0.2), E(0.55, 0.72, 0.42, 0.2), R(0.4, 0.4, 0.3, 0.2), R(0.0, 0.2, 0.12, 0.16), R(0.0, 0.64, 0.12, 0.16)],
        anchors: &[(EYE, 0.03, 0.28), (EYE, 0.03, 0.72)],
    },
    Glyph {
        name: "bed",
        aspect: 0.45,
        prims: &[R(0.0, 0.5, 1.0, 0.25), R(0.0, 0.1, 0.08, 0.9), R(0.08, 0.42, 0.2, 0.1), R(0.92, 0.75, 0.08, 0.25)],
        anchors: &[(BACK, 0.3, 0.45), (HIPS, 0.55, 0.48), (FEET, 0.92, 0.48)],
    },
    Glyph {
        name: "sofa",
        aspect: 0.5,
        prims: &[R(0.0, 0.5, 1.0, 0.25), R(0.0, 0.2, 1.0, 0.3), R(0.0, 0.35, 0.1, 0.65), R(0.9, 0.35, 0.1, 0.65)],
        anchors: &[(BACK, 0.3, 0.48), (HIPS, 0.58, 0.5), (FEET, 0.88, 0.5)],
    },
];

fn glyph(name: &str) -> &'static Glyph {
    GLYPHS.iter().find(|g| g.name == name).expect("every class object has a glyph")
}

type P = (f64, f64);

fn add(a: P, b: P) -> P {
    (a.0 + b.0, a.1 + b.1)
}

fn sub(a: P, b: P) -> P {
    (a.0 - b.0, a.1 - b.1)
}

fn mul(a: P, s: f64) -> P {
    (a.0 * s, a.1 * s)
}

fn len(a: P) -> f64 {
    a.0.hypot(a.1)
}

fn dot(a: P, b: P) -> f64 {
    a.0 * b.0 + a.1 * b.1
}

/// A placed object: its box in pixels, whether it is mirrored, and colors.
struct Placed {
    glyph: &'static Glyph,
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    mirror: bool,
}

impl Placed {
    fn new(glyph: &'static Glyph, s: f64, rng: &mut SplitMix64) -> Self {
        let mut w = s * rng.uniform(0.36, 0.5);
        let mut h = w * glyph.aspect;
        let max_h = 0.55 * s;
        if h > max_h {
            w *= max_h / h;
            h = max_h;
        }
        let margin = 0.06 * s;
        let x0 = rng.uniform(margin, s - w - margin);
        let y0 = rng.uniform(0.3 * s, s - h - margin);
        Self { glyph, x0, y0, w, h, mirror: rng.bernoulli(0.5) }
    }

    fn at(&self, rx: f64, ry: f64) -> P {
        let rx = if self.mirror { 1.0 - rx } else { rx };
        (self.x0 + rx * self.w, self.y0 + ry * self.h)
    }

    fn center(&self) -> P {
        (self.x0 + 0.5 * self.w, self.y0 + 0.5 * self.h)
    }

    /// Contact anchors in pixels, per part.
    fn anchors(&self, parts: &[usize]) -> [Vec<P>; NUM_PARTS] {
        let mut out: [Vec<P>; NUM_PARTS] = Default::default();
        for &(part, rx, ry) in self.glyph.anchors {
            if parts.contains(&part) {
                out[part].push(self.at(rx, ry));
            }
        }
        out
    }

    fn bbox(&self) -> [usize; 4] {
        [self.x0 as usize, self.y0 as usize, self.w.ceil() as usize, self.h.ceil() as usize]
    }
}

struct Canvas {
    s: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn background(s: usize, rng: &mut SplitMix64) -> Self {
        let base = rng.uniform(0.78, 0.95);
        let tint: [f64; 3] = std::array::from_fn(|_| rng.uniform(-0.05, 0.05));
        let slope = rng.uniform(-0.08, 0.08);
        let mut data = vec![0.0; 3 * s * s];
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    let v = base + tint[c] + slope * (y as f64 / s as f64 - 0.5) + rng.uniform(-0.015, 0.015);
                    data[(c * s + y) * s + x] = v;
                }
            }
        }
        Self { s, data }
    }

    fn paint(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let s = self.s;
        for (c, v) in rgb.iter().enumerate() {
            self.data[(c * s + y) * s + x] = *v;
        }
    }

    /// Fill every pixel whose center satisfies `inside`, within a bounding box.
    fn fill(&mut self, lo: P, hi: P, inside: impl Fn(P) -> bool, color: impl Fn(P) -> [f64; 3]) {
        let s = self.s as f64;
        let x0 = lo.0.floor().max(0.0) as usize;
        let y0 = lo.1.floor().max(0.0) as usize;
        let x1 = hi.0.ceil().min(s) as usize;
        let y1 = hi.1.ceil().min(s) as usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                if inside(p) {
                    self.paint(x, y, color(p));
                }
            }
        }
    }

    fn object(&mut self, obj: &Placed, base: [f64; 3]) {
        let (top, height) = (obj.y0, obj.h);
        for (i, prim) in obj.glyph.prims.iter().enumerate() {
            let tone = if i % 2 == 0 { 1.0 } else { 0.8 };
            let color = |p: P| {
                let shade = tone * (1.05 - 0.25 * (p.1 - top) / height);
                base.map(|b| (b * shade).clamp(0.0, 1.0))
            };
            match *prim {
                Prim::Rect(rx, ry, rw, rh) => {
                    let a = obj.at(rx, ry);
                    let b = obj.at(rx + rw, ry + rh);
                    let lo = (a.0.min(b.0), a.1.min(b.1));
                    let hi = (a.0.max(b.0), a.1.max(b.1));
                    self.fill(lo, hi, |p| p.0 >= lo.0 && p.0 <= hi.0 && p.1 >= lo.1 && p.1 <= hi.1, color);
                }
                Prim::Ellipse(cx, cy, rx, ry) => {
                    let c = obj.at(cx, cy);
                    let (ax, ay) = (rx * obj.w, ry * obj.h);
                    let inside = |p: P| {
                        let dx = (p.0 - c.0) / ax;
                        let dy = (p.1 - c.1) / ay;
                        dx * dx + dy * dy <= 1.0
                    };
                    self.fill((c.0 - ax, c.1 - ay), (c.0 + ax, c.1 + ay), inside, color);
                }
            }
        }
    }

    fn segment(&mut self, a: P, b: P, radius: f64, rgb: [f64; 3]) {
        let d = sub(b, a);
        let l2 = dot(d, d).max(1e-12);
        let inside = |p: P| {
            let t = (dot(sub(p, a), d) / l2).clamp(0.0, 1.0);
            len(sub(p, add(a, mul(d, t)))) <= radius
        };
        let lo = (a.0.min(b.0) - radius, a.1.min(b.1) - radius);
        let hi = (a.0.max(b.0) + radius, a.1.max(b.1) + radius);
        self.fill(lo, hi, inside, |_| rgb);
    }

    fn disc(&mut self, c: P, radius: f64, rgb: [f64; 3]) {
        self.segment(c, c, radius, rgb);
    }

    /// Quantize to 8 bits so images survive a PPM round trip unchanged.
    fn into_tensor(self) -> Tensor {
        let s = self.s;
        let data = self.data.into_iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect();
        Tensor::new(vec![3, s, s], data).expect("canvas shape")
    }
}

// Keypoint order: nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles (left then right).
const NOSE: usize = 0;
const L_EYE: usize = 1;
const R_EYE: usize = 2;
const L_SHO: usize = 5;
const R_SHO: usize = 6;
const L_ELB: usize = 7;
const R_ELB: usize = 8;
const L_WRI: usize = 9;
const R_WRI: usize = 10;
const L_HIP: usize = 11;
const R_HIP: usize = 12;
const L_KNE: usize = 13;
const R_KNE: usize = 14;
const L_ANK: usize = 15;
const R_ANK: usize = 16;
const KEYPOINTS: usize = 17;

/// Segments whose interiors supply the remaining 36 joints (3 per segment).
const LIMBS: [(usize, usize); 12] = [
    (L_SHO, L_ELB),
    (L_ELB, L_WRI),
    (R_SHO, R_ELB),
    (R_ELB, R_WRI),
    (L_HIP, L_KNE),
    (L_KNE, L_ANK),
    (R_HIP, R_KNE),
    (R_KNE, R_ANK),
    (L_SHO, L_HIP),
    (R_SHO, R_HIP),
    (L_SHO, R_SHO),
    (L_HIP, R_HIP),
];

struct Figure {
    k: [P; KEYPOINTS],
    head: P,
    head_r: f64,
    neck: P,
    pelvis: P,
}

impl Figure {
    fn mouth(&self) -> P {
        let eyes = mul(add(self.k[L_EYE], self.k[R_EYE]), 0.5);
        add(self.k[NOSE], mul(sub(self.k[NOSE], eyes), 0.8))
    }

    fn eye(&self) -> P {
        mul(add(self.k[L_EYE], self.k[R_EYE]), 0.5)
    }

    fn translate(&mut self, d: P) {
        for p in self.k.iter_mut().chain([&mut self.head, &mut self.neck, &mut self.pelvis]) {
            *p = add(*p, d);
        }
    }

    /// 53 joints as `[x/S, y/S, depth]`, stored at `f32` precision.
    fn pose(&self, s: f64) -> Tensor {
        let depth = |i: usize| match i {
            L_EYE | 3 | L_SHO | L_ELB | L_WRI | L_HIP | L_KNE | L_ANK => 0.05,
            R_EYE | 4 | R_SHO | R_ELB | R_WRI | R_HIP | R_KNE | R_ANK => -0.05,
            _ => 0.0,
        };
        let mut rows: Vec<[f64; 3]> = (0..KEYPOINTS).map(|i| [self.k[i].0 / s, self.k[i].1 / s, depth(i)]).collect();
        for &(a, b) in &LIMBS {
            for t in [0.25, 0.5, 0.75] {
                let p = add(self.k[a], mul(sub(self.k[b], self.k[a]), t));
                rows.push([p.0 / s, p.1 / s, depth(a) * (1.0 - t) + depth(b) * t]);
            }
        }
        debug_assert_eq!(rows.len(), NUM_JOINTS);
        let flat = rows.concat().into_iter().map(|v| v as f32 as f64).collect();
        Tensor::new(vec![NUM_JOINTS, 3], flat).expect("pose shape")
    }
}

/// Two-segment limb from `root` towards `target`, bending towards `bend`.
fn limb(root: P, target: P, seg: f64, bend: P) -> P {
    let d = sub(target, root);
    let dist = len(d).max(1e-9);
    let mid = add(root, mul(d, 0.5));
    let perp = (-d.1 / dist, d.0 / dist);
    let perp = if dot(perp, bend) >= 0.0 { perp } else { mul(perp, -1.0) };
    let h = (seg * seg - dist * dist / 4.0).max(0.0).sqrt();
    add(mid, mul(perp, h))
}

fn pose_figure(anchors: &[Vec<P>; NUM_PARTS], obj: &Placed, s: f64) -> Figure {
    let f = 0.5 * s;
    let up = (0.0, -1.0);
    let down = (0.0, 1.0);

    let (pelvis, u, torso) = match (anchors[HIPS].first(), anchors[BACK].first()) {
        (Some(&hp), Some(&bk)) => {
            let d = sub(bk, hp);
            let l = len(d).max(1e-6);
            (hp, mul(d, 1.0 / l), (2.0 * l).clamp(0.2 * f, 0.5 * f))
        }
        (Some(&hp), None) => (hp, up, 0.33 * f),
        _ => {
            // Stand beside the object on the side of the first limb contact.
            let c = obj.center();
            let lead = anchors[HAND].first().or(anchors[FEET].first()).copied().unwrap_or(c);
            let side = if lead.0 <= c.0 { -1.0 } else { 1.0 };
            let x = if side < 0.0 { obj.x0 - 0.12 * f } else { obj.x0 + obj.w + 0.12 * f };
            ((x, obj.y0 + obj.h - 0.44 * f), up, 0.33 * f)
        }
    };

    let target = anchors[HAND]
        .first()
        .or(anchors[MOUTH].first())
        .or(anchors[EYE].first())
        .copied()
        .unwrap_or_else(|| obj.center());
    let side = (-u.1, u.0);
    let facing = if dot(side, sub(target, pelvis)) >= 0.0 { side } else { mul(side, -1.0) };

    let neck = add(pelvis, mul(u, torso));
    let head_r = 0.07 * f;
    let head = add(add(neck, mul(u, 0.11 * f)), mul(facing, 0.02 * f));
    let nose = add(head, mul(facing, 0.08 * f));
    let eye_c = add(add(head, mul(facing, 0.05 * f)), mul(u, 0.025 * f));
    let mut k = [(0.0, 0.0); KEYPOINTS];
    k[NOSE] = nose;
    k[L_EYE] = add(eye_c, mul(u, 0.005 * f));
    k[R_EYE] = sub(eye_c, mul(u, 0.005 * f));
    k[3] = add(head, mul(facing, -0.03 * f));
    k[4] = add(head, mul(facing, -0.045 * f));
    k[L_SHO] = add(neck, mul(facing, 0.03 * f));
    k[R_SHO] = add(neck, mul(facing, -0.03 * f));
    k[L_HIP] = add(pelvis, mul(facing, 0.025 * f));
    k[R_HIP] = add(pelvis, mul(facing, -0.025 * f));
    let mut fig = Figure { k, head, head_r, neck, pelvis };

    if anchors[HIPS].is_empty() {
        if let Some(&m) = anchors[MOUTH].first() {
            fig.translate(sub(m, fig.mouth()));
        } else if let Some(&e) = anchors[EYE].first() {
            let mid = if anchors[EYE].len() > 1 { mul(add(anchors[EYE][0], anchors[EYE][1]), 0.5) } else { e };
            fig.translate(sub(mid, fig.eye()));
        }
    }

    let arm = 0.17 * f;
    let hands = &anchors[HAND];
    for (i, (sho, elb, wri)) in [(L_SHO, L_ELB, L_WRI), (R_SHO, R_ELB, R_WRI)].into_iter().enumerate() {
        let root = fig.k[sho];
        let target = match hands.len() {
            0 => add(root, add(mul(down, 0.28 * f), mul(facing, 0.08 * f * (1.0 - i as f64)))),
            n => add(hands[i % n], mul(facing, if i == 1 && n == 1 { -0.015 * f } else { 0.0 })),
        };
        fig.k[elb] = limb(root, target, arm, add(mul(facing, -1.0), down));
        fig.k[wri] = target;
    }

    let leg = 0.22 * f;
    let feet = &anchors[FEET];
    let seated = !anchors[HIPS].is_empty();
    for (i, (hip, kne, ank)) in [(L_HIP, L_KNE, L_ANK), (R_HIP, R_KNE, R_ANK)].into_iter().enumerate() {
        let root = fig.k[hip];
        let (knee, ankle) = match feet.len() {
            0 if seated => {
                let knee = add(root, mul(facing, 0.9 * leg));
                (knee, add(knee, mul(down, 0.9 * leg)))
            }
            0 => {
                let ankle = add(root, add(mul(down, 2.0 * leg), mul(facing, 0.05 * f * (i as f64 - 0.5))));
                (limb(root, ankle, leg, facing), ankle)
            }
            n => {
                let ankle = add(feet[i % n], mul(facing, if i == 1 && n == 1 { -0.02 * f } else { 0.0 }));
                (limb(root, ankle, leg, facing), ankle)
            }
        };
        fig.k[kne] = knee;
        fig.k[ank] = ankle;
    }
    fig
}

fn draw_figure(canvas: &mut Canvas, fig: &Figure, rgb: [f64; 3], s: f64) {
    let r = (0.018 * s).max(0.75);
    let k = &fig.k;
    canvas.segment(fig.neck, fig.pelvis, 1.6 * r, rgb);
    for &(a, b) in &LIMBS[..8] {
        canvas.segment(k[a], k[b], r, rgb);
    }
    canvas.segment(k[L_SHO], k[R_SHO], r, rgb);
    canvas.segment(k[L_HIP], k[R_HIP], r, rgb);
    canvas.segment(fig.neck, fig.head, r, rgb);
    canvas.disc(fig.head, fig.head_r, rgb);
}

fn to_pixels(points: &[P], s: usize) -> Vec<(usize, usize)> {
    let hi = (s - 1) as f64;
    points
        .iter()
        .map(|p| (p.0.round().clamp(0.0, hi) as usize, p.1.round().clamp(0.0, hi) as usize))
        .collect()
}

fn random_color(rng: &mut SplitMix64, lo: f64, hi: f64) -> [f64; 3] {
    std::array::from_fn(|_| rng.uniform(lo, hi))
}

/// One pair of `class`: the interactive image shows a figure using the
/// object, the non-interactive image shows the same kind of object alone.
/// Bit-identical for equal `(seed, class, size)`.
pub fn generate_pair(seed: u64, class: &AffordanceClass, size: usize) -> Result<SamplePair> {
    generate_scene(seed, class, size).map(|(pair, _)| pair)
}

/// [`generate_pair`] plus the object boxes `[x, y, w, h]` of both images.
pub(crate) fn generate_scene(seed: u64, class: &AffordanceClass, size: usize) -> Result<(SamplePair, [[usize; 4]; 2])> {
    if size < 32 {
        return Err(Error::Config(format!("synthetic images need at least 32 pixels, got {size}")));
    }
    let mut rng = SplitMix64::fork(seed, 0x5ca1ab1e);
    let s = size as f64;
    let object = class.objects[rng.below(2)];
    let g = glyph(object);

    let obj_in = Placed::new(g, s, &mut rng);
    let obj_non = Placed::new(g, s, &mut rng);
    let anchors_in = obj_in.anchors(class.parts);
    let anchors_non = obj_non.anchors(class.parts);

    let mut canvas_in = Canvas::background(size, &mut rng);
    canvas_in.object(&obj_in, random_color(&mut rng, 0.25, 0.85));
    let fig = pose_figure(&anchors_in, &obj_in, s);
    draw_figure(&mut canvas_in, &fig, random_color(&mut rng, 0.05, 0.3), s);

    let mut canvas_non = Canvas::background(size, &mut rng);
    canvas_non.object(&obj_non, random_color(&mut rng, 0.25, 0.85));

    let fix_in: PartPoints = std::array::from_fn(|k| to_pixels(&anchors_in[k], size));
    let fix_non: PartPoints = std::array::from_fn(|k| to_pixels(&anchors_non[k], size));
    let id = format!("{}-{seed}", class.name);
    let pair = SamplePair {
        gt_in: part_heatmaps(&fix_in, size, size, &id)?,
        gt_non: part_heatmaps(&fix_non, size, size, &id)?,
        img_in: canvas_in.into_tensor(),
        img_non: canvas_non.into_tensor(),
        pose: fig.pose(s),
        fix_in,
        fix_non,
        affordance: class.name.to_string(),
        object: object.to_string(),
        id,
    };
    Ok((pair, [obj_in.bbox(), obj_non.bbox()]))
}
