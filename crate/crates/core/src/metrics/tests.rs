use proptest::prelude::*;

use super::*;
use crate::data::{generate_pair, CLASSES};
use crate::deq::DeqTrace;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

// Naive references over 2-D maps, written independently of the library code.

fn grid(v: &[f64], w: usize) -> Vec<Vec<f64>> {
    v.chunks(w).map(|r| r.to_vec()).collect()
}

fn total(m: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for row in m {
        for v in row {
            s += v;
        }
    }
    s
}

fn oracle_kld(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let (sp, sq) = (total(p), total(q));
    let mut out = 0.0;
    for y in 0..q.len() {
        for x in 0..q[y].len() {
            let pn = if sp > 0.0 { p[y][x] / sp } else { 0.0 };
            let qn = q[y][x] / sq;
            out += qn * (1e-12 + qn / (pn + 1e-12)).ln();
        }
    }
    out
}

fn oracle_sim(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let (sp, sq) = (total(p), total(q));
    let mut out = 0.0;
    for y in 0..q.len() {
        for x in 0..q[y].len() {
            let a = p[y][x] / sp;
            let b = q[y][x] / sq;
            out += if a < b { a } else { b };
        }
    }
    out
}

fn oracle_nss(p: &[Vec<f64>], fix: &[(usize, usize)]) -> f64 {
    let n = (p.len() * p[0].len()) as f64;
    let mean = total(p) / n;
    let mut var = 0.0;
    for row in p {
        for v in row {
            var += (v - mean) * (v - mean);
        }
    }
    let std = (var / n).sqrt();
    let mut s = 0.0;
    for &(x, y) in fix {
        s += (p[y][x] - mean) / std;
    }
    s / fix.len() as f64
}

/// Confusion matrix at every threshold by direct enumeration.
fn oracle_curve(p: &[Vec<f64>], g: &[Vec<bool>]) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for k in 1..=255 {
        let t = k as f64 / 255.0;
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for y in 0..p.len() {
            for x in 0..p[y].len() {
                match (p[y][x] > t, g[y][x]) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fneg += 1.0,
                    _ => {}
                }
            }
        }
        let prec = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
        let rec = tp / (tp + fneg);
        let f = if prec + rec == 0.0 { 0.0 } else { 1.3 * prec * rec / (0.3 * prec + rec) };
        out.push((prec, rec, f));
    }
    out
}

fn random_map(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    // Sparse maps with exact zeros and quantized values exercise ties.
    (0..n)
        .map(|_| match rng.below(4) {
            0 => 0.0,
            1 => rng.below(256) as f64 / 255.0,
            _ => rng.next_f64(),
        })
        .collect()
}

#[test]
fn oracle_parity_on_random_maps() {
    for seed in 0..100u64 {
        let mut rng = SplitMix64::new(seed);
        let (h, w) = (1 + rng.below(32), 1 + rng.below(32));
        let pred = random_map(&mut rng, h * w);
        let mut gt = random_map(&mut rng, h * w);
        gt[rng.below(h * w)] = 1.0;
        let (pg, gg) = (grid(&pred, w), grid(&gt, w));
        assert!((kld(&pred, &gt).unwrap() - oracle_kld(&pg, &gg)).abs() < 1e-9, "seed {seed}");
        if pred.iter().sum::<f64>() > 0.0 {
            assert!((sim(&pred, &gt).unwrap() - oracle_sim(&pg, &gg)).abs() < 1e-9, "seed {seed}");
        }
        let fix: Vec<(usize, usize)> = (0..1 + rng.below(5)).map(|_| (rng.below(w), rng.below(h))).collect();
        let idx: Vec<usize> = fix.iter().map(|&(x, y)| y * w + x).collect();
        let n = nss(&pred, &idx).unwrap();
        if !n.degenerate {
            assert!((n.value - oracle_nss(&pg, &fix)).abs() < 1e-9, "seed {seed}");
        }
        let gb = binarize(&gt);
        let curve = pr_f_curve(&pred, &gb).unwrap();
        let oracle = oracle_curve(&pg, &gb.chunks(w).map(|r| r.to_vec()).collect::<Vec<_>>());
        assert_eq!(curve.len(), 255);
        for (c, o) in curve.iter().zip(&oracle) {
            assert!((c.precision - o.0).abs() < 1e-9 && (c.recall - o.1).abs() < 1e-9 && (c.fmeasure - o.2).abs() < 1e-9);
        }
    }
}

#[test]
fn kld_examples() {
    let p = [0.1, 0.4, 0.0, 0.5];
    assert!(kld(&p, &p).unwrap().abs() < 1e-9);
    let n = 50;
    let mut delta = vec![0.0; n];
    delta[7] = 3.0;
    let uniform = vec![0.2; n];
    assert!((kld(&uniform, &delta).unwrap() - (n as f64).ln()).abs() < 1e-9);
    assert!(matches!(kld(&p, &[0.0; 4]), Err(Error::UndefinedMetric(_))));
    assert!(matches!(kld(&p, &[1.0; 3]), Err(Error::Data(_))));
    assert!(matches!(kld(&[-1.0, 0.0, 0.0, 0.0], &p), Err(Error::Data(_))));
}

#[test]
fn sim_examples() {
    let p = [0.3, 0.0, 0.7];
    assert!((sim(&p, &p).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(sim(&[1.0, 0.0, 0.0], &[0.0, 2.0, 5.0]).unwrap(), 0.0);
    let mut delta = vec![0.0; 40];
    delta[3] = 1.0;
    assert!((sim(&[1.0; 40], &delta).unwrap() - 1.0 / 40.0).abs() < 1e-12);
    assert!(matches!(sim(&p, &[0.0; 3]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn nss_examples() {
    // values 2, -0.5, -0.5, -0.5, -0.5: mean 0, population variance 1
    let m = [2.0, -0.5, -0.5, -0.5, -0.5];
    let n = nss(&m, &[0]).unwrap();
    assert!((n.value - 2.0).abs() < 1e-12 && !n.degenerate);
    assert_eq!(nss(&[0.4; 9], &[2]).unwrap(), Nss { value: 0.0, degenerate: true });
    let r = [0.1, 0.9, 0.3, 0.35, 0.0, 1.0];
    assert!(nss(&r, &[0, 1, 2, 3, 4, 5]).unwrap().value.abs() < 1e-12);
    assert!(matches!(nss(&r, &[]), Err(Error::UndefinedMetric(_))));
    assert!(matches!(nss(&r, &[6]), Err(Error::Data(_))));
}

#[test]
fn curve_examples() {
    let gt = [true, false, true, false, false, true];
    let pred: Vec<f64> = gt.iter().map(|&b| b as u8 as f64).collect();
    let c = pr_f_curve(&pred, &gt).unwrap();
    for p in &c[..254] {
        assert_eq!((p.precision, p.recall, p.fmeasure), (1.0, 1.0, 1.0));
    }
    // nothing exceeds 1.0
    assert_eq!((c[254].threshold, c[254].precision, c[254].recall), (1.0, 1.0, 0.0));
    let anti: Vec<f64> = pred.iter().map(|v| 1.0 - v).collect();
    for p in pr_f_curve(&anti, &gt).unwrap() {
        assert_eq!(p.recall, 0.0);
        assert_eq!(p.fmeasure, 0.0);
    }
    assert!(matches!(pr_f_curve(&pred, &[false; 6]), Err(Error::UndefinedMetric(_))));
    assert!(matches!(pr_f_curve(&[1.5; 6], &gt), Err(Error::Data(_))));
    let t = thresholds();
    assert_eq!((t.len(), t[0], t[254]), (255, 1.0 / 255.0, 1.0));
}

#[test]
fn curve_matches_exhaustive_enumeration_on_4x4() {
    let mut rng = SplitMix64::new(44);
    let pred: Vec<f64> = (0..16).map(|_| rng.below(6) as f64 / 5.0).collect();
    let gt: Vec<bool> = (0..16).map(|i| i % 3 == 0).collect();
    let c = pr_f_curve(&pred, &gt).unwrap();
    for (k, p) in c.iter().enumerate() {
        let t = (k + 1) as f64 / 255.0;
        let sel: Vec<usize> = (0..16).filter(|&i| pred[i] > t).collect();
        let tp = sel.iter().filter(|&&i| gt[i]).count();
        let expect_p = if sel.is_empty() { 1.0 } else { tp as f64 / sel.len() as f64 };
        assert_eq!(p.precision, expect_p);
        assert_eq!(p.recall, tp as f64 / 6.0);
    }
}

fn row(class: &str, part: &str, id: &str, v: f64) -> MetricRow {
    MetricRow {
        split: "seen".into(),
        class: class.into(),
        part: part.into(),
        id: id.into(),
        kld: v,
        sim: v / 2.0,
        nss: -v,
        nss_degenerate: false,
    }
}

#[test]
fn aggregate_examples() {
    let one = aggregate(&[row("sit", "hips", "a", 0.3)]);
    for r in &one.rows {
        assert_eq!((r.count, r.kld, r.sim, r.nss), (1, 0.3, 0.15, -0.3));
    }
    assert_eq!(one.rows.len(), 4);
    let two = aggregate(&[row("sit", "hips", "a", 0.4), row("ride", "hips", "b", 0.6)]);
    let all = two.find("seen", ALL, ALL).unwrap();
    assert!((all.kld - 0.5).abs() < 1e-15);
    assert_eq!(all.count, 2);
    assert_eq!(two.find("seen", ALL, "hips").unwrap().count, 2);
    assert_eq!(two.find("seen", "ride", ALL).unwrap().kld, 0.6);
}

#[test]
fn csv_schemas() {
    let rows = vec![row("sit", "hips", "p00001", 0.25)];
    let s = sample_csv(&rows).unwrap();
    assert_eq!(s.lines().next(), Some("split,class,part,id,kld,sim,nss"));
    assert_eq!(s.lines().nth(1), Some("seen,sit,hips,p00001,0.25,0.125,-0.25"));
    let r = report_csv(&aggregate(&rows)).unwrap();
    assert_eq!(r.lines().next(), Some("split,class,part,kld,sim,nss"));
    assert!(r.lines().skip(1).all(|l| l.split(',').count() == 6));
    let c = curves_csv(&pr_f_curve(&[0.2, 0.9], &[false, true]).unwrap()).unwrap();
    assert_eq!(c.lines().next(), Some("threshold,precision,recall,fmeasure"));
    assert_eq!(c.lines().count(), 256);
}

#[test]
fn svg_has_both_panels() {
    let curve = pr_f_curve(&[0.2, 0.9, 0.5], &[false, true, true]).unwrap();
    let svg = curves_svg(&curve);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn mean_curve_averages_precision_and_recall() {
    let a = pr_f_curve(&[0.9, 0.1], &[true, false]).unwrap();
    let b = pr_f_curve(&[0.1, 0.9], &[true, false]).unwrap();
    let m = mean_curve(&[a, b]).unwrap();
    // threshold 128/255: the first map is perfect, the second selects only the negative
    assert_eq!((m[127].precision, m[127].recall), (0.5, 0.5));
    assert!((m[127].fmeasure - 0.5).abs() < 1e-15);
    assert_eq!((m[0].precision, m[0].recall), (0.5, 1.0));
    assert!(mean_curve(&[]).is_err());
}

#[test]
fn histogram_counts_every_trace() {
    let t = |n| DeqTrace {
        solver: "anderson".into(),
        iterations: n,
        residuals: vec![],
        converged: true,
        warnings: vec![],
    };
    let traces = [t(5), t(7), t(5), t(9)];
    let h = iteration_histogram(&traces);
    assert_eq!(h, vec![(5, 2), (7, 1), (9, 1)]);
    let csv = iteration_histogram_csv(&h).unwrap();
    assert_eq!(csv, "iterations,count\n5,2\n7,1\n9,1\n");
}

#[test]
fn score_pair_covers_active_parts() {
    let pair = generate_pair(5, &CLASSES[0], 32).unwrap();
    let (rows, curves) = score_pair("seen", &pair, &pair.gt_non).unwrap();
    assert_eq!(rows.len(), pair.active_parts().len());
    assert_eq!(curves.len(), rows.len());
    for r in &rows {
        assert!(r.kld.abs() < 1e-9);
        assert!((r.sim - 1.0).abs() < 1e-9);
        assert!(r.nss > 0.0);
    }
    assert!(score_pair("seen", &pair, &Tensor::zeros(&[7, 16, 16])).is_err());
}

fn positive_map() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..64).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0.01f64..1.0, n),
        )
    })
}

proptest! {
    #[test]
    fn kld_nonnegative_and_sim_bounded((p, q) in positive_map()) {
        prop_assert!(kld(&p, &q).unwrap() >= -1e-12);
        let s = sim(&p, &q).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn kld_and_sim_ignore_prediction_scale((p, q) in positive_map(), a in 0.01f64..100.0) {
        prop_assume!(p.iter().sum::<f64>() > 1e-6);
        let scaled: Vec<f64> = p.iter().map(|v| v * a).collect();
        prop_assert!((kld(&scaled, &q).unwrap() - kld(&p, &q).unwrap()).abs() < 1e-9);
        prop_assert!((sim(&scaled, &q).unwrap() - sim(&p, &q).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn nss_ignores_positive_affine_maps((p, _q) in positive_map(), a in 0.1f64..10.0, b in -5.0f64..5.0, i in 0usize..64) {
        let fix = [i % p.len()];
        let base = nss(&p, &fix).unwrap();
        prop_assume!(!base.degenerate);
        let moved: Vec<f64> = p.iter().map(|v| a * v + b).collect();
        prop_assert!((nss(&moved, &fix).unwrap().value - base.value).abs() < 1e-8);
    }

    #[test]
    fn kld_zero_only_for_matching_distributions((p, q) in positive_map()) {
        let same: Vec<f64> = q.iter().map(|v| v * 3.0).collect();
        prop_assert!(kld(&same, &q).unwrap().abs() < 1e-9);
        let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
        let gap = p.iter().zip(&q).map(|(a, b)| (a / sp - b / sq).abs()).fold(0.0, f64::max);
        prop_assume!(sp > 0.0 && gap > 1e-3);
        prop_assert!(kld(&p, &q).unwrap() > 0.0);
    }

    #[test]
    fn aggregate_is_order_invariant(vals in prop::collection::vec((0usize..3, 0usize..3, 0.0f64..5.0), 1..20), seed in any::<u64>()) {
        let classes = ["sit", "ride", "cut"];
        let parts = ["hand", "feet", "back"];
        let rows: Vec<MetricRow> = vals
            .iter()
            .enumerate()
            .map(|(i, &(c, p, v))| row(classes[c], parts[p], &format!("p{i}"), v))
            .collect();
        let mut shuffled = rows.clone();
        SplitMix64::new(seed).shuffle(&mut shuffled);
        prop_assert_eq!(aggregate(&rows), aggregate(&shuffled));
    }
}
