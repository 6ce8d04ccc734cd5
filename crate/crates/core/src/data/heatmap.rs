//! Contact points to per-part Gaussian heatmaps.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gaussian kernel size for an `h×w` image: `sqrt(h² + w²) / 3`, rounded
/// down to the nearest odd integer, at least 3.
pub fn kernel_size(h: usize, w: usize) -> usize {
    let raw = ((h * h + w * w) as f64).sqrt() / 3.0;
    let mut k = raw.floor() as usize;
    if k % 2 == 0 {
        k = k.saturating_sub(1);
    }
    k.max(3)
}

/// Normalized 1-d Gaussian taps of odd length `k` with standard deviation `k/6`.
pub fn gaussian_taps(k: usize) -> Vec<f64> {
    let sigma = k as f64 / 6.0;
    let r = (k / 2) as f64;
    let taps: Vec<f64> = (0..k)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Blur the point mask with the size-dependent Gaussian (zero padding) and
/// min-max normalize to `[0, 1]`. `origin` names the record in errors.
///
/// Points are `(x, y)` pixel coordinates. No points gives an all-zero map.
pub fn points_to_heatmap(points: &[(usize, usize)], h: usize, w: usize, origin: &str) -> Result<Tensor> {
    if h == 0 || w == 0 {
        return Err(Error::Data(format!("{origin}: empty heatmap size {h}x{w}")));
    }
    if let Some(&(x, y)) = points.iter().find(|&&(x, y)| x >= w || y >= h) {
        return Err(Error::Data(format!(
            "{origin}: point ({x}, {y}) outside {w}x{h} image"
        )));
    }
    if points.is_empty() {
        return Ok(Tensor::zeros(&[h, w]));
    }
    let mut mask = vec![0.0; h * w];
    for &(x, y) in points {
        mask[y * w + x] = 1.0;
    }
    let taps = gaussian_taps(kernel_size(h, w));
    let r = (taps.len() / 2) as isize;

    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let v = mask[y * w + x];
            if v == 0.0 {
                continue;
            }
            for (t, tap) in taps.iter().enumerate() {
                let xx = x as isize + t as isize - r;
                if (0..w as isize).contains(&xx) {
                    rows[y * w + xx as usize] += v * tap;
                }
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (t, tap) in taps.iter().enumerate() {
            let yy = y as isize + t as isize - r;
            if !(0..h as isize).contains(&yy) {
                continue;
            }
            let src = &rows[yy as usize * w..(yy as usize + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += tap * s;
            }
        }
    }

    let (lo, hi) = out
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        for v in &mut out {
            *v = (*v - lo) / (hi - lo);
        }
    } else {
        out.fill(1.0);
    }
    Tensor::new(vec![h, w], out)
}
