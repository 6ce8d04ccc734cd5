//! Heatmap evaluation: distribution metrics (KLD, SIM, NSS), precision,
//! recall and F-measure curves, and their aggregation into reports.

mod report;
#[cfg(test)]
mod tests;

pub use report::{
    aggregate, curves_csv, curves_svg, iteration_histogram, iteration_histogram_csv, mean_curve, report_csv,
    sample_csv, score_pair, AggregateRow, CurvePoint, MetricReport, MetricRow, ALL,
};

use crate::error::{Error, Result};

pub const EPS: f64 = 1e-12;
/// Weight of precision in the F-measure.
pub const BETA2: f64 = 0.3;
/// Ground-truth heatmaps are binarized at this value for PR/F curves.
pub const GT_THRESHOLD: f64 = 0.5;
pub const NUM_THRESHOLDS: usize = 255;

/// Curve thresholds `k/255` for `k = 1..=255`; a pixel is predicted positive
/// when its value is strictly greater than the threshold.
pub fn thresholds() -> Vec<f64> {
    (1..=NUM_THRESHOLDS).map(|k| k as f64 / NUM_THRESHOLDS as f64).collect()
}

fn check_pair(op: &str, pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Data(format!("{op}: prediction has {} values, ground truth {}", pred.len(), gt.len())));
    }
    if let Some(v) = pred.iter().chain(gt).find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Data(format!("{op}: maps must be finite and non-negative, found {v}")));
    }
    if gt.iter().sum::<f64>() <= 0.0 {
        return Err(Error::UndefinedMetric(format!("{op}: ground truth is all zero")));
    }
    Ok(())
}

/// Scale to unit sum; an all-zero map stays zero.
fn normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter().map(|x| x / s).collect()
    } else {
        v.to_vec()
    }
}

/// `KL(gt ‖ pred)` between the maps normalized to unit sum.
pub fn kld(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair("kld", pred, gt)?;
    let p = normalize(pred);
    let q = normalize(gt);
    Ok(q.iter().zip(&p).map(|(&q, &p)| q * (EPS + q / (p + EPS)).ln()).sum())
}

/// Histogram intersection of the maps normalized to unit sum.
pub fn sim(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair("sim", pred, gt)?;
    let p = normalize(pred);
    let q = normalize(gt);
    Ok(p.iter().zip(&q).map(|(a, b)| a.min(*b)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nss {
    pub value: f64,
    /// The prediction was constant, so the value is 0 by convention.
    pub degenerate: bool,
}

/// Mean of the standardized prediction (population standard deviation) at
/// the fixation indices.
pub fn nss(pred: &[f64], fixations: &[usize]) -> Result<Nss> {
    if fixations.is_empty() {
        return Err(Error::UndefinedMetric("nss: no fixations".into()));
    }
    if let Some(i) = fixations.iter().find(|&&i| i >= pred.len()) {
        return Err(Error::Data(format!("nss: fixation {i} outside a map of {} pixels", pred.len())));
    }
    if let Some(v) = pred.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("nss: non-finite prediction value {v}")));
    }
    let n = pred.len() as f64;
    let mean = pred.iter().sum::<f64>() / n;
    let std = (pred.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std == 0.0 || pred.iter().all(|&v| v == pred[0]) {
        return Ok(Nss { value: 0.0, degenerate: true });
    }
    let value = fixations.iter().map(|&i| (pred[i] - mean) / std).sum::<f64>() / fixations.len() as f64;
    Ok(Nss { value, degenerate: false })
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    let den = BETA2 * precision + recall;
    if den > 0.0 {
        (1.0 + BETA2) * precision * recall / den
    } else {
        0.0
    }
}

/// Precision, recall and F-measure at every threshold. An empty prediction
/// has precision 1 and recall 0.
pub fn pr_f_curve(pred: &[f64], gt: &[bool]) -> Result<Vec<CurvePoint>> {
    if pred.len() != gt.len() {
        return Err(Error::Data(format!("pr_f_curve: prediction has {} values, ground truth {}", pred.len(), gt.len())));
    }
    if let Some(v) = pred.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
        return Err(Error::Data(format!("pr_f_curve: prediction values must lie in [0, 1], found {v}")));
    }
    let positives = gt.iter().filter(|&&b| b).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("pr_f_curve: ground truth has no positive pixel".into()));
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]));
    // hits[m] = true positives among the m highest predictions
    let mut hits = Vec::with_capacity(order.len() + 1);
    hits.push(0usize);
    for &i in &order {
        hits.push(hits.last().unwrap() + gt[i] as usize);
    }
    Ok(thresholds()
        .into_iter()
        .map(|t| {
            let m = order.partition_point(|&i| pred[i] > t);
            let tp = hits[m] as f64;
            let precision = if m == 0 { 1.0 } else { tp / m as f64 };
            let recall = tp / positives as f64;
            CurvePoint {
                threshold: t,
                precision,
                recall,
                fmeasure: f_measure(precision, recall),
            }
        })
        .collect())
}

pub fn binarize(gt: &[f64]) -> Vec<bool> {
    gt.iter().map(|&v| v >= GT_THRESHOLD).collect()
}
