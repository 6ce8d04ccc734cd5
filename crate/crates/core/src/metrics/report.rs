use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{binarize, kld, nss, pr_f_curve, sim};
use crate::data::{SamplePair, NUM_PARTS, PARTS};
use crate::deq::DeqTrace;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Group label for "every class" or "every part".
pub const ALL: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub fmeasure: f64,
}

/// Scores of one part channel of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub split: String,
    pub class: String,
    pub part: String,
    pub id: String,
    pub kld: f64,
    pub sim: f64,
    pub nss: f64,
    pub nss_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AggregateRow {
    pub split: String,
    pub class: String,
    pub part: String,
    pub count: usize,
    pub kld: f64,
    pub sim: f64,
    pub nss: f64,
}

/// Per-image scores averaged per (class, part), per class, per part and overall.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MetricReport {
    pub rows: Vec<AggregateRow>,
}

impl MetricReport {
    pub fn find(&self, split: &str, class: &str, part: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.split == split && r.class == class && r.part == part)
    }
}

/// Scores and curves of every active part of `pair`, for a `[7×H×W]`
/// non-interactive prediction at image resolution.
pub fn score_pair(split: &str, pair: &SamplePair, d_non: &Tensor) -> Result<(Vec<MetricRow>, Vec<Vec<CurvePoint>>)> {
    let (h, w) = pair.size();
    if d_non.shape() != [NUM_PARTS, h, w] {
        return Err(Error::shape("score_pair", d_non.shape(), &[NUM_PARTS, h, w]));
    }
    let plane = h * w;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for k in pair.active_parts() {
        let pred = &d_non.data()[k * plane..(k + 1) * plane];
        let gt = &pair.gt_non.data()[k * plane..(k + 1) * plane];
        let fix: Vec<usize> = pair.fix_non[k].iter().map(|&(x, y)| y * w + x).collect();
        let n = nss(pred, &fix)?;
        rows.push(MetricRow {
            split: split.to_string(),
            class: pair.affordance.clone(),
            part: PARTS[k].to_string(),
            id: pair.id.clone(),
            kld: kld(pred, gt)?,
            sim: sim(pred, gt)?,
            nss: n.value,
            nss_degenerate: n.degenerate,
        });
        curves.push(pr_f_curve(pred, &binarize(gt))?);
    }
    Ok((rows, curves))
}

fn row_key(r: &MetricRow) -> (&str, &str, &str, &str, u64, u64, u64) {
    (&r.split, &r.class, &r.part, &r.id, r.kld.to_bits(), r.sim.to_bits(), r.nss.to_bits())
}

/// Means over groups. Rows are put in a canonical order first, so any
/// permutation of `rows` gives a bit-identical report.
pub fn aggregate(rows: &[MetricRow]) -> MetricReport {
    let mut sorted: Vec<&MetricRow> = rows.iter().collect();
    sorted.sort_by(|a, b| row_key(a).cmp(&row_key(b)));
    let mut groups: BTreeMap<(String, String, String), (usize, [f64; 3])> = BTreeMap::new();
    for r in sorted {
        for (class, part) in [(&*r.class, &*r.part), (&*r.class, ALL), (ALL, &*r.part), (ALL, ALL)] {
            let e = groups
                .entry((r.split.clone(), class.to_string(), part.to_string()))
                .or_insert((0, [0.0; 3]));
            e.0 += 1;
            e.1[0] += r.kld;
            e.1[1] += r.sim;
            e.1[2] += r.nss;
        }
    }
    let rows = groups
        .into_iter()
        .map(|((split, class, part), (count, s))| {
            let n = count as f64;
            AggregateRow {
                split,
                class,
                part,
                count,
                kld: s[0] / n,
                sim: s[1] / n,
                nss: s[2] / n,
            }
        })
        .collect();
    MetricReport { rows }
}

fn to_csv<I, R>(header: &[&str], records: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Data(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(err)?;
    for r in records {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv encoding failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

/// `split,class,part,id,kld,sim,nss`
pub fn sample_csv(rows: &[MetricRow]) -> Result<String> {
    to_csv(
        &["split", "class", "part", "id", "kld", "sim", "nss"],
        rows.iter().map(|r| {
            [
                r.split.clone(),
                r.class.clone(),
                r.part.clone(),
                r.id.clone(),
                r.kld.to_string(),
                r.sim.to_string(),
                r.nss.to_string(),
            ]
        }),
    )
}

/// `split,class,part,kld,sim,nss`
pub fn report_csv(report: &MetricReport) -> Result<String> {
    to_csv(
        &["split", "class", "part", "kld", "sim", "nss"],
        report.rows.iter().map(|r| {
            [
                r.split.clone(),
                r.class.clone(),
                r.part.clone(),
                r.kld.to_string(),
                r.sim.to_string(),
                r.nss.to_string(),
            ]
        }),
    )
}

/// Precision and recall averaged per threshold over maps; the F-measure is
/// taken of the averages.
pub fn mean_curve(curves: &[Vec<CurvePoint>]) -> Result<Vec<CurvePoint>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::UndefinedMetric("mean_curve: no curves".into()))?;
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::Data("mean_curve: curves have different threshold counts".into()));
    }
    let n = curves.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let precision = curves.iter().map(|c| c[i].precision).sum::<f64>() / n;
            let recall = curves.iter().map(|c| c[i].recall).sum::<f64>() / n;
            CurvePoint {
                threshold: first[i].threshold,
                precision,
                recall,
                fmeasure: super::f_measure(precision, recall),
            }
        })
        .collect())
}

/// `threshold,precision,recall,fmeasure`
pub fn curves_csv(curve: &[CurvePoint]) -> Result<String> {
    to_csv(
        &["threshold", "precision", "recall", "fmeasure"],
        curve.iter().map(|p| {
            [
                p.threshold.to_string(),
                p.precision.to_string(),
                p.recall.to_string(),
                p.fmeasure.to_string(),
            ]
        }),
    )
}

const PANEL: f64 = 320.0;
const MARGIN: f64 = 40.0;

fn panel(svg: &mut String, x0: f64, title: &str, xlabel: &str, ylabel: &str, pts: impl Iterator<Item = (f64, f64)>) {
    let px = |v: f64| x0 + MARGIN + v.clamp(0.0, 1.0) * PANEL;
    let py = |v: f64| MARGIN + (1.0 - v.clamp(0.0, 1.0)) * PANEL;
    let _ = writeln!(
        svg,
        r#"<rect x="{}" y="{MARGIN}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#,
        x0 + MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{title}</text>"#,
        x0 + MARGIN + PANEL / 2.0,
        MARGIN - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{xlabel}</text>"#,
        x0 + MARGIN + PANEL / 2.0,
        MARGIN + PANEL + 28.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 {} {})">{ylabel}</text>"#,
        x0 + 14.0,
        MARGIN + PANEL / 2.0,
        x0 + 14.0,
        MARGIN + PANEL / 2.0
    );
    let points: Vec<String> = pts.map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    );
}

/// F-measure over thresholds on the left, precision over recall on the right.
pub fn curves_svg(curve: &[CurvePoint]) -> String {
    let width = 2.0 * (PANEL + 2.0 * MARGIN);
    let height = PANEL + 2.0 * MARGIN + 10.0;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    svg.push('\n');
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(&mut svg, 0.0, "F-measure", "threshold", "F", curve.iter().map(|p| (p.threshold, p.fmeasure)));
    panel(
        &mut svg,
        PANEL + 2.0 * MARGIN,
        "Precision-recall",
        "recall",
        "precision",
        curve.iter().map(|p| (p.recall, p.precision)),
    );
    svg.push_str("</svg>\n");
    svg
}

/// Count of solves per iteration count, ascending.
pub fn iteration_histogram<'a>(traces: impl IntoIterator<Item = &'a DeqTrace>) -> Vec<(usize, usize)> {
    let mut h = BTreeMap::new();
    for t in traces {
        *h.entry(t.iterations).or_insert(0) += 1;
    }
    h.into_iter().collect()
}

/// `iterations,count`
pub fn iteration_histogram_csv(hist: &[(usize, usize)]) -> Result<String> {
    to_csv(&["iterations", "count"], hist.iter().map(|(i, c)| [i.to_string(), c.to_string()]))
}
