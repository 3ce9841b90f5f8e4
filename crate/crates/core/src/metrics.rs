//! Saliency evaluation: mean absolute error, threshold-swept
//! precision/recall, the beta-weighted F-measure, and report export.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::GrayRaster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    /// Average per-image precision/recall at each threshold (with a
    /// zero-denominator guard), then combine.
    #[serde(rename = "per-image-mean")]
    PerImageMean,
    /// Sum confusion counts over the whole set per threshold.
    #[serde(rename = "pooled")]
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub beta_squared: f64,
    pub thresholds: Vec<u8>,
    pub aggregation: Aggregation,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            beta_squared: 0.3,
            thresholds: (0..=255).collect(),
            aggregation: Aggregation::PerImageMean,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta_squared <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "beta_squared must be positive, got {}",
                self.beta_squared
            )));
        }
        if self.thresholds.is_empty() {
            return Err(Error::InvalidArgument("empty threshold list".into()));
        }
        if !self.thresholds.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "thresholds must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: u8,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub mae: f64,
    pub pr_points: Vec<PrPoint>,
    pub max_f: f64,
    pub argmax_threshold: u8,
    pub image_count: usize,
    pub aggregation: Aggregation,
}

/// Mean absolute per-pixel difference of two 8-bit maps rescaled to
/// [0, 1].
pub fn mae(pred: &GrayRaster, gt: &GrayRaster) -> Result<f64> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::shape_mismatch(
            "mae",
            format!("{}x{}", pred.width, pred.height),
            format!("{}x{}", gt.width, gt.height),
        ));
    }
    let mut acc = 0.0;
    for (&p, &g) in pred.pixels.iter().zip(&gt.pixels) {
        acc += (p as f64 / 255.0 - g as f64 / 255.0).abs();
    }
    Ok(acc / pred.pixels.len() as f64)
}

/// Binary map by strict comparison: pixel set iff value > threshold.
pub fn binarize(map: &GrayRaster, threshold: u8) -> Vec<bool> {
    map.pixels.iter().map(|&v| v > threshold).collect()
}

/// The precision/recall combination (1+b2)PR / (b2 P + R), zero when the
/// denominator vanishes.
pub fn f_measure(precision: f64, recall: f64, beta_squared: f64) -> f64 {
    let denom = beta_squared * precision + recall;
    if denom == 0.0 {
        return 0.0;
    }
    (1.0 + beta_squared) * precision * recall / denom
}

/// Per-threshold confusion counts of one prediction/ground-truth pair,
/// for every threshold 0..=255 (suffix sums of the value histogram).
struct Confusion {
    /// tp[t], fp[t]: counts at threshold t
    tp: [u64; 256],
    fp: [u64; 256],
    positives: u64,
}

fn confusion(pred: &GrayRaster, gt: &GrayRaster) -> Confusion {
    let mut hist_pos = [0u64; 256];
    let mut hist_neg = [0u64; 256];
    let mut positives = 0u64;
    for (&p, &g) in pred.pixels.iter().zip(&gt.pixels) {
        if g > 127 {
            hist_pos[p as usize] += 1;
            positives += 1;
        } else {
            hist_neg[p as usize] += 1;
        }
    }
    // predicted positive at threshold t means value > t
    let mut tp = [0u64; 256];
    let mut fp = [0u64; 256];
    let mut acc_p = 0u64;
    let mut acc_n = 0u64;
    for t in (0..256).rev() {
        if t < 255 {
            acc_p += hist_pos[t + 1];
            acc_n += hist_neg[t + 1];
        }
        tp[t] = acc_p;
        fp[t] = acc_n;
    }
    Confusion { tp, fp, positives }
}

/// Precision with the zero-denominator guard: when nothing is predicted
/// positive, precision is 1 for an empty ground truth and 0 otherwise.
fn guarded_precision(tp: u64, fp: u64, positives: u64) -> f64 {
    if tp + fp == 0 {
        return if positives == 0 { 1.0 } else { 0.0 };
    }
    tp as f64 / (tp + fp) as f64
}

/// Recall is vacuously 1 for an empty ground truth.
fn guarded_recall(tp: u64, positives: u64) -> f64 {
    if positives == 0 {
        return 1.0;
    }
    tp as f64 / positives as f64
}

/// Sweep thresholds over paired prediction/ground-truth sets.
pub fn evaluate(
    preds: &[GrayRaster],
    gts: &[GrayRaster],
    config: &MetricConfig,
) -> Result<EvalReport> {
    config.validate()?;
    if preds.is_empty() {
        return Err(Error::Data("evaluate: empty prediction set".into()));
    }
    if preds.len() != gts.len() {
        return Err(Error::Data(format!(
            "evaluate: {} predictions but {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let mut mae_sum = 0.0;
    let mut confusions = Vec::with_capacity(preds.len());
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        if (p.width, p.height) != (g.width, g.height) {
            return Err(Error::Data(format!(
                "evaluate: pair {i} extents differ: {}x{} vs {}x{}",
                p.width, p.height, g.width, g.height
            )));
        }
        mae_sum += mae(p, g)?;
        confusions.push(confusion(p, g));
    }

    let mut pr_points = Vec::with_capacity(config.thresholds.len());
    for &t in &config.thresholds {
        let ti = t as usize;
        let (precision, recall) = match config.aggregation {
            Aggregation::PerImageMean => {
                let mut psum = 0.0;
                let mut rsum = 0.0;
                for c in &confusions {
                    psum += guarded_precision(c.tp[ti], c.fp[ti], c.positives);
                    rsum += guarded_recall(c.tp[ti], c.positives);
                }
                (psum / confusions.len() as f64, rsum / confusions.len() as f64)
            }
            Aggregation::Pooled => {
                let tp: u64 = confusions.iter().map(|c| c.tp[ti]).sum();
                let fp: u64 = confusions.iter().map(|c| c.fp[ti]).sum();
                let pos: u64 = confusions.iter().map(|c| c.positives).sum();
                (guarded_precision(tp, fp, pos), guarded_recall(tp, pos))
            }
        };
        pr_points.push(PrPoint {
            threshold: t,
            precision,
            recall,
            f: f_measure(precision, recall, config.beta_squared),
        });
    }

    let (mut max_f, mut argmax) = (f64::NEG_INFINITY, 0u8);
    for p in &pr_points {
        if p.f > max_f {
            max_f = p.f;
            argmax = p.threshold;
        }
    }
    Ok(EvalReport {
        mae: mae_sum / preds.len() as f64,
        pr_points,
        max_f,
        argmax_threshold: argmax,
        image_count: preds.len(),
        aggregation: config.aggregation,
    })
}

/// Per-threshold CSV: threshold,precision,recall,f.
pub fn write_report_csv<W: std::io::Write>(out: W, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "precision", "recall", "f"])
        .map_err(|e| Error::Data(format!("report write: {e}")))?;
    for p in &report.pr_points {
        w.write_record(&[
            p.threshold.to_string(),
            p.precision.to_string(),
            p.recall.to_string(),
            p.f.to_string(),
        ])
        .map_err(|e| Error::Data(format!("report write: {e}")))?;
    }
    w.flush().map_err(|e| Error::Data(format!("report flush: {e}")))?;
    Ok(())
}

/// One summary row: dataset,image_count,mae,max_f,argmax_threshold.
pub fn write_summary_csv<W: std::io::Write>(
    out: W,
    dataset: &str,
    report: &EvalReport,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "image_count", "mae", "max_f", "argmax_threshold"])
        .map_err(|e| Error::Data(format!("summary write: {e}")))?;
    w.write_record(&[
        dataset.to_string(),
        report.image_count.to_string(),
        report.mae.to_string(),
        report.max_f.to_string(),
        report.argmax_threshold.to_string(),
    ])
    .map_err(|e| Error::Data(format!("summary write: {e}")))?;
    w.flush().map_err(|e| Error::Data(format!("summary flush: {e}")))?;
    Ok(())
}

/// Read back a per-threshold report CSV as (threshold, precision,
/// recall, f) rows.
pub fn read_report_csv(path: &std::path::Path) -> Result<Vec<PrPoint>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::format(path, format!("open: {e}")),
        _ => Error::format(path, e.to_string()),
    })?;
    let mut points = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        if row.len() != 4 {
            return Err(Error::format(path, "report rows need 4 columns"));
        }
        let parse = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|e| Error::format(path, format!("column {i}: {e}")))
        };
        points.push(PrPoint {
            threshold: parse(0)? as u8,
            precision: parse(1)?,
            recall: parse(2)?,
            f: parse(3)?,
        });
    }
    Ok(points)
}
