//! Pixel-level localization metrics: confusion counts, precision/recall,
//! IoU, F1, and the complement-max F1 used when a prediction separates the
//! regions with flipped labels.
//!
//! Conventions for degenerate counts: any 0/0 ratio scores 0, except the
//! all-correct-pristine case (tp = fp = fn = 0, tn = N) where IoU and F1
//! score 1 so a correct "nothing forged" call is rewarded.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ImageTensor, MaskTensor, ProbMap};
use crate::error::{Error, Result};
use crate::scalar::{sc, Scalar};

/// Reduce a decoded 3-channel image to one probability per pixel.
pub fn channel_mean<T: Scalar>(img: &ImageTensor<T>) -> ProbMap<T> {
    let third = sc::<T>(1.0 / 3.0);
    ProbMap {
        height: img.height,
        width: img.width,
        data: img
            .data
            .chunks_exact(3)
            .map(|px| (px[0] + px[1] + px[2]) * third)
            .collect(),
    }
}

/// Strictly-greater threshold: exactly 0.5 maps to 0.
pub fn binarize<T: Scalar>(prob: &ProbMap<T>, threshold: f64) -> MaskTensor {
    let t = sc::<T>(threshold);
    MaskTensor {
        height: prob.height,
        width: prob.width,
        data: prob.data.iter().map(|&v| u8::from(v > t)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(truth: &MaskTensor, pred: &MaskTensor) -> Result<ConfusionCounts> {
    if truth.height != pred.height || truth.width != pred.width {
        return Err(Error::ShapeError(format!(
            "confusion shapes {}x{} vs {}x{}",
            truth.height, truth.width, pred.height, pred.width
        )));
    }
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (&t, &p) in truth.data.iter().zip(&pred.data) {
        match (t > 0, p > 0) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn scores(c: &ConfusionCounts) -> Scores {
    let pristine_perfect = c.tp == 0 && c.fp == 0 && c.fn_ == 0;
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let iou = if pristine_perfect {
        1.0
    } else {
        ratio(c.tp, c.tp + c.fp + c.fn_)
    };
    let f1 = if pristine_perfect {
        1.0
    } else if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Scores {
        precision,
        recall,
        iou,
        f1,
    }
}

/// Max of F1 on the prediction and on its complement.
pub fn complement_f1(truth: &MaskTensor, pred: &MaskTensor) -> Result<f64> {
    let direct = scores(&confusion(truth, pred)?).f1;
    let flipped = scores(&confusion(truth, &pred.complement())?).f1;
    Ok(direct.max(flipped))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRecord {
    pub image_id: String,
    pub perturbation: String,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub f1: f64,
    pub f1_complement_max: f64,
}

/// Score one prediction against ground truth at the fixed 0.5 threshold.
pub fn evaluate_prediction<T: Scalar>(
    truth: &MaskTensor,
    prob: &ProbMap<T>,
    image_id: &str,
    perturbation: &str,
) -> Result<MetricRecord> {
    let pred = binarize(prob, 0.5);
    let s = scores(&confusion(truth, &pred)?);
    let cf1 = complement_f1(truth, &pred)?;
    Ok(MetricRecord {
        image_id: image_id.to_string(),
        perturbation: perturbation.to_string(),
        precision: s.precision,
        recall: s.recall,
        iou: s.iou,
        f1: s.f1,
        f1_complement_max: cf1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub count: usize,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub f1: f64,
    pub f1_complement_max: f64,
}

/// Unweighted per-image means, grouped by perturbation tag. Records are
/// sorted by image id within each group before reduction so the result
/// does not depend on arrival order.
pub fn aggregate(records: &[MetricRecord]) -> Result<BTreeMap<String, SummaryRow>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no metric records to aggregate".into()));
    }
    let mut groups: BTreeMap<String, Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.perturbation.clone()).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (tag, mut rows) in groups {
        rows.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let n = rows.len() as f64;
        let mut acc = SummaryRow {
            count: rows.len(),
            precision: 0.0,
            recall: 0.0,
            iou: 0.0,
            f1: 0.0,
            f1_complement_max: 0.0,
        };
        for r in rows {
            acc.precision += r.precision / n;
            acc.recall += r.recall / n;
            acc.iou += r.iou / n;
            acc.f1 += r.f1 / n;
            acc.f1_complement_max += r.f1_complement_max / n;
        }
        out.insert(tag, acc);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub per_image: Vec<MetricRecord>,
    pub summary: BTreeMap<String, SummaryRow>,
}

impl EvalReport {
    pub fn build(config_hash: &str, mut per_image: Vec<MetricRecord>) -> Result<Self> {
        per_image.sort_by(|a, b| {
            a.perturbation
                .cmp(&b.perturbation)
                .then(a.image_id.cmp(&b.image_id))
        });
        let summary = aggregate(&per_image)?;
        Ok(Self {
            config_hash: config_hash.to_string(),
            per_image,
            summary,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(
            f,
            "image_id,perturbation,precision,recall,iou,f1,f1_complement_max"
        )?;
        for r in &self.per_image {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                r.image_id, r.perturbation, r.precision, r.recall, r.iou, r.f1, r.f1_complement_max
            )?;
        }
        Ok(())
    }
}
