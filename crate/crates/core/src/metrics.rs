//! Confusion counts, per-class precision/recall/F1, and macro-F1.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_positive: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(labels: &[u8], predictions: &[u8]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&y, &p) in labels.iter().zip(predictions.iter()) {
            match (y, p) {
                (0, 0) => c.true_negative += 1,
                (0, 1) => c.false_positive += 1,
                (1, 0) => c.false_negative += 1,
                (1, 1) => c.true_positive += 1,
                _ => {}
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Evaluation summary. `macro_f1_std` is populated by multi-seed
/// aggregation (population standard deviation) and 0 for single runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: [ClassScores; 2],
    pub macro_f1: f64,
    pub macro_f1_std: f64,
    pub confusion: ConfusionCounts,
    pub config_fingerprint: String,
    pub wall_seconds: f64,
    pub warnings: Vec<String>,
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn class_scores(tp: usize, fp: usize, fn_: usize) -> ClassScores {
    let precision = safe_div(tp as f64, (tp + fp) as f64);
    let recall = safe_div(tp as f64, (tp + fn_) as f64);
    let f1 = safe_div(2.0 * recall * precision, recall + precision);
    ClassScores {
        precision,
        recall,
        f1,
    }
}

/// Per-class F1 from confusion counts; macro-F1 is the unweighted mean.
/// A class absent from the data (and never predicted) scores 0.
pub fn report_from_confusion(c: ConfusionCounts, fingerprint: &str) -> MetricsReport {
    let class0 = class_scores(c.true_negative, c.false_negative, c.false_positive);
    let class1 = class_scores(c.true_positive, c.false_positive, c.false_negative);
    MetricsReport {
        per_class: [class0, class1],
        macro_f1: (class0.f1 + class1.f1) / 2.0,
        macro_f1_std: 0.0,
        confusion: c,
        config_fingerprint: fingerprint.to_string(),
        wall_seconds: 0.0,
        warnings: Vec::new(),
    }
}

pub fn report_from_predictions(labels: &[u8], predictions: &[u8], fingerprint: &str) -> MetricsReport {
    report_from_confusion(ConfusionCounts::from_predictions(labels, predictions), fingerprint)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
