use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::sim::{class_rank, TransmissionRecord};

/// Eq.-2 style top-n accuracy: the fraction of images whose true class is
/// among the `n` most probable, ties at the cut broken toward lower class
/// indices.
pub fn top_n_accuracy(
    predictions: &[Vec<f64>],
    ground_truths: &[usize],
    n: usize,
) -> Result<f64, EvalError> {
    if predictions.len() != ground_truths.len() {
        return Err(EvalError::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            ground_truths.len()
        )));
    }
    if n == 0 {
        return Err(EvalError::Input("n must be at least 1".into()));
    }
    if predictions.is_empty() {
        return Err(EvalError::Input("no predictions".into()));
    }
    let mut hits = 0usize;
    for (i, (p, &gt)) in predictions.iter().zip(ground_truths).enumerate() {
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(EvalError::Input(format!("prediction {i} sums to {total}")));
        }
        if gt >= p.len() {
            return Err(EvalError::Input(format!(
                "label {gt} of image {i} is out of range"
            )));
        }
        if class_rank(p, gt) <= n {
            hits += 1;
        }
    }
    Ok(hits as f64 / predictions.len() as f64)
}

/// Aggregate of one simulated condition, recomputable from its records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub condition: String,
    pub images: usize,
    pub errors: usize,
    pub accuracy: f64,
    pub fully_offloaded_fraction: f64,
    /// Delivered image bytes per second of schedule (`n * T`).
    pub throughput: f64,
    /// Mean of `b(t)` over the transmission windows.
    pub offered_rate: f64,
    pub mean_channels: f64,
}

impl MetricsReport {
    /// Error rows count against accuracy and full offloading.
    pub fn from_records(condition: impl Into<String>, records: &[TransmissionRecord]) -> Self {
        let n = records.len();
        let denom = n.max(1) as f64;
        let span: f64 = records.iter().map(|r| r.period).sum();
        let ok: Vec<&TransmissionRecord> = records.iter().filter(|r| r.error.is_empty()).collect();
        let rate = |bytes: f64| if span > 0.0 { bytes / span } else { 0.0 };
        Self {
            condition: condition.into(),
            images: n,
            errors: n - ok.len(),
            accuracy: ok.iter().filter(|r| r.correct).count() as f64 / denom,
            fully_offloaded_fraction: ok.iter().filter(|r| r.fully_offloaded).count() as f64
                / denom,
            throughput: rate(records.iter().map(|r| r.payload_bytes as f64).sum()),
            offered_rate: rate(records.iter().map(|r| r.budget_bytes).sum()),
            mean_channels: if ok.is_empty() {
                0.0
            } else {
                ok.iter().map(|r| r.channels_used as f64).sum::<f64>() / ok.len() as f64
            },
        }
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}
