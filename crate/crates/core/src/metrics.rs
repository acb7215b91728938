//! Evaluation metrics: streaming-vs-offline accuracy ratio, expected
//! calibration error, top-k accuracy, confusion matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs to [`omega_all`]: matched per-testing-event accuracy lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmegaInputs {
    pub streaming: Vec<f64>,
    pub offline: Vec<f64>,
}

/// `(1/T) * sum_t streaming_t / offline_t`. May exceed 1.
pub fn omega_all(inputs: &OmegaInputs) -> Result<f64> {
    let t = inputs.streaming.len();
    if t == 0 || t != inputs.offline.len() {
        return Err(Error::Input(format!(
            "omega_all needs matched nonempty lists, got {} vs {}",
            t,
            inputs.offline.len()
        )));
    }
    let mut acc = 0.0;
    for (a, off) in inputs.streaming.iter().zip(inputs.offline.iter()) {
        if *off <= 0.0 {
            return Err(Error::Input(format!("offline accuracy must be > 0, got {off}")));
        }
        acc += a / off;
    }
    Ok(acc / t as f64)
}

/// One scored prediction for calibration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Prediction {
    pub predicted: u32,
    pub confidence: f64,
    pub label: u32,
}

/// Expected calibration error over uniform confidence bins.
///
/// Bins are half-open `[lo, hi)` with a closed top bin, so confidence 1.0
/// lands in bin `n_bins - 1` and an interior boundary lands in the upper
/// bin. Empty bins contribute 0.
pub fn ece(predictions: &[Prediction], n_bins: usize) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Input("ece needs at least one prediction".into()));
    }
    if n_bins == 0 {
        return Err(Error::Input("ece needs at least one bin".into()));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0f64; n_bins];
    let mut correct = vec![0usize; n_bins];
    for p in predictions {
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(Error::Input(format!(
                "confidence must be in [0, 1], got {}",
                p.confidence
            )));
        }
        let bin = ((p.confidence * n_bins as f64) as usize).min(n_bins - 1);
        count[bin] += 1;
        conf_sum[bin] += p.confidence;
        if p.predicted == p.label {
            correct[bin] += 1;
        }
    }
    let n = predictions.len() as f64;
    let mut total = 0.0;
    for b in 0..n_bins {
        if count[b] == 0 {
            continue;
        }
        let acc = correct[b] as f64 / count[b] as f64;
        let conf = conf_sum[b] / count[b] as f64;
        total += count[b] as f64 / n * (acc - conf).abs();
    }
    Ok(total)
}

/// Fraction of rows whose label is among the k largest logits.
pub fn topk_accuracy(logit_rows: &[Vec<f64>], labels: &[u32], k: usize) -> Result<f64> {
    if logit_rows.is_empty() || logit_rows.len() != labels.len() {
        return Err(Error::Input(format!(
            "topk_accuracy needs matched nonempty inputs, got {} rows / {} labels",
            logit_rows.len(),
            labels.len()
        )));
    }
    let width = logit_rows[0].len();
    if k == 0 || k > width {
        return Err(Error::Input(format!("k must be in 1..={width}, got {k}")));
    }
    let mut hits = 0usize;
    for (row, &label) in logit_rows.iter().zip(labels.iter()) {
        if row.len() != width {
            return Err(Error::Input("ragged logit rows".into()));
        }
        let target = row
            .get(label as usize)
            .ok_or_else(|| Error::Input(format!("label {label} out of range for K={width}")))?;
        // rank of the label's logit; ties resolved in the label's favor to
        // match a stable sort by descending value
        let above = row.iter().filter(|v| **v > *target).count();
        if above < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// K x K matrix; row = true class, column = predicted class.
pub fn confusion(preds: &[u32], labels: &[u32], k: usize) -> Result<Vec<Vec<usize>>> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Input("confusion needs matched nonempty inputs".into()));
    }
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &l) in preds.iter().zip(labels.iter()) {
        if p as usize >= k || l as usize >= k {
            return Err(Error::Input(format!("class out of range: pred {p}, label {l}, K {k}")));
        }
        m[l as usize][p as usize] += 1;
    }
    Ok(m)
}
