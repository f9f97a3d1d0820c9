//! Surprisal-burstiness detector.
//!
//! Poisoned responses carry short bursts of improbable tokens where
//! foreign material was spliced in. The detector smooths each per-token
//! surprisal trace with a centered moving average and flags a sample
//! when any smoothed value exceeds a threshold. The threshold is
//! calibrated on clean traces to hit a target false-positive rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::SurprisalTrace;

pub const DEFAULT_KERNEL: usize = 5;
pub const MIN_CALIBRATION_TRACES: usize = 20;

/// Centered moving average, valid mode: output length is
/// `len − kernel + 1` (empty when the kernel does not fit). The kernel
/// must be odd so each output value sits on a real token position.
pub fn smooth(values: &[f64], kernel: usize) -> Result<Vec<f64>> {
    if kernel % 2 == 0 {
        return Err(Error::EvenKernel { kernel });
    }
    if kernel > values.len() {
        return Ok(Vec::new());
    }
    let inv = 1.0 / kernel as f64;
    let mut out = Vec::with_capacity(values.len() - kernel + 1);
    let mut window: f64 = values[..kernel].iter().sum();
    out.push(window * inv);
    for i in kernel..values.len() {
        window += values[i] - values[i - kernel];
        out.push(window * inv);
    }
    Ok(out)
}

/// Per-trace detection statistic: the maximum smoothed surprisal, or
/// `None` when the trace is shorter than the kernel (such a trace can
/// never be flagged).
pub fn trace_statistic(values: &[f64], kernel: usize) -> Result<Option<f64>> {
    let smoothed = smooth(values, kernel)?;
    Ok(smoothed.into_iter().fold(None, |acc: Option<f64>, v| {
        Some(match acc {
            Some(m) if m >= v => m,
            _ => v,
        })
    }))
}

/// A sample is flagged when its statistic strictly exceeds the
/// threshold.
pub fn flags(values: &[f64], kernel: usize, threshold: f64) -> Result<bool> {
    Ok(matches!(trace_statistic(values, kernel)?, Some(s) if s > threshold))
}

/// One scored trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub sample_id: String,
    /// Maximum smoothed surprisal; absent when the trace is too short.
    pub statistic: Option<f64>,
    pub flagged: bool,
}

/// Score a batch of traces against a fixed threshold.
pub fn score_traces(
    traces: &[SurprisalTrace],
    kernel: usize,
    threshold: f64,
) -> Result<Vec<DetectionOutcome>> {
    traces
        .iter()
        .map(|t| {
            let statistic = trace_statistic(&t.surprisal, kernel)?;
            Ok(DetectionOutcome {
                sample_id: t.sample_id.clone(),
                statistic,
                flagged: matches!(statistic, Some(s) if s > threshold),
            })
        })
        .collect()
}

/// Pick the threshold from clean-trace statistics so that the observed
/// false-positive rate lands at the target.
///
/// With the `n` statistics sorted ascending, the threshold is the value
/// at index `n − 1 − floor(target_fpr · n)`; exactly
/// `floor(target_fpr · n)` statistics lie strictly above it when values
/// are distinct, so the observed rate is within `1/n` of the target.
/// A target high enough to push the index below zero yields negative
/// infinity (everything with a statistic gets flagged).
pub fn calibrate_threshold(clean_statistics: &[f64], target_fpr: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target_fpr) {
        return Err(Error::InvalidConfig {
            reason: format!("target false-positive rate {} outside [0, 1]", target_fpr),
        });
    }
    let n = clean_statistics.len();
    if n < MIN_CALIBRATION_TRACES {
        return Err(Error::TooFewTraces { got: n, need: MIN_CALIBRATION_TRACES });
    }
    let mut sorted = clean_statistics.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN statistics"));
    let allowed = (target_fpr * n as f64).floor() as usize;
    if allowed >= n {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(sorted[n - 1 - allowed])
}

/// Confusion counts and derived rates, as percentages. "Positive"
/// means poisoned. Zero-denominator rates are reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
    pub precision_pct: f64,
    pub recall_pct: f64,
    pub accuracy_pct: f64,
    pub false_positive_rate_pct: f64,
    pub f1_pct: f64,
}

fn pct(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        100.0 * num / den
    }
}

/// Build the report from `(flagged, is_poisoned)` pairs.
pub fn evaluate(outcomes: &[(bool, bool)]) -> DetectionReport {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fne = 0u64;
    let mut tn = 0u64;
    for &(flagged, poisoned) in outcomes {
        match (flagged, poisoned) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => tn += 1,
        }
    }
    let (tpf, fpf, fnf, tnf) = (tp as f64, fp as f64, fne as f64, tn as f64);
    let precision = pct(tpf, tpf + fpf);
    let recall = pct(tpf, tpf + fnf);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    DetectionReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fne,
        true_negatives: tn,
        precision_pct: precision,
        recall_pct: recall,
        accuracy_pct: pct(tpf + tnf, tpf + fpf + fnf + tnf),
        false_positive_rate_pct: pct(fpf, fpf + tnf),
        f1_pct: f1,
    }
}
