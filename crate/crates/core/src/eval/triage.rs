//! Slide-level positive/negative calls and their confusion metrics.

use serde::{Deserialize, Serialize};

use crate::detection::Detection;
use crate::error::{check_range, Error, Result};

pub const DEFAULT_TAU: f64 = 0.5;

/// A slide is positive when any positive-class detection scores at least `tau`.
pub fn triage(dets: &[Detection], tau: f64) -> Result<bool> {
    check_range("tau", tau, 0.0, 1.0)?;
    Ok(dets
        .iter()
        .any(|d| d.category.is_positive() && d.final_score >= tau))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub total: usize,
    pub accuracy: f64,
    /// `None` when there are no positive slides.
    pub sensitivity: Option<f64>,
    /// `None` when there are no negative slides.
    pub specificity: Option<f64>,
    pub accuracy_pct: f64,
    pub sensitivity_pct: Option<f64>,
    pub specificity_pct: Option<f64>,
}

/// Rounds a fraction to a percentage with one decimal.
pub fn percent_1dp(fraction: f64) -> f64 {
    (fraction * 1000.0).round() / 10.0
}

impl TriageMetrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<TriageMetrics> {
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(Error::Contract(
                "triage metrics need at least one slide".into(),
            ));
        }
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let accuracy = (tp + tn) as f64 / total as f64;
        let sensitivity = ratio(tp, tp + fn_);
        let specificity = ratio(tn, tn + fp);
        Ok(TriageMetrics {
            tp,
            fp,
            tn,
            fn_,
            total,
            accuracy,
            sensitivity,
            specificity,
            accuracy_pct: percent_1dp(accuracy),
            sensitivity_pct: sensitivity.map(percent_1dp),
            specificity_pct: specificity.map(percent_1dp),
        })
    }
}

/// Confusion counts of predicted against true slide labels (`true` = positive).
pub fn triage_metrics(predictions: &[bool], labels: &[bool]) -> Result<TriageMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    TriageMetrics::from_counts(tp, fp, tn, fn_)
}
