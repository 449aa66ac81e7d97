//! 11-point interpolated average precision.

use crate::eval::matching::Credit;

/// `(recall, precision)` after each ranked detection.
pub fn pr_curve(credits: &[Credit], denominator: f64) -> Vec<(f64, f64)> {
    let mut tp = 0.0;
    let mut fp = 0.0;
    credits
        .iter()
        .map(|c| {
            tp += c.tp;
            fp += c.fp;
            let recall = if denominator > 0.0 {
                tp / denominator
            } else {
                0.0
            };
            (recall, tp / (tp + fp))
        })
        .collect()
}

/// Mean over r in {0, 0.1, ..., 1} of the best precision reached at recall >= r.
///
/// Returns `None` for a class with no ground truth and no detections (it does
/// not take part in the mean); a class with detections but no ground truth
/// scores 0.
pub fn ap_11point(credits: &[Credit], denominator: f64) -> Option<f64> {
    if denominator <= 0.0 {
        return if credits.is_empty() { None } else { Some(0.0) };
    }
    let curve = pr_curve(credits, denominator);
    let total: f64 = (0..=10)
        .map(|i| {
            let level = i as f64 / 10.0;
            curve
                .iter()
                .filter(|(r, _)| *r >= level)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum();
    Some(total / 11.0)
}
