//! Softmax, cross-entropy and label smoothing for classifier training code.
//!
//! All logarithms are natural (losses in nats).

use crate::error::{Error, Result};

/// Lower bound applied to probabilities before taking their log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Recommended smoothing strength.
pub const DEFAULT_EPSILON: f64 = 0.1;

const SUM_TOLERANCE: f64 = 1e-12;

/// Target distribution over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub q: Vec<f64>,
    pub smoothed: bool,
    /// Smoothing strength used to build `q`; 0 for a plain one-hot target.
    pub epsilon: f64,
}

impl LabelDistribution {
    pub fn one_hot(k: usize, class: usize) -> Result<LabelDistribution> {
        if class >= k {
            return Err(Error::Contract(format!(
                "class {class} out of range for K = {k}"
            )));
        }
        let mut q = vec![0.0; k];
        q[class] = 1.0;
        Ok(LabelDistribution {
            q,
            smoothed: false,
            epsilon: 0.0,
        })
    }

    /// Wraps an arbitrary distribution; entries must be non-negative and sum to 1.
    pub fn from_probs(q: Vec<f64>) -> Result<LabelDistribution> {
        check_distribution(&q)?;
        Ok(LabelDistribution {
            q,
            smoothed: false,
            epsilon: 0.0,
        })
    }

    pub fn k(&self) -> usize {
        self.q.len()
    }

    /// Index of the single 1.0 entry, if this is a one-hot distribution.
    pub fn hot_index(&self) -> Option<usize> {
        let mut hot = None;
        for (i, &v) in self.q.iter().enumerate() {
            if v == 1.0 && hot.is_none() {
                hot = Some(i);
            } else if v != 0.0 {
                return None;
            }
        }
        hot
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.q)
    }
}

fn check_distribution(q: &[f64]) -> Result<()> {
    if q.is_empty() {
        return Err(Error::Contract("empty distribution".into()));
    }
    if q.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Contract(
            "distribution has a negative or non-finite entry".into(),
        ));
    }
    let sum: f64 = q.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Contract(format!(
            "distribution sums to {sum}, not 1"
        )));
    }
    Ok(())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `p_i = exp(z_i) / sum_j exp(z_j)`, shifted by `max(z)` before exponentiating.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Contract("softmax of an empty vector".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("softmax input must be finite".into()));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `-sum_i q_i ln max(p_i, PROB_FLOOR)`.
pub fn cross_entropy(q: &LabelDistribution, p: &[f64]) -> Result<f64> {
    if q.k() != p.len() {
        return Err(Error::Contract(format!(
            "target has {} classes, prediction has {}",
            q.k(),
            p.len()
        )));
    }
    Ok(-q
        .q
        .iter()
        .zip(p)
        .filter(|(&qi, _)| qi != 0.0)
        .map(|(&qi, &pi)| qi * pi.max(PROB_FLOOR).ln())
        .sum::<f64>())
}

/// Shannon entropy of a distribution, the lower bound of [`cross_entropy`] against it.
pub fn entropy(q: &LabelDistribution) -> f64 {
    -q.q.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// `q'_i = (1 - eps) q_i + eps / K` applied to a one-hot target.
pub fn smooth_labels(q: &LabelDistribution, epsilon: f64) -> Result<LabelDistribution> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::range("epsilon", epsilon, 0.0, 1.0));
    }
    if q.hot_index().is_none() {
        return Err(Error::Contract(
            "label smoothing expects a one-hot target".into(),
        ));
    }
    let k = q.k();
    if k < 2 {
        return Err(Error::Contract(
            "label smoothing needs at least two classes".into(),
        ));
    }
    if epsilon == 0.0 {
        return Ok(q.clone());
    }
    let floor = epsilon / k as f64;
    Ok(LabelDistribution {
        q: q.q.iter().map(|&v| (1.0 - epsilon) * v + floor).collect(),
        smoothed: true,
        epsilon,
    })
}

/// Gradient of `cross_entropy(q, softmax(z))` with respect to the logits: `p - q`.
pub fn softmax_cross_entropy_grad(z: &[f64], q: &LabelDistribution) -> Result<Vec<f64>> {
    let p = softmax(z)?;
    if p.len() != q.k() {
        return Err(Error::Contract(format!(
            "target has {} classes, logits have {}",
            q.k(),
            p.len()
        )));
    }
    Ok(p.iter().zip(&q.q).map(|(pi, qi)| pi - qi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0; 10]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-15));

        let z: Vec<f64> = [1.0f64, 2.0, 3.0, 4.0].iter().map(|v| v.ln()).collect();
        let p = softmax(&z).unwrap();
        for (got, want) in p.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((got - want).abs() < 1e-15);
        }

        // large logits would overflow without the max shift
        let p = softmax(&[1000.0, 1000.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        assert!(softmax(&[f64::NAN, 1.0]).is_err());
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let q = LabelDistribution::one_hot(10, 3).unwrap();
        let mut p = vec![0.05; 10];
        p[3] = 0.55;
        assert!((cross_entropy(&q, &p).unwrap() + 0.55f64.ln()).abs() < 1e-15);

        let uniform = vec![0.1; 10];
        assert!((cross_entropy(&q, &uniform).unwrap() - 10f64.ln()).abs() < 1e-12);

        let qu = LabelDistribution::from_probs(vec![0.1; 10]).unwrap();
        assert!((cross_entropy(&qu, &uniform).unwrap() - std::f64::consts::LN_10).abs() < 1e-12);

        assert!(cross_entropy(&q, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn floor_keeps_loss_finite() {
        let q = LabelDistribution::one_hot(3, 0).unwrap();
        let loss = cross_entropy(&q, &[0.0, 0.5, 0.5]).unwrap();
        assert!((loss + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn smoothing_examples() {
        let q = LabelDistribution::one_hot(10, 4).unwrap();
        assert_eq!(smooth_labels(&q, 0.0).unwrap(), q);

        let s = smooth_labels(&q, 0.1).unwrap();
        assert!(s.smoothed);
        assert_eq!(s.epsilon, 0.1);
        for (i, &v) in s.q.iter().enumerate() {
            let want = if i == 4 { 0.91 } else { 0.01 };
            assert!((v - want).abs() < 1e-12);
        }
        assert!((s.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert!(smooth_labels(&q, 1.0).is_err());
        assert!(smooth_labels(&q, -0.1).is_err());
        assert!(smooth_labels(&s, 0.1).is_err());
        assert!(smooth_labels(&LabelDistribution::one_hot(1, 0).unwrap(), 0.1).is_err());
    }

    #[test]
    fn from_probs_validates() {
        assert!(LabelDistribution::from_probs(vec![0.5, 0.6]).is_err());
        assert!(LabelDistribution::from_probs(vec![-0.5, 1.5]).is_err());
        assert!(LabelDistribution::one_hot(3, 3).is_err());
    }

    fn arb_dist(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01..1.0f64, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            z in proptest::collection::vec(-30.0..30.0f64, 10),
            c in -50.0..50.0f64,
        ) {
            let p = softmax(&z).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let ps = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&ps) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn smoothing_preserves_argmax(class in 0usize..10, eps in 0.0..0.999f64) {
            let q = LabelDistribution::one_hot(10, class).unwrap();
            let s = smooth_labels(&q, eps).unwrap();
            prop_assert_eq!(s.argmax(), class);
            prop_assert!((s.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn gibbs_inequality(q in arb_dist(10), p in arb_dist(10)) {
            let qd = LabelDistribution::from_probs(q.clone()).unwrap_or_else(|_| {
                // renormalisation rounding can miss 1e-12; fall back to exact one-hot
                LabelDistribution::one_hot(10, 0).unwrap()
            });
            let h = entropy(&qd);
            prop_assert!(cross_entropy(&qd, &p).unwrap() >= h - 1e-9);
            prop_assert!((cross_entropy(&qd, &qd.q).unwrap() - h).abs() < 1e-9);
        }
    }
}
