//! Anchor priors by k-means over box dimensions under the IoU distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 9;
pub const DEFAULT_MAX_ITER: usize = 300;

/// `1 - IoU` of two boxes placed on a common center.
pub fn iou_distance(dims: (f64, f64), anchor: (f64, f64)) -> Result<f64> {
    for v in [dims.0, dims.1, anchor.0, anchor.1] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Contract(format!(
                "box dimensions must be positive, got {v}"
            )));
        }
    }
    Ok(distance(dims, anchor))
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    let union = a.0 * a.1 + b.0 * b.1 - inter;
    1.0 - inter / union
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    /// `(w, h)` priors, smallest area first.
    pub anchors: Vec<(f64, f64)>,
    pub k: usize,
    pub seed: u64,
    pub iterations_run: usize,
    /// Mean IoU between each box and its assigned anchor.
    pub mean_iou: f64,
    /// Mean IoU distance after every assignment step, first entry after seeding.
    pub distance_history: Vec<f64>,
}

/// Clusters `dims` into `k` anchors.
///
/// Seeding is farthest-point under the IoU distance, starting from a point drawn
/// with `seed`. Each iteration reassigns points to their nearest centroid and
/// moves each centroid to the component-wise mean of its members. A mean that
/// would raise its cluster's total distance is rejected, which keeps the
/// objective non-increasing. Empty clusters are reseeded on the point farthest
/// from its centroid. Stops when no assignment changes or after `max_iter`.
pub fn kmeans_anchors(
    dims: &[(f64, f64)],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<AnchorSet> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if dims.len() < k {
        return Err(Error::Contract(format!(
            "{} boxes cannot form {k} clusters",
            dims.len()
        )));
    }
    for &d in dims {
        iou_distance(d, d)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = farthest_point_seeds(dims, k, &mut rng);
    let mut assignment = vec![usize::MAX; dims.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        let moved = assign(dims, &centroids, &mut assignment);
        let changed = reseed_empty(dims, &mut centroids, &mut assignment) || moved;
        history.push(mean_distance(dims, &centroids, &assignment));
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;
        update(dims, &mut centroids, &assignment);
    }

    let mean_iou = 1.0 - history.last().copied().unwrap_or(0.0);
    let mut anchors = centroids;
    anchors.sort_by(|a, b| {
        (a.0 * a.1)
            .total_cmp(&(b.0 * b.1))
            .then(a.0.total_cmp(&b.0))
    });
    Ok(AnchorSet {
        anchors,
        k,
        seed,
        iterations_run: iterations,
        mean_iou,
        distance_history: history,
    })
}

fn farthest_point_seeds(dims: &[(f64, f64)], k: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut centroids = vec![dims[rng.random_range(0..dims.len())]];
    let mut nearest: Vec<f64> = dims.iter().map(|&d| distance(d, centroids[0])).collect();
    while centroids.len() < k {
        let mut best = 0;
        for (i, &v) in nearest.iter().enumerate() {
            if v > nearest[best] {
                best = i;
            }
        }
        let c = dims[best];
        centroids.push(c);
        for (n, &d) in nearest.iter_mut().zip(dims) {
            *n = n.min(distance(d, c));
        }
    }
    centroids
}

/// Nearest-centroid assignment. A point only moves when another centroid is
/// strictly closer, ties going to the lower index. Returns whether anything moved.
fn assign(dims: &[(f64, f64)], centroids: &[(f64, f64)], assignment: &mut [usize]) -> bool {
    let next: Vec<usize> = dims
        .par_iter()
        .zip(assignment.par_iter())
        .map(|(&d, &current)| {
            let mut best = if current < centroids.len() {
                current
            } else {
                0
            };
            let mut best_d = distance(d, centroids[best]);
            for (j, &c) in centroids.iter().enumerate() {
                let dj = distance(d, c);
                if dj < best_d || (dj == best_d && j < best) {
                    best = j;
                    best_d = dj;
                }
            }
            best
        })
        .collect();
    let changed = next.iter().zip(assignment.iter()).any(|(a, b)| a != b);
    assignment.copy_from_slice(&next);
    changed
}

fn reseed_empty(
    dims: &[(f64, f64)],
    centroids: &mut [(f64, f64)],
    assignment: &mut [usize],
) -> bool {
    let mut reseeded = false;
    for j in 0..centroids.len() {
        if assignment.contains(&j) {
            continue;
        }
        let mut far = None;
        let mut far_d = 0.0;
        for (i, &d) in dims.iter().enumerate() {
            let di = distance(d, centroids[assignment[i]]);
            if di > far_d {
                far = Some(i);
                far_d = di;
            }
        }
        // All points sit on their centroids: the surplus clusters stay collapsed.
        let Some(i) = far else { break };
        centroids[j] = dims[i];
        assignment[i] = j;
        reseeded = true;
    }
    reseeded
}

fn update(dims: &[(f64, f64)], centroids: &mut [(f64, f64)], assignment: &[usize]) {
    let k = centroids.len();
    let mut sums = vec![(0.0, 0.0); k];
    let mut counts = vec![0usize; k];
    for (&d, &a) in dims.iter().zip(assignment) {
        sums[a].0 += d.0;
        sums[a].1 += d.1;
        counts[a] += 1;
    }
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let mean = (sums[j].0 / counts[j] as f64, sums[j].1 / counts[j] as f64);
        let cost = |c: (f64, f64)| -> f64 {
            dims.iter()
                .zip(assignment)
                .filter(|(_, &a)| a == j)
                .map(|(&d, _)| distance(d, c))
                .sum()
        };
        if cost(mean) <= cost(centroids[j]) {
            centroids[j] = mean;
        }
    }
}

fn mean_distance(dims: &[(f64, f64)], centroids: &[(f64, f64)], assignment: &[usize]) -> f64 {
    let total: f64 = dims
        .iter()
        .zip(assignment)
        .map(|(&d, &a)| distance(d, centroids[a]))
        .sum();
    total / dims.len() as f64
}
