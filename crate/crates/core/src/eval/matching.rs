//! Greedy score-ordered matching of one class's detections to ground truth.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::detection::{Detection, GroundTruthBox};
use crate::error::Result;
use crate::eval::credit::CreditMatrix;
use crate::geometry::iou;

/// True/false positive weight of one ranked detection; the two always sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Credit {
    pub tp: f64,
    pub fp: f64,
}

impl Credit {
    pub const MISS: Credit = Credit { tp: 0.0, fp: 1.0 };

    pub fn matched(weight: f64) -> Credit {
        Credit {
            tp: weight,
            fp: 1.0 - weight,
        }
    }
}

/// A detection reference with enough context to rank and log it.
#[derive(Debug, Clone, Copy)]
pub struct RankedDetection<'a> {
    pub image_id: &'a str,
    /// Position within its image's detection list.
    pub index: usize,
    pub det: &'a Detection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub image_id: String,
    pub detection: usize,
    pub ground_truth: usize,
    pub predicted: Category,
    pub truth: Category,
    pub iou: f64,
    pub credit: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassMatch {
    /// One entry per ranked detection, in rank order.
    pub credits: Vec<Credit>,
    /// Same-class ground truth count plus the credit of every foreign
    /// ground truth box consumed by a cross-class match.
    pub denominator: f64,
    pub pairs: Vec<MatchedPair>,
}

/// Collects `class` detections from every image, highest score first.
///
/// Ties fall back to image id, then position in the image, so the order is
/// fully determined by the inputs.
pub fn rank_detections<'a>(
    class: Category,
    dets_by_image: &'a BTreeMap<String, Vec<Detection>>,
) -> Vec<RankedDetection<'a>> {
    let mut ranked: Vec<RankedDetection<'a>> = dets_by_image
        .iter()
        .flat_map(|(image_id, dets)| {
            dets.iter()
                .enumerate()
                .filter(|(_, d)| d.category == class)
                .map(move |(index, det)| RankedDetection {
                    image_id: image_id.as_str(),
                    index,
                    det,
                })
        })
        .collect();
    // BTreeMap iteration already orders by (image, index); the sort is stable.
    ranked.sort_by(|a, b| b.det.final_score.total_cmp(&a.det.final_score));
    ranked
}

/// Matches ranked detections of `class` against ground truth.
///
/// Each detection takes the unconsumed same-class box with the highest IoU at
/// or above `iou_threshold`; failing that, the best unconsumed box of a class
/// `t` with `credit[class][t] > 0`. A match earns `credit[class][t]` as true
/// positive weight and the remainder as false positive weight. Every box is
/// consumed at most once within this class's pass.
pub fn match_class(
    class: Category,
    ranked: &[RankedDetection<'_>],
    gts_by_image: &BTreeMap<String, Vec<GroundTruthBox>>,
    iou_threshold: f64,
    credit: &CreditMatrix,
) -> Result<ClassMatch> {
    debug_assert!(ranked
        .windows(2)
        .all(|w| w[0].det.final_score >= w[1].det.final_score));

    let own_gt = gts_by_image
        .values()
        .flatten()
        .filter(|g| g.category == class)
        .count();
    let mut out = ClassMatch {
        credits: Vec::with_capacity(ranked.len()),
        denominator: own_gt as f64,
        pairs: Vec::new(),
    };
    let mut consumed: HashSet<(&str, usize)> = HashSet::new();

    for r in ranked {
        let gts = gts_by_image
            .get(r.image_id)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let mut same: Option<(usize, f64)> = None;
        let mut cross: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if consumed.contains(&(r.image_id, gi)) {
                continue;
            }
            let slot = if g.category == class {
                &mut same
            } else if credit.get(class, g.category) > 0.0 {
                &mut cross
            } else {
                continue;
            };
            let v = iou(&r.det.bbox, &g.bbox)?;
            if v >= iou_threshold && slot.is_none_or(|(_, best)| v > best) {
                *slot = Some((gi, v));
            }
        }
        match same.or(cross) {
            Some((gi, v)) => {
                let truth = gts[gi].category;
                let weight = credit.get(class, truth);
                consumed.insert((r.image_id, gi));
                if truth != class {
                    out.denominator += weight;
                }
                out.credits.push(Credit::matched(weight));
                out.pairs.push(MatchedPair {
                    image_id: r.image_id.to_string(),
                    detection: r.index,
                    ground_truth: gi,
                    predicted: class,
                    truth,
                    iou: v,
                    credit: weight,
                });
            }
            None => out.credits.push(Credit::MISS),
        }
    }
    Ok(out)
}
