//! Greedy NMS, cross-layer merging into slide space, and score thresholds.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::Detection;
use crate::error::{check_range, Error, Result};
use crate::geometry::iou_unchecked;
use crate::pyramid::{tile_to_slide, TileMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsConfig {
    /// A candidate is suppressed when its IoU with a kept box exceeds this.
    pub iou_threshold: f64,
    /// When set, boxes of different categories never suppress each other.
    pub class_aware: bool,
    /// Detections scoring below this are discarded before suppression.
    pub score_floor: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig {
            iou_threshold: 0.45,
            class_aware: true,
            score_floor: 0.05,
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("iou_threshold", self.iou_threshold, 0.0, 1.0)?;
        check_range("score_floor", self.score_floor, 0.0, 1.0)
    }
}

/// Greedy non-maximum suppression.
///
/// Candidates are visited by descending `final_score`, ties by input position.
/// Output is in visiting order.
pub fn nms(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    if let Some(first) = dets.first() {
        if let Some(other) = dets.iter().find(|d| d.bbox.space != first.bbox.space) {
            return Err(Error::SpaceMismatch {
                left: first.bbox.space,
                right: other.bbox.space,
            });
        }
    }

    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].final_score >= cfg.score_floor)
        .collect();
    // stable sort keeps input order among equal scores
    order.sort_by(|&a, &b| dets[b].final_score.total_cmp(&dets[a].final_score));

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&k| {
            (!cfg.class_aware || dets[k].category == dets[i].category)
                && iou_unchecked(&dets[k].bbox, &dets[i].bbox) > cfg.iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept.into_iter().map(|i| dets[i].clone()).collect())
}

/// Projects per-tile detections into slide space and runs one global NMS.
///
/// Detections are put in a canonical order (tile id, then position within the
/// tile) before suppression, so the result does not depend on the order of
/// `per_tile` or on how the projection was scheduled.
pub fn merge_pyramid(
    per_tile: &[(TileMeta, Vec<Detection>)],
    cfg: &NmsConfig,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let mut tiles: HashMap<u32, &TileMeta> = HashMap::new();
    for (meta, _) in per_tile {
        if let Some(prev) = tiles.insert(meta.tile_id, meta) {
            if prev != meta {
                return Err(Error::Contract(format!(
                    "tile {} listed twice with different geometry",
                    meta.tile_id
                )));
            }
        }
    }

    let mut projected: Vec<(u32, usize, Detection)> = per_tile
        .par_iter()
        .map(|(meta, dets)| {
            dets.iter()
                .enumerate()
                .map(|(i, d)| {
                    let owner = match d.bbox.space {
                        crate::geometry::Space::Tile(id) => tiles.get(&id).copied(),
                        _ => None,
                    };
                    let owner = owner.ok_or_else(|| {
                        Error::Contract(format!(
                            "detection {i} listed under tile {} is in {}, which is not a known tile",
                            meta.tile_id, d.bbox.space
                        ))
                    })?;
                    let mut out = d.clone();
                    out.bbox = tile_to_slide(&d.bbox, owner)?;
                    Ok((owner.tile_id, i, out))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    projected.sort_by_key(|&(tile, i, _)| (tile, i));
    let canonical: Vec<Detection> = projected.into_iter().map(|(_, _, d)| d).collect();
    nms(&canonical, cfg)
}

/// Keeps detections with `final_score >= tau`, preserving order.
pub fn threshold(dets: &[Detection], tau: f64) -> Result<Vec<Detection>> {
    check_range("tau", tau, 0.0, 1.0)?;
    Ok(dets
        .iter()
        .filter(|d| d.final_score >= tau)
        .cloned()
        .collect())
}
