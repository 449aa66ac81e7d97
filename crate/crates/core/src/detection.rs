//! Detection and ground-truth records plus the objectness/class score fusion.

use crate::category::{Category, NUM_CLASSES};
use crate::error::{check_range, Error, Result};
use crate::geometry::BBox;

/// Fused detection confidence: location score times class score.
pub fn fuse_score(objectness: f64, class_prob: f64) -> Result<f64> {
    check_range("objectness", objectness, 0.0, 1.0)?;
    check_range("class probability", class_prob, 0.0, 1.0)?;
    Ok(objectness * class_prob)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub objectness: f64,
    /// Per-class posterior from the detector, when the source provides one.
    pub class_scores: Option<[f64; NUM_CLASSES]>,
    pub category: Category,
    pub final_score: f64,
    /// Set once the cascade classifier has replaced the detector's label.
    pub relabeled: bool,
}

impl Detection {
    /// Detector output: category is the argmax of `class_scores` (lowest index
    /// on ties), final score is fused from it.
    pub fn from_scores(
        bbox: BBox,
        objectness: f64,
        class_scores: [f64; NUM_CLASSES],
    ) -> Result<Detection> {
        validate_scores(&class_scores)?;
        let mut best = 0;
        for (i, &s) in class_scores.iter().enumerate() {
            if s > class_scores[best] {
                best = i;
            }
        }
        let category = Category::ALL[best];
        let final_score = fuse_score(objectness, class_scores[best])?;
        Ok(Detection {
            bbox,
            objectness,
            class_scores: Some(class_scores),
            category,
            final_score,
            relabeled: false,
        })
    }

    /// A detection whose class posterior is certain: scores are one-hot on
    /// `category`, so the final score equals the objectness.
    pub fn certain(bbox: BBox, objectness: f64, category: Category) -> Result<Detection> {
        let mut scores = [0.0; NUM_CLASSES];
        scores[category.index()] = 1.0;
        Detection::from_scores(bbox, objectness, scores)
    }

    /// Rebuilds a detection from stored fields (file formats), checking ranges
    /// but trusting the recorded category and score.
    pub fn from_parts(
        bbox: BBox,
        objectness: f64,
        class_scores: Option<[f64; NUM_CLASSES]>,
        category: Category,
        final_score: f64,
        relabeled: bool,
    ) -> Result<Detection> {
        check_range("objectness", objectness, 0.0, 1.0)?;
        check_range("score", final_score, 0.0, 1.0)?;
        if let Some(scores) = &class_scores {
            validate_scores(scores)?;
        }
        Ok(Detection {
            bbox,
            objectness,
            class_scores,
            category,
            final_score,
            relabeled,
        })
    }
}

fn validate_scores(scores: &[f64; NUM_CLASSES]) -> Result<()> {
    for &s in scores {
        check_range("class score", s, 0.0, 1.0)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: BBox,
    pub category: Category,
    pub image_id: String,
}

impl GroundTruthBox {
    pub fn new(bbox: BBox, category: Category, image_id: impl Into<String>) -> GroundTruthBox {
        GroundTruthBox {
            bbox,
            category,
            image_id: image_id.into(),
        }
    }

    /// Clips the box to its image and rejects boxes left with no area.
    pub fn clipped(mut self, width: f64, height: f64) -> Result<GroundTruthBox> {
        self.bbox = self.bbox.clip_to(width, height);
        if self.bbox.area() <= 0.0 {
            return Err(Error::Contract(format!(
                "ground truth in {} lies outside its {width}x{height} image",
                self.image_id
            )));
        }
        Ok(self)
    }
}
