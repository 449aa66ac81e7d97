//! Building blocks for automated cervical cytology screening: pyramid tiling
//! of whole-slide images, IoU k-means anchor priors, label smoothing, pyramid
//! detection merging, a hard-example relabeling cascade, VOC-style evaluation
//! with partial credit, slide triage, and seeded synthetic fixtures.

pub mod anchors;
pub mod cascade;
pub mod category;
pub mod detection;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod postprocess;
pub mod pyramid;
pub mod raster;
pub mod smoothing;

pub use category::{Category, HARD_CLASSES, NUM_CLASSES};
pub use detection::{Detection, GroundTruthBox};
pub use error::{Error, Result};
pub use geometry::{iou, BBox, Space};
