//! Hard-example cascade: detections predicted as one of the four squamous
//! classes are cropped from the slide and re-labelled by a dedicated classifier.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::category::{Category, HARD_CLASSES};
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::geometry::Space;
use crate::raster::{self, Region};

/// Tolerance on the classifier's output summing to one.
pub const OUTPUT_SUM_TOLERANCE: f64 = 1e-9;

/// A 4-way classifier over [`HARD_CLASSES`].
pub trait HardClassifier: Sync {
    /// Square edge the router resizes crops to.
    fn input_edge(&self) -> u32 {
        299
    }

    /// Whether `classify` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }

    /// Probabilities over (ASCUS, ASCH, LSIL, HSIL) for the cropped patch.
    /// `det` is the detection the patch was cut for.
    fn classify(&self, patch: &RgbImage, det: &Detection) -> [f64; 4];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropConfig {
    /// Fraction of the box's width/height added on each side.
    pub context_pad: f64,
    /// Square crop edge when the classifier does not say otherwise.
    pub output_edge: u32,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            context_pad: 0.1,
            output_edge: 299,
        }
    }
}

/// Splits detections into (hard, passthrough), both in input order.
pub fn select_hard(dets: &[Detection]) -> (Vec<Detection>, Vec<Detection>) {
    dets.iter().cloned().partition(|d| d.category.is_hard())
}

/// The padded and clipped source rectangle for a detection's crop.
pub fn crop_region(det: &Detection, cfg: &CropConfig, width: u32, height: u32) -> Result<Region> {
    if !(cfg.context_pad >= 0.0 && cfg.context_pad.is_finite()) {
        return Err(Error::Config(format!(
            "context_pad {} must be non-negative",
            cfg.context_pad
        )));
    }
    let b = &det.bbox;
    let px = b.w * cfg.context_pad;
    let py = b.h * cfg.context_pad;
    let x1 = (b.x - px).max(0.0);
    let y1 = (b.y - py).max(0.0);
    let x2 = (b.x2() + px).min(width as f64);
    let y2 = (b.y2() + py).min(height as f64);
    if x2 <= x1 || y2 <= y1 {
        return Err(Error::Contract(format!(
            "box ({}, {}, {}, {}) does not intersect the {width}x{height} slide",
            b.x, b.y, b.w, b.h
        )));
    }
    Ok(Region {
        x: x1,
        y: y1,
        w: x2 - x1,
        h: y2 - y1,
    })
}

/// Crops the padded box out of the slide and resizes it to `edge x edge`.
pub fn extract_crop(slide: &RgbImage, det: &Detection, cfg: &CropConfig) -> Result<RgbImage> {
    extract_crop_with_edge(slide, det, cfg, cfg.output_edge)
}

fn extract_crop_with_edge(
    slide: &RgbImage,
    det: &Detection,
    cfg: &CropConfig,
    edge: u32,
) -> Result<RgbImage> {
    if det.bbox.space != Space::Slide {
        return Err(Error::SpaceMismatch {
            left: det.bbox.space,
            right: Space::Slide,
        });
    }
    let region = crop_region(det, cfg, slide.width(), slide.height())?;
    raster::resample(slide, region, edge, edge)
}

fn check_output(out: &[f64; 4], index: usize) -> Result<()> {
    let valid = out.iter().all(|p| p.is_finite() && *p >= 0.0);
    let sum: f64 = out.iter().sum();
    if !valid || (sum - 1.0).abs() > OUTPUT_SUM_TOLERANCE {
        return Err(Error::Contract(format!(
            "classifier output {out:?} for detection {index} is not a probability vector"
        )));
    }
    Ok(())
}

/// Re-labels every hard detection with the classifier's argmax.
///
/// The new final score is objectness times the classifier's probability for the
/// chosen class. Boxes and objectness never change; non-hard detections pass
/// through untouched. No suppression is run afterwards.
pub fn refine(
    dets: &[Detection],
    slide: &RgbImage,
    clf: &dyn HardClassifier,
    cfg: &CropConfig,
) -> Result<Vec<Detection>> {
    let edge = clf.input_edge();
    let relabel = |(i, d): (usize, &Detection)| -> Result<Detection> {
        if !d.category.is_hard() {
            return Ok(d.clone());
        }
        let patch = extract_crop_with_edge(slide, d, cfg, edge)
            .map_err(|e| Error::Contract(format!("detection {i}: {e}")))?;
        let out = clf.classify(&patch, d);
        check_output(&out, i)?;
        let mut best = 0;
        for (j, &p) in out.iter().enumerate() {
            if p > out[best] {
                best = j;
            }
        }
        let mut refined = d.clone();
        refined.category = HARD_CLASSES[best];
        refined.final_score = (d.objectness * out[best]).clamp(0.0, 1.0);
        refined.relabeled = true;
        Ok(refined)
    };
    if clf.concurrent() {
        dets.par_iter().enumerate().map(relabel).collect()
    } else {
        dets.iter().enumerate().map(relabel).collect()
    }
}

/// One-hot output on a hard class.
pub fn one_hot(class: Category) -> Option<[f64; 4]> {
    let i = class.hard_index()?;
    let mut out = [0.0; 4];
    out[i] = 1.0;
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use image::Rgb;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn det(x: f64, y: f64, w: f64, h: f64, obj: f64, cat: Category) -> Detection {
        Detection::certain(BBox::slide(x, y, w, h).unwrap(), obj, cat).unwrap()
    }

    struct Echo;
    impl HardClassifier for Echo {
        fn classify(&self, _: &RgbImage, det: &Detection) -> [f64; 4] {
            one_hot(det.category).unwrap()
        }
    }

    struct Fixed([f64; 4]);
    impl HardClassifier for Fixed {
        fn input_edge(&self) -> u32 {
            32
        }
        fn classify(&self, patch: &RgbImage, _: &Detection) -> [f64; 4] {
            assert_eq!(patch.dimensions(), (32, 32));
            self.0
        }
    }

    struct Counting(AtomicUsize);
    impl HardClassifier for Counting {
        fn concurrent(&self) -> bool {
            false
        }
        fn classify(&self, _: &RgbImage, _: &Detection) -> [f64; 4] {
            self.0.fetch_add(1, Ordering::SeqCst);
            [0.25; 4]
        }
    }

    fn slide() -> RgbImage {
        RgbImage::from_fn(400, 300, |x, y| Rgb([x as u8, y as u8, 9]))
    }

    #[test]
    fn partition() {
        let ds = vec![
            det(0.0, 0.0, 5.0, 5.0, 0.5, Category::Agc),
            det(0.0, 0.0, 5.0, 5.0, 0.5, Category::Vag),
        ];
        let (hard, pass) = select_hard(&ds);
        assert!(hard.is_empty());
        assert_eq!(pass, ds);

        let ds: Vec<_> = Category::ALL
            .iter()
            .map(|&c| det(0.0, 0.0, 5.0, 5.0, 0.5, c))
            .collect();
        let (hard, pass) = select_hard(&ds);
        assert_eq!(hard.len(), 4);
        assert_eq!(pass.len(), 6);
        assert!(hard.iter().all(|d| d.category.is_hard()));
        assert!(pass.iter().all(|d| !d.category.is_hard()));
    }

    #[test]
    fn crop_geometry() {
        let cfg = CropConfig::default();
        let d = det(100.0, 100.0, 50.0, 50.0, 0.5, Category::Hsil);
        let r = crop_region(&d, &cfg, 400, 300).unwrap();
        assert_eq!((r.x, r.y, r.w, r.h), (95.0, 95.0, 60.0, 60.0));

        let corner = det(0.0, 0.0, 50.0, 50.0, 0.5, Category::Hsil);
        let r = crop_region(&corner, &cfg, 400, 300).unwrap();
        assert_eq!((r.x, r.y, r.w, r.h), (0.0, 0.0, 55.0, 55.0));

        let outside = det(500.0, 10.0, 20.0, 20.0, 0.5, Category::Hsil);
        assert!(crop_region(&outside, &cfg, 400, 300).is_err());
        assert!(extract_crop(&slide(), &outside, &cfg).is_err());
    }

    #[test]
    fn whole_image_crop_is_resize() {
        let img = slide();
        let d = det(0.0, 0.0, 400.0, 300.0, 0.5, Category::Lsil);
        let cfg = CropConfig {
            context_pad: 0.0,
            output_edge: 50,
        };
        let crop = extract_crop(&img, &d, &cfg).unwrap();
        assert_eq!(crop, crate::raster::resize(&img, 50, 50).unwrap());
    }

    #[test]
    fn echo_classifier_is_fixed_point() {
        let ds: Vec<_> = Category::ALL
            .iter()
            .enumerate()
            .map(|(i, &c)| det(10.0 * i as f64, 20.0, 30.0, 30.0, 0.5 + 0.04 * i as f64, c))
            .collect();
        let out = refine(&ds, &slide(), &Echo, &CropConfig::default()).unwrap();
        for (a, b) in ds.iter().zip(&out) {
            assert_eq!(a.category, b.category);
            assert_eq!(a.final_score, b.final_score);
            assert_eq!(a.bbox, b.bbox);
            assert_eq!(b.relabeled, a.category.is_hard());
            if !a.category.is_hard() {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn constant_hsil_classifier() {
        let ds: Vec<_> = Category::ALL
            .iter()
            .map(|&c| det(10.0, 20.0, 30.0, 30.0, 0.7, c))
            .collect();
        let out = refine(
            &ds,
            &slide(),
            &Fixed([0.0, 0.0, 0.0, 1.0]),
            &CropConfig::default(),
        )
        .unwrap();
        for (a, b) in ds.iter().zip(&out) {
            if a.category.is_hard() {
                assert_eq!(b.category, Category::Hsil);
                assert_eq!(b.final_score, b.objectness);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn invalid_output_reports_detection() {
        let ds = vec![
            det(10.0, 20.0, 30.0, 30.0, 0.7, Category::Agc),
            det(10.0, 20.0, 30.0, 30.0, 0.7, Category::Asch),
        ];
        let err = refine(
            &ds,
            &slide(),
            &Fixed([0.5, 0.5, 0.5, 0.0]),
            &CropConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("detection 1"), "{err}");
        let err = refine(
            &ds,
            &slide(),
            &Fixed([-0.5, 1.5, 0.0, 0.0]),
            &CropConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn serial_classifier_called_once_per_hard_detection() {
        let ds: Vec<_> = Category::ALL
            .iter()
            .map(|&c| det(10.0, 20.0, 30.0, 30.0, 0.7, c))
            .collect();
        let clf = Counting(AtomicUsize::new(0));
        let out = refine(&ds, &slide(), &clf, &CropConfig::default()).unwrap();
        assert_eq!(clf.0.load(Ordering::SeqCst), 4);
        // ties resolve to the first hard class
        assert!(out
            .iter()
            .filter(|d| d.relabeled)
            .all(|d| d.category == Category::Ascus));
    }
}
