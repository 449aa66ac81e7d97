//! End-to-end screening run: tile every slide, detect per tile, merge the
//! pyramid, relabel hard examples, then score detections and triage slides.
//!
//! Slides are processed in parallel but collected in image-id order, and all
//! randomness is keyed on (image id, tile id), so output does not depend on the
//! thread count.

use std::borrow::Cow;
use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{refine, CropConfig, HardClassifier};
use crate::category::Category;
use crate::detection::{Detection, GroundTruthBox};
use crate::error::{check_range, Error, Result};
use crate::eval::{
    evaluate, triage, triage_metrics, EvalConfig, EvalReport, Granularity, DEFAULT_TAU,
};
use crate::fixtures::{mock_detect_tile, stream_key, NoiseSpec};
use crate::geometry::Space;
use crate::postprocess::{merge_pyramid, nms, NmsConfig};
use crate::pyramid::{build_pyramid, plan_tiles, project_gt_to_tiles, PyramidSpec, TileMeta};
use crate::raster::draw_rect;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub enabled: bool,
    pub crop: CropConfig,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            enabled: true,
            crop: CropConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pyramid: PyramidSpec,
    pub nms: NmsConfig,
    pub cascade: CascadeConfig,
    pub eval: EvalConfig,
    /// Slide is called positive when a positive-class detection scores at least this.
    pub triage_tau: f64,
    /// Mock detector corruption, used when no detections are supplied.
    pub noise: NoiseSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pyramid: PyramidSpec::default(),
            nms: NmsConfig::default(),
            cascade: CascadeConfig::default(),
            eval: EvalConfig::default(),
            triage_tau: DEFAULT_TAU,
            noise: NoiseSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        self.nms.validate()?;
        self.noise.validate()?;
        check_range("triage_tau", self.triage_tau, 0.0, 1.0)?;
        check_range("iou_threshold", self.eval.iou_threshold, 0.0, 1.0)?;
        Ok(())
    }
}

/// One slide going into the pipeline. Coordinates are in slide space.
#[derive(Debug, Clone)]
pub struct SlideInput {
    pub image_id: String,
    /// Needed for the cascade and overlays; tiling alone works without it.
    pub raster: Option<RgbImage>,
    pub gts: Vec<GroundTruthBox>,
    /// Slide-level truth; derived from `gts` when absent.
    pub label: Option<bool>,
}

/// Where detections come from.
#[derive(Debug, Clone)]
pub enum DetectorSource {
    /// Simulate a detector per tile from the projected ground truth, using
    /// [`PipelineConfig::noise`].
    Mock,
    /// Precomputed detections per image, all in tile space or all in slide space.
    Precomputed(BTreeMap<String, Vec<Detection>>),
}

#[derive(Debug, Clone)]
pub struct SlideResult {
    pub image_id: String,
    /// Raw per-tile detections, in tile space, before merging.
    pub tile_detections: Vec<(TileMeta, Vec<Detection>)>,
    /// Merged and (when enabled) relabeled detections in slide space.
    pub detections: Vec<Detection>,
    pub predicted_positive: bool,
    pub label: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub slides: Vec<SlideResult>,
    pub report: EvalReport,
}

impl PipelineOutput {
    pub fn detections(&self) -> BTreeMap<String, Vec<Detection>> {
        self.slides
            .iter()
            .map(|s| (s.image_id.clone(), s.detections.clone()))
            .collect()
    }
}

fn tile_detections(
    slide: &SlideInput,
    tiles: &[TileMeta],
    cfg: &PipelineConfig,
    source: &DetectorSource,
) -> Result<Vec<(TileMeta, Vec<Detection>)>> {
    match source {
        DetectorSource::Mock => {
            let projected = project_gt_to_tiles(&slide.gts, tiles, &cfg.pyramid)?;
            tiles
                .iter()
                .zip(&projected)
                .map(|(meta, gts)| {
                    let dets = mock_detect_tile(
                        gts,
                        meta,
                        &cfg.noise,
                        stream_key(&slide.image_id, meta.tile_id),
                    )?;
                    Ok((*meta, dets))
                })
                .collect()
        }
        DetectorSource::Precomputed(all) => {
            let dets = all.get(&slide.image_id).map(Vec::as_slice).unwrap_or(&[]);
            let mut per_tile: Vec<(TileMeta, Vec<Detection>)> =
                tiles.iter().map(|t| (*t, Vec::new())).collect();
            for (i, d) in dets.iter().enumerate() {
                let Space::Tile(id) = d.bbox.space else {
                    return Err(Error::Contract(format!(
                        "detection {i} of {} is in {}, expected tile space",
                        slide.image_id, d.bbox.space
                    )));
                };
                let slot = per_tile.get_mut(id as usize).ok_or_else(|| {
                    Error::Contract(format!(
                        "detection {i} of {} names unknown tile {id}",
                        slide.image_id
                    ))
                })?;
                slot.1.push(d.clone());
            }
            Ok(per_tile)
        }
    }
}

fn slide_space_input(source: &DetectorSource) -> Result<bool> {
    let DetectorSource::Precomputed(all) = source else {
        return Ok(false);
    };
    let mut spaces = all
        .values()
        .flatten()
        .map(|d| matches!(d.bbox.space, Space::Slide));
    match spaces.next() {
        None => Ok(false),
        Some(first) => {
            if spaces.any(|s| s != first) {
                return Err(Error::Contract(
                    "precomputed detections mix tile-space and slide-space boxes".into(),
                ));
            }
            Ok(first)
        }
    }
}

fn process_slide(
    slide: &SlideInput,
    tiles: &[TileMeta],
    cfg: &PipelineConfig,
    source: &DetectorSource,
    slide_space: bool,
    clf: Option<&dyn HardClassifier>,
) -> Result<SlideResult> {
    let (tile_dets, merged) = if slide_space {
        let dets = match source {
            DetectorSource::Precomputed(all) => {
                all.get(&slide.image_id).cloned().unwrap_or_default()
            }
            DetectorSource::Mock => unreachable!("mock detections are always per tile"),
        };
        (Vec::new(), nms(&dets, &cfg.nms)?)
    } else {
        let tile_dets = tile_detections(slide, tiles, cfg, source)?;
        let merged = merge_pyramid(&tile_dets, &cfg.nms)?;
        (tile_dets, merged)
    };

    let detections = match clf {
        Some(clf) if cfg.cascade.enabled => {
            let raster = slide.raster.as_ref().ok_or_else(|| {
                Error::Contract(format!(
                    "{} has no raster to crop for the cascade",
                    slide.image_id
                ))
            })?;
            // crops come from layer one so slide coordinates index it directly
            let layer_one = layer_one(raster, &cfg.pyramid)?;
            refine(&merged, &layer_one, clf, &cfg.cascade.crop)
                .map_err(|e| Error::Contract(format!("{}: {e}", slide.image_id)))?
        }
        _ => merged,
    };

    let label = slide
        .label
        .unwrap_or_else(|| slide.gts.iter().any(|g| g.category.is_positive()));
    Ok(SlideResult {
        image_id: slide.image_id.clone(),
        tile_detections: tile_dets,
        predicted_positive: triage(&detections, cfg.triage_tau)?,
        detections,
        label,
    })
}

fn layer_one<'a>(raster: &'a RgbImage, spec: &PyramidSpec) -> Result<Cow<'a, RgbImage>> {
    let (w, h) = spec.slide_size();
    if raster.dimensions() == (w, h) {
        return Ok(Cow::Borrowed(raster));
    }
    let one = PyramidSpec {
        layer_sizes: vec![(w, h)],
        tile_size: (w, h),
        ..spec.clone()
    };
    Ok(Cow::Owned(build_pyramid(raster, &one)?.remove(0)))
}

type Keyed<T> = BTreeMap<String, Vec<T>>;

/// Tile-granularity evaluation inputs: per-tile NMS output against projected
/// ground truth, keyed `"<image_id>#<tile_id>"`.
fn tile_eval_inputs(
    slides: &[&SlideInput],
    results: &[SlideResult],
    tiles: &[TileMeta],
    cfg: &PipelineConfig,
) -> Result<(Keyed<Detection>, Keyed<GroundTruthBox>)> {
    let mut dets = BTreeMap::new();
    let mut gts = BTreeMap::new();
    for (slide, result) in slides.iter().zip(results) {
        if result.tile_detections.is_empty() {
            return Err(Error::Config(
                "tile granularity needs tile-space detections".into(),
            ));
        }
        let projected = project_gt_to_tiles(&slide.gts, tiles, &cfg.pyramid)?;
        for ((meta, tile_dets), tile_gts) in result.tile_detections.iter().zip(projected) {
            let key = format!("{}#{}", slide.image_id, meta.tile_id);
            dets.insert(key.clone(), nms(tile_dets, &cfg.nms)?);
            gts.insert(key, tile_gts.into_iter().map(|t| t.gt).collect());
        }
    }
    Ok((dets, gts))
}

/// Runs the whole pipeline. `clf` is the hard-example classifier; without one
/// (or with the cascade disabled) merged detections are scored directly.
pub fn run_pipeline(
    slides: &[SlideInput],
    cfg: &PipelineConfig,
    source: &DetectorSource,
    clf: Option<&dyn HardClassifier>,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut ids: Vec<&str> = slides.iter().map(|s| s.image_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Contract(format!("duplicate image id {}", w[0])));
    }
    let tiles = plan_tiles(&cfg.pyramid)?;
    let slide_space = slide_space_input(source)?;

    let mut sorted: Vec<&SlideInput> = slides.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    let results: Vec<SlideResult> = sorted
        .par_iter()
        .map(|s| process_slide(s, &tiles, cfg, source, slide_space, clf))
        .collect::<Result<_>>()?;

    let mut report = match cfg.eval.granularity {
        Granularity::Slide => {
            let dets: BTreeMap<String, Vec<Detection>> = results
                .iter()
                .map(|r| (r.image_id.clone(), r.detections.clone()))
                .collect();
            let gts: BTreeMap<String, Vec<GroundTruthBox>> = sorted
                .iter()
                .map(|s| (s.image_id.clone(), s.gts.clone()))
                .collect();
            evaluate(&dets, &gts, &cfg.eval)?
        }
        Granularity::Tile => {
            let (dets, gts) = tile_eval_inputs(&sorted, &results, &tiles, cfg)?;
            evaluate(&dets, &gts, &cfg.eval)?
        }
    };
    let preds: Vec<bool> = results.iter().map(|r| r.predicted_positive).collect();
    let labels: Vec<bool> = results.iter().map(|r| r.label).collect();
    report.triage = Some(triage_metrics(&preds, &labels)?);

    Ok(PipelineOutput {
        slides: results,
        report,
    })
}

/// Box colour for a class on overlays.
pub fn overlay_color(c: Category) -> Rgb<u8> {
    use Category::*;
    Rgb(match c {
        Normal => [255, 0, 0],
        Ascus => [255, 165, 0],
        Asch => [255, 255, 0],
        Lsil => [57, 255, 20],
        Hsil => [0, 128, 0],
        Agc => [0, 191, 255],
        Ade => [0, 0, 255],
        Vag => [128, 0, 128],
        Mon => [227, 11, 92],
        Dys => [255, 192, 203],
    })
}

/// Draws slide-space detections over a copy of the raster.
pub fn render_overlay(
    raster: &RgbImage,
    dets: &[Detection],
    spec: &PyramidSpec,
) -> Result<RgbImage> {
    let mut img = layer_one(raster, spec)?.into_owned();
    for d in dets {
        if d.bbox.space != Space::Slide {
            return Err(Error::SpaceMismatch {
                left: d.bbox.space,
                right: Space::Slide,
            });
        }
        let b = &d.bbox;
        draw_rect(&mut img, b.x, b.y, b.w, b.h, 3, overlay_color(d.category));
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            pyramid: PyramidSpec {
                layer_sizes: vec![(400, 300), (160, 120), (80, 60)],
                tile_size: (80, 60),
                min_clip_area_ratio: 0.3,
            },
            noise: NoiseSpec::zero(),
            ..PipelineConfig::default()
        }
    }

    fn slide(id: &str, boxes: &[(f64, f64, f64, f64, Category)]) -> SlideInput {
        SlideInput {
            image_id: id.into(),
            raster: None,
            gts: boxes
                .iter()
                .map(|&(x, y, w, h, c)| {
                    GroundTruthBox::new(BBox::slide(x, y, w, h).unwrap(), c, id)
                })
                .collect(),
            label: None,
        }
    }

    #[test]
    fn zero_noise_recovers_ground_truth() {
        let slides = vec![
            slide(
                "b",
                &[
                    (10.0, 10.0, 30.0, 30.0, Category::Hsil),
                    (75.0, 50.0, 20.0, 25.0, Category::Normal),
                ],
            ),
            slide("a", &[(200.0, 100.0, 40.0, 35.0, Category::Mon)]),
        ];
        let out = run_pipeline(&slides, &small_cfg(), &DetectorSource::Mock, None).unwrap();
        assert_eq!(out.slides[0].image_id, "a");
        assert_eq!(out.report.map, 1.0);
        let t = out.report.triage.unwrap();
        assert_eq!((t.tp, t.tn, t.fp, t.fn_), (1, 1, 0, 0));
    }

    #[test]
    fn cascade_requires_raster() {
        struct Echo;
        impl HardClassifier for Echo {
            fn classify(&self, _: &RgbImage, d: &Detection) -> [f64; 4] {
                crate::cascade::one_hot(d.category).unwrap()
            }
        }
        let slides = vec![slide("a", &[(10.0, 10.0, 30.0, 30.0, Category::Hsil)])];
        let err =
            run_pipeline(&slides, &small_cfg(), &DetectorSource::Mock, Some(&Echo)).unwrap_err();
        assert!(err.to_string().contains("raster"), "{err}");
    }

    #[test]
    fn precomputed_must_not_mix_spaces() {
        let mut all = BTreeMap::new();
        all.insert(
            "a".to_string(),
            vec![
                Detection::certain(BBox::slide(0.0, 0.0, 5.0, 5.0).unwrap(), 0.9, Category::Mon)
                    .unwrap(),
                Detection::certain(
                    BBox::new(0.0, 0.0, 5.0, 5.0, Space::Tile(0)).unwrap(),
                    0.9,
                    Category::Mon,
                )
                .unwrap(),
            ],
        );
        let slides = vec![slide("a", &[])];
        assert!(run_pipeline(
            &slides,
            &small_cfg(),
            &DetectorSource::Precomputed(all),
            None
        )
        .is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let slides = vec![slide("a", &[]), slide("a", &[])];
        assert!(run_pipeline(&slides, &small_cfg(), &DetectorSource::Mock, None).is_err());
    }

    #[test]
    fn tile_granularity_runs() {
        let mut cfg = small_cfg();
        cfg.eval.granularity = Granularity::Tile;
        let slides = vec![slide("a", &[(10.0, 10.0, 30.0, 30.0, Category::Hsil)])];
        let out = run_pipeline(&slides, &cfg, &DetectorSource::Mock, None).unwrap();
        assert_eq!(out.report.ap(Category::Hsil), Some(1.0));
    }

    #[test]
    fn overlay_draws_in_class_colour() {
        let raster = RgbImage::new(400, 300);
        let d = Detection::certain(
            BBox::slide(10.0, 10.0, 30.0, 30.0).unwrap(),
            0.9,
            Category::Ade,
        )
        .unwrap();
        let img = render_overlay(&raster, &[d], &small_cfg().pyramid).unwrap();
        assert_eq!(*img.get_pixel(10, 10), Rgb([0, 0, 255]));
        assert_eq!(*img.get_pixel(25, 25), Rgb([0, 0, 0]));
    }
}
