use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::RgbImage;
use rayon::prelude::*;
use serde::Serialize;

use cytoscreen::anchors::kmeans_anchors;
use cytoscreen::cascade::HardClassifier;
use cytoscreen::eval::{
    evaluate, triage, triage_metrics, EvalConfig, EvalReport, Granularity, TriageMetrics,
};
use cytoscreen::fixtures::{generate_set, mock_classify};
use cytoscreen::io::{
    group_detections, group_gts, pr_curve_csv, read_detections, read_ground_truth, read_labels,
    to_json_pretty, write_detections, write_ground_truth, write_jsonl, LabelRecord,
};
use cytoscreen::pipeline::{render_overlay, run_pipeline, DetectorSource, SlideInput};
use cytoscreen::pyramid::{
    build_pyramid, plan_tiles, project_gt_to_tiles, tile_pyramid, PyramidSpec,
};
use cytoscreen::{Category, Detection, Error, GroundTruthBox, Space};

use crate::config::{load_set_spec, RunConfig};
use crate::sink::{extension, Sink};
use crate::{Cli, Command, Frame, OnOff, RasterFormat};

pub fn run(cli: &Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Some(RunConfig::load(p)?),
        None => None,
    };
    let pyramid = config
        .as_ref()
        .map(|c| c.pipeline.pyramid.clone())
        .unwrap_or_default();
    let mut sink = Sink::default();

    match &cli.command {
        Command::Tile { input, out, format } => tile(&mut sink, input, out, *format, &pyramid)?,
        Command::Anchors {
            gt,
            k,
            max_iter,
            frame,
            out,
        } => {
            let seed = cli.seed.unwrap_or(0);
            anchors(
                &mut sink,
                gt,
                *k,
                *max_iter,
                *frame,
                seed,
                out.as_deref(),
                &pyramid,
            )?
        }
        Command::Eval {
            gt,
            det,
            iou,
            credit,
            granularity,
            out,
            pr_dir,
        } => {
            let cfg = EvalConfig {
                iou_threshold: *iou,
                partial_credit: *credit == OnOff::On,
                granularity: match granularity {
                    Frame::Tile => Granularity::Tile,
                    Frame::Slide => Granularity::Slide,
                },
            };
            eval(
                &mut sink,
                gt,
                det,
                &cfg,
                &pyramid,
                out.as_deref(),
                pr_dir.as_deref(),
            )?
        }
        Command::Triage {
            det,
            labels,
            tau,
            out,
        } => triage_cmd(&mut sink, det, labels, *tau, out.as_deref())?,
        Command::Synth { spec, out, format } => synth(&mut sink, spec, out, *format, cli.seed)?,
        Command::Pipeline { out } => {
            let Some(mut cfg) = config else {
                bail!(Error::Config(
                    "pipeline needs --config or CYTOSCREEN_CONFIG".into()
                ));
            };
            if let Some(seed) = cli.seed {
                cfg.pipeline.noise.seed = seed;
            }
            if let Some(out) = out {
                cfg.output.dir = out.clone();
            }
            pipeline(&mut sink, &cfg)?
        }
    }
    sink.commit()
}

fn read_raster(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

fn json(value: &impl Serialize) -> Result<String> {
    Ok(to_json_pretty(value)?)
}

fn tile(
    sink: &mut Sink,
    input: &Path,
    out: &Path,
    format: RasterFormat,
    spec: &PyramidSpec,
) -> Result<()> {
    let img = read_raster(input)?;
    let layers = build_pyramid(&img, spec)?;
    let tiles = tile_pyramid(&layers, spec)?;
    let ext = extension(format);
    for (raster, meta) in &tiles {
        sink.raster(
            out.join(format!("tile_{:02}.{ext}", meta.tile_id)),
            raster,
            format,
        )?;
    }
    let metas: Vec<_> = tiles.iter().map(|(_, m)| *m).collect();
    sink.file(out.join("tiles.json"), json(&metas)?);
    Ok(())
}

#[derive(Serialize)]
struct AnchorsFile {
    k: usize,
    seed: u64,
    anchors: Vec<[f64; 2]>,
    mean_iou: f64,
}

#[allow(clippy::too_many_arguments)]
fn anchors(
    sink: &mut Sink,
    gt: &Path,
    k: usize,
    max_iter: usize,
    frame: Frame,
    seed: u64,
    out: Option<&Path>,
    spec: &PyramidSpec,
) -> Result<()> {
    let gts = read_ground_truth(gt)?;
    let dims: Vec<(f64, f64)> = match frame {
        Frame::Slide => gts.iter().map(|g| (g.bbox.w, g.bbox.h)).collect(),
        Frame::Tile => {
            let tiles = plan_tiles(spec)?;
            let mut dims = Vec::new();
            for boxes in group_gts(gts).values() {
                for tile in project_gt_to_tiles(boxes, &tiles, spec)? {
                    dims.extend(tile.iter().map(|t| (t.gt.bbox.w, t.gt.bbox.h)));
                }
            }
            dims
        }
    };
    let set = kmeans_anchors(&dims, k, seed, max_iter)?;
    let file = AnchorsFile {
        k: set.k,
        seed: set.seed,
        anchors: set.anchors.iter().map(|&(w, h)| [w, h]).collect(),
        mean_iou: set.mean_iou,
    };
    sink.file_or_stdout(out, json(&file)?);
    Ok(())
}

type Keyed<T> = BTreeMap<String, Vec<T>>;

/// Ground truth and detections keyed per tile (`<image_id>#<tile_id>`).
fn tile_keyed(
    gts: &Keyed<GroundTruthBox>,
    dets: Vec<(String, Detection)>,
    spec: &PyramidSpec,
) -> Result<(Keyed<Detection>, Keyed<GroundTruthBox>)> {
    let tiles = plan_tiles(spec)?;
    let mut tile_gts = BTreeMap::new();
    for (id, boxes) in gts {
        for (meta, projected) in tiles.iter().zip(project_gt_to_tiles(boxes, &tiles, spec)?) {
            tile_gts.insert(
                format!("{id}#{}", meta.tile_id),
                projected.into_iter().map(|t| t.gt).collect::<Vec<_>>(),
            );
        }
    }
    let mut tile_dets: Keyed<Detection> = BTreeMap::new();
    for (i, (id, d)) in dets.into_iter().enumerate() {
        let Space::Tile(t) = d.bbox.space else {
            bail!(Error::Contract(format!(
                "detection {} of {id} has no tile_id; tile granularity needs tile-space boxes",
                i + 1
            )));
        };
        if t as usize >= tiles.len() {
            bail!(Error::Contract(format!(
                "detection {} of {id} names unknown tile {t}",
                i + 1
            )));
        }
        tile_dets.entry(format!("{id}#{t}")).or_default().push(d);
    }
    Ok((tile_dets, tile_gts))
}

fn write_pr_curves(sink: &mut Sink, dir: &Path, report: &EvalReport) {
    for c in Category::ALL {
        sink.file(
            dir.join(format!("{}.csv", c.name())),
            pr_curve_csv(report, c),
        );
    }
}

fn eval(
    sink: &mut Sink,
    gt: &Path,
    det: &Path,
    cfg: &EvalConfig,
    spec: &PyramidSpec,
    out: Option<&Path>,
    pr_dir: Option<&Path>,
) -> Result<()> {
    let gts = group_gts(read_ground_truth(gt)?);
    let dets = read_detections(det)?;
    let report = match cfg.granularity {
        Granularity::Slide => {
            if let Some((i, (id, _))) = dets
                .iter()
                .enumerate()
                .find(|(_, (_, d))| d.bbox.space != Space::Slide)
            {
                bail!(Error::Contract(format!(
                    "detection {} of {id} is in tile space; slide granularity needs merged detections",
                    i + 1
                )));
            }
            evaluate(&group_detections(dets), &gts, cfg)?
        }
        Granularity::Tile => {
            let (d, g) = tile_keyed(&gts, dets, spec)?;
            evaluate(&d, &g, cfg)?
        }
    };
    sink.file_or_stdout(out, json(&report)?);
    if let Some(dir) = pr_dir {
        write_pr_curves(sink, dir, &report);
    }
    Ok(())
}

#[derive(Serialize)]
struct SlideCall {
    image_id: String,
    positive: bool,
    predicted: bool,
}

#[derive(Serialize)]
struct TriageFile {
    tau: f64,
    metrics: TriageMetrics,
    slides: Vec<SlideCall>,
}

fn triage_cmd(
    sink: &mut Sink,
    det: &Path,
    labels: &Path,
    tau: f64,
    out: Option<&Path>,
) -> Result<()> {
    let dets = group_detections(read_detections(det)?);
    let labels = read_labels(labels)?;
    let mut seen = BTreeSet::new();
    for l in &labels {
        if !seen.insert(l.image_id.as_str()) {
            bail!(Error::Contract(format!("{} is labelled twice", l.image_id)));
        }
    }
    if let Some(id) = dets.keys().find(|id| !seen.contains(id.as_str())) {
        bail!(Error::Contract(format!(
            "detections for {id}, which has no label"
        )));
    }
    let mut slides = Vec::with_capacity(labels.len());
    for l in &labels {
        let predicted = triage(dets.get(&l.image_id).map(Vec::as_slice).unwrap_or(&[]), tau)?;
        slides.push(SlideCall {
            image_id: l.image_id.clone(),
            positive: l.positive,
            predicted,
        });
    }
    slides.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let preds: Vec<bool> = slides.iter().map(|s| s.predicted).collect();
    let truth: Vec<bool> = slides.iter().map(|s| s.positive).collect();
    let file = TriageFile {
        tau,
        metrics: triage_metrics(&preds, &truth)?,
        slides,
    };
    sink.file_or_stdout(out, json(&file)?);
    Ok(())
}

#[derive(Serialize)]
struct ManifestSlide {
    image_id: String,
    seed: u64,
    raster: String,
    boxes: usize,
    positive: bool,
}

#[derive(Serialize)]
struct Manifest {
    base_seed: u64,
    spec: cytoscreen::fixtures::SetSpec,
    slides: Vec<ManifestSlide>,
}

fn synth(
    sink: &mut Sink,
    spec: &Path,
    out: &Path,
    format: RasterFormat,
    seed: Option<u64>,
) -> Result<()> {
    let mut spec = load_set_spec(spec)?;
    if let Some(s) = seed {
        spec.slide.seed = s;
    }
    let slides = generate_set(&spec)?;
    let ext = extension(format);

    let encoded: Vec<(PathBuf, Sink)> = slides
        .par_iter()
        .map(|s| {
            let rel = PathBuf::from("images").join(format!("{}.{ext}", s.image_id));
            let mut one = Sink::default();
            one.raster(out.join(&rel), &s.raster, format)?;
            Ok((rel, one))
        })
        .collect::<Result<_>>()?;
    let mut rels = Vec::with_capacity(encoded.len());
    for (rel, one) in encoded {
        sink.absorb(one);
        rels.push(rel);
    }

    let all_gts: Vec<GroundTruthBox> = slides.iter().flat_map(|s| s.gts.iter().cloned()).collect();
    let mut gt_bytes = Vec::new();
    write_ground_truth(&mut gt_bytes, &all_gts)?;
    sink.file(out.join("gt.jsonl"), gt_bytes);

    let labels: Vec<LabelRecord> = slides
        .iter()
        .map(|s| LabelRecord {
            image_id: s.image_id.clone(),
            positive: s.is_positive(),
        })
        .collect();
    let mut label_bytes = Vec::new();
    write_jsonl(&mut label_bytes, &labels)?;
    sink.file(out.join("labels.jsonl"), label_bytes);

    let manifest = Manifest {
        base_seed: spec.slide.seed,
        slides: slides
            .iter()
            .zip(rels)
            .map(|(s, rel)| ManifestSlide {
                image_id: s.image_id.clone(),
                seed: s.seed,
                raster: rel.to_string_lossy().replace('\\', "/"),
                boxes: s.gts.len(),
                positive: s.is_positive(),
            })
            .collect(),
        spec,
    };
    sink.file(out.join("manifest.json"), json(&manifest)?);
    Ok(())
}

fn find_raster(dir: &Path, id: &str) -> Result<PathBuf> {
    for ext in ["png", "ppm"] {
        let p = dir.join(format!("{id}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    let missing = dir.join(format!("{id}.png"));
    Err(Error::io(
        &missing,
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "no .png or .ppm raster for this image",
        ),
    )
    .into())
}

fn pipeline(sink: &mut Sink, cfg: &RunConfig) -> Result<()> {
    let gt_path = cfg
        .input
        .gt
        .as_ref()
        .ok_or_else(|| Error::Config("input.gt is required".into()))?;
    let gts = group_gts(read_ground_truth(gt_path)?);
    let labels: BTreeMap<String, bool> = match &cfg.input.labels {
        Some(p) => read_labels(p)?
            .into_iter()
            .map(|l| (l.image_id, l.positive))
            .collect(),
        None => BTreeMap::new(),
    };
    let source = match &cfg.input.detections {
        Some(p) => DetectorSource::Precomputed(group_detections(read_detections(p)?)),
        None => DetectorSource::Mock,
    };
    if cfg.classifier.is_some() && cfg.pipeline.cascade.enabled && cfg.input.images.is_none() {
        bail!(Error::Config(
            "the cascade needs input.images to crop from".into()
        ));
    }
    if cfg.output.overlays && cfg.input.images.is_none() {
        bail!(Error::Config("overlays need input.images".into()));
    }

    let mut ids: BTreeSet<String> = gts.keys().cloned().collect();
    ids.extend(labels.keys().cloned());
    if let DetectorSource::Precomputed(d) = &source {
        ids.extend(d.keys().cloned());
    }
    let ids: Vec<String> = ids.into_iter().collect();

    let rasters: Vec<Option<RgbImage>> = match &cfg.input.images {
        Some(dir) => ids
            .par_iter()
            .map(|id| read_raster(&find_raster(dir, id)?).map(Some))
            .collect::<Result<_>>()?,
        None => vec![None; ids.len()],
    };
    let slides: Vec<SlideInput> = ids
        .iter()
        .zip(rasters)
        .map(|(id, raster)| SlideInput {
            image_id: id.clone(),
            raster,
            gts: gts.get(id).cloned().unwrap_or_default(),
            label: labels.get(id).copied(),
        })
        .collect();

    let clf = cfg.classifier.as_ref().map(mock_classify).transpose()?;
    let clf_ref = clf.as_ref().map(|c| c as &dyn HardClassifier);
    let output =
        run_pipeline(&slides, &cfg.pipeline, &source, clf_ref).context("running the pipeline")?;

    let dir = &cfg.output.dir;
    sink.file(dir.join("report.json"), json(&output.report)?);
    let mut det_bytes = Vec::new();
    write_detections(&mut det_bytes, &output.detections())?;
    sink.file(dir.join("detections.jsonl"), det_bytes);
    if cfg.output.pr_curves {
        write_pr_curves(sink, &dir.join("pr"), &output.report);
    }
    if cfg.output.overlays {
        let rendered: Vec<Sink> = slides
            .par_iter()
            .zip(&output.slides)
            .map(|(s, r)| {
                let raster = s
                    .raster
                    .as_ref()
                    .expect("rasters loaded when overlays are on");
                let img = render_overlay(raster, &r.detections, &cfg.pipeline.pyramid)?;
                let mut one = Sink::default();
                one.raster(
                    dir.join("overlays").join(format!("{}.png", s.image_id)),
                    &img,
                    RasterFormat::Png,
                )?;
                Ok(one)
            })
            .collect::<Result<_>>()?;
        for one in rendered {
            sink.absorb(one);
        }
    }
    Ok(())
}
