//! JSONL record formats for ground truth, detections and slide labels, plus
//! report writers.
//!
//! One JSON object per line; blank lines are skipped. Boxes are `[x, y, w, h]`
//! with `(x, y)` the top-left corner. Category names are the lower-case names
//! of [`Category`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::category::{Category, NUM_CLASSES};
use crate::detection::{Detection, GroundTruthBox};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::geometry::{BBox, Space};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub bbox: [f64; 4],
    pub category: Category,
}

impl GroundTruthRecord {
    pub fn from_gt(gt: &GroundTruthBox) -> GroundTruthRecord {
        let b = &gt.bbox;
        GroundTruthRecord {
            image_id: gt.image_id.clone(),
            bbox: [b.x, b.y, b.w, b.h],
            category: gt.category,
        }
    }

    pub fn to_gt(&self) -> Result<GroundTruthBox> {
        let [x, y, w, h] = self.bbox;
        Ok(GroundTruthBox::new(
            BBox::slide(x, y, w, h)?,
            self.category,
            self.image_id.clone(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image_id: String,
    /// Present when the box is in the frame of a pyramid tile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_id: Option<u32>,
    pub bbox: [f64; 4],
    pub category: Category,
    pub objectness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<[f64; NUM_CLASSES]>,
    /// Fused final score.
    pub score: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub relabeled: bool,
}

impl DetectionRecord {
    pub fn from_detection(image_id: &str, det: &Detection) -> DetectionRecord {
        let b = &det.bbox;
        DetectionRecord {
            image_id: image_id.to_string(),
            tile_id: match b.space {
                Space::Tile(id) => Some(id),
                _ => None,
            },
            bbox: [b.x, b.y, b.w, b.h],
            category: det.category,
            objectness: det.objectness,
            scores: det.class_scores,
            score: det.final_score,
            relabeled: det.relabeled,
        }
    }

    pub fn to_detection(&self) -> Result<Detection> {
        let [x, y, w, h] = self.bbox;
        let space = self.tile_id.map_or(Space::Slide, Space::Tile);
        Detection::from_parts(
            BBox::new(x, y, w, h, space)?,
            self.objectness,
            self.scores,
            self.category,
            self.score,
            self.relabeled,
        )
    }
}

/// Slide-level truth for triage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub image_id: String,
    pub positive: bool,
}

/// Parses JSONL, reporting the 1-based line of the first malformed record.
pub fn read_jsonl<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>> {
    let reader = BufReader::new(reader);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(writer: W, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e: std::io::Error| Error::io("<jsonl>", e);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Converts parsed records, attaching the record's line to any validation error.
fn convert<T, U>(records: Vec<(usize, T)>, f: impl Fn(&T) -> Result<U>) -> Result<Vec<U>> {
    records
        .into_iter()
        .map(|(line, r)| {
            f(&r).map_err(|e| Error::Schema {
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

fn read_numbered<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthBox>> {
    convert(read_numbered::<GroundTruthRecord>(path)?, |r| r.to_gt())
}

/// Detections with their image ids, in file order.
pub fn read_detections(path: &Path) -> Result<Vec<(String, Detection)>> {
    convert(read_numbered::<DetectionRecord>(path)?, |r| {
        Ok((r.image_id.clone(), r.to_detection()?))
    })
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    Ok(read_numbered::<LabelRecord>(path)?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

pub fn write_ground_truth<W: Write>(writer: W, gts: &[GroundTruthBox]) -> Result<()> {
    let recs: Vec<_> = gts.iter().map(GroundTruthRecord::from_gt).collect();
    write_jsonl(writer, &recs)
}

/// Writes detections grouped by image, images in key order.
pub fn write_detections<W: Write>(
    writer: W,
    dets: &BTreeMap<String, Vec<Detection>>,
) -> Result<()> {
    let recs: Vec<_> = dets
        .iter()
        .flat_map(|(id, ds)| {
            ds.iter()
                .map(move |d| DetectionRecord::from_detection(id, d))
        })
        .collect();
    write_jsonl(writer, &recs)
}

pub fn group_gts(gts: Vec<GroundTruthBox>) -> BTreeMap<String, Vec<GroundTruthBox>> {
    let mut out: BTreeMap<String, Vec<GroundTruthBox>> = BTreeMap::new();
    for g in gts {
        out.entry(g.image_id.clone()).or_default().push(g);
    }
    out
}

pub fn group_detections(dets: Vec<(String, Detection)>) -> BTreeMap<String, Vec<Detection>> {
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (id, d) in dets {
        out.entry(id).or_default().push(d);
    }
    out
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Contract(format!("serialising report: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// `recall,precision` rows for one class.
pub fn pr_curve_csv(report: &EvalReport, class: Category) -> String {
    let mut s = String::from("recall,precision\n");
    for [r, p] in &report.class(class).pr_curve {
        s.push_str(&format!("{r},{p}\n"));
    }
    s
}
