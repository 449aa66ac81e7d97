//! Three-layer image pyramid, exact tile grids, and tile <-> slide mapping.
//!
//! Slide space is the coordinate frame of layer one. Every layer must share
//! layer one's aspect ratio, so the scale from a layer to the slide is a single
//! rational `num / den` (2.5 = 5/2 and 5 = 5/1 for the default spec). Mapping
//! multiplies by `num` and divides by `den` rather than multiplying by a rounded
//! decimal, which keeps round trips exact for coordinates on a binary-fraction
//! grid.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::GroundTruthBox;
use crate::error::{Error, Result};
use crate::geometry::{BBox, Space};
use crate::raster;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidSpec {
    /// `(width, height)` per layer, layer one first.
    pub layer_sizes: Vec<(u32, u32)>,
    pub tile_size: (u32, u32),
    /// Boundary-clipped ground truth is kept in a tile only when at least this
    /// fraction of its projected area survives the clip.
    pub min_clip_area_ratio: f64,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        PyramidSpec {
            layer_sizes: vec![(4000, 3000), (1600, 1200), (800, 600)],
            tile_size: (800, 600),
            min_clip_area_ratio: 0.3,
        }
    }
}

impl PyramidSpec {
    pub fn validate(&self) -> Result<()> {
        let (tw, th) = self.tile_size;
        if tw == 0 || th == 0 {
            return Err(Error::Config("tile size must be non-zero".into()));
        }
        let Some(&(w0, h0)) = self.layer_sizes.first() else {
            return Err(Error::Config("pyramid needs at least one layer".into()));
        };
        for (i, &(w, h)) in self.layer_sizes.iter().enumerate() {
            if w == 0 || h == 0 || w % tw != 0 || h % th != 0 {
                return Err(Error::Config(format!(
                    "layer {} ({w}x{h}) is not an exact multiple of the {tw}x{th} tile",
                    i + 1
                )));
            }
            if w as u64 * h0 as u64 != h as u64 * w0 as u64 {
                return Err(Error::Config(format!(
                    "layer {} ({w}x{h}) does not share layer one's aspect ratio",
                    i + 1
                )));
            }
        }
        if !(self.min_clip_area_ratio > 0.0 && self.min_clip_area_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "min_clip_area_ratio {} must lie in (0, 1]",
                self.min_clip_area_ratio
            )));
        }
        Ok(())
    }

    pub fn slide_size(&self) -> (u32, u32) {
        self.layer_sizes[0]
    }

    /// `(columns, rows)` of the tile grid on `layer`.
    pub fn grid(&self, layer: usize) -> (u32, u32) {
        let (w, h) = self.layer_sizes[layer];
        (w / self.tile_size.0, h / self.tile_size.1)
    }

    pub fn tile_count(&self) -> usize {
        (0..self.layer_sizes.len())
            .map(|l| {
                let (c, r) = self.grid(l);
                (c * r) as usize
            })
            .sum()
    }

    fn first_tile_id(&self, layer: usize) -> u32 {
        (0..layer)
            .map(|l| {
                let (c, r) = self.grid(l);
                c * r
            })
            .sum()
    }

    /// Reduced `(num, den)` with `num / den` = layer-one width / layer width.
    fn scale_ratio(&self, layer: usize) -> (u64, u64) {
        let num = self.layer_sizes[0].0 as u64;
        let den = self.layer_sizes[layer].0 as u64;
        let g = gcd(num, den);
        (num / g, den / g)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Where a tile sits in the pyramid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileMeta {
    pub tile_id: u32,
    pub layer_index: usize,
    pub grid_row: u32,
    pub grid_col: u32,
    /// Top-left corner in layer pixels.
    pub origin: (u32, u32),
    pub size: (u32, u32),
    /// Layer-one width over this layer's width.
    pub scale_to_slide: f64,
    /// `scale_to_slide` as an exact reduced fraction.
    pub scale_ratio: (u64, u64),
}

impl TileMeta {
    pub fn space(&self) -> Space {
        Space::Tile(self.tile_id)
    }
}

/// Tile geometry for the whole pyramid, layer-major then row-major.
pub fn plan_tiles(spec: &PyramidSpec) -> Result<Vec<TileMeta>> {
    spec.validate()?;
    Ok((0..spec.layer_sizes.len())
        .flat_map(|layer| layer_tiles(spec, layer))
        .collect())
}

fn layer_tiles(spec: &PyramidSpec, layer: usize) -> Vec<TileMeta> {
    let (cols, rows) = spec.grid(layer);
    let (tw, th) = spec.tile_size;
    let first = spec.first_tile_id(layer);
    let (num, den) = spec.scale_ratio(layer);
    let mut out = Vec::with_capacity((cols * rows) as usize);
    for row in 0..rows {
        for col in 0..cols {
            out.push(TileMeta {
                tile_id: first + row * cols + col,
                layer_index: layer,
                grid_row: row,
                grid_col: col,
                origin: (col * tw, row * th),
                size: (tw, th),
                scale_to_slide: num as f64 / den as f64,
                scale_ratio: (num, den),
            });
        }
    }
    out
}

/// Resizes `image` to every layer of the pyramid.
///
/// Inputs of any size are stretched to layer one's dimensions; the other
/// layers are resampled from the original input.
pub fn build_pyramid(image: &RgbImage, spec: &PyramidSpec) -> Result<Vec<RgbImage>> {
    spec.validate()?;
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::Contract("input raster has a zero dimension".into()));
    }
    spec.layer_sizes
        .par_iter()
        .map(|&(w, h)| raster::resize(image, w, h))
        .collect()
}

/// Splits one layer raster into its exact tile grid, row-major.
pub fn tile_layer(
    layer: &RgbImage,
    layer_index: usize,
    spec: &PyramidSpec,
) -> Result<Vec<(RgbImage, TileMeta)>> {
    spec.validate()?;
    let (tw, th) = spec.tile_size;
    if !layer.width().is_multiple_of(tw)
        || !layer.height().is_multiple_of(th)
        || layer.width() == 0
        || layer.height() == 0
    {
        return Err(Error::Contract(format!(
            "layer raster {}x{} is not divisible into {tw}x{th} tiles",
            layer.width(),
            layer.height()
        )));
    }
    match spec.layer_sizes.get(layer_index) {
        Some(&(w, h)) if (w, h) == (layer.width(), layer.height()) => {}
        _ => {
            return Err(Error::Contract(format!(
                "layer {} raster is {}x{}, which the pyramid spec does not declare",
                layer_index + 1,
                layer.width(),
                layer.height()
            )))
        }
    }
    Ok(layer_tiles(spec, layer_index)
        .into_par_iter()
        .map(|meta| {
            let tile = raster::copy_block(layer, meta.origin.0, meta.origin.1, tw, th);
            (tile, meta)
        })
        .collect())
}

/// Tiles every layer, layer-major then row-major.
pub fn tile_pyramid(layers: &[RgbImage], spec: &PyramidSpec) -> Result<Vec<(RgbImage, TileMeta)>> {
    if layers.len() != spec.layer_sizes.len() {
        return Err(Error::Contract(format!(
            "got {} layer rasters for a {}-layer pyramid",
            layers.len(),
            spec.layer_sizes.len()
        )));
    }
    let per_layer = layers
        .par_iter()
        .enumerate()
        .map(|(i, layer)| tile_layer(layer, i, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_layer.into_iter().flatten().collect())
}

fn to_slide(v: f64, offset: u32, (num, den): (u64, u64)) -> f64 {
    (v + offset as f64) * num as f64 / den as f64
}

fn to_tile(v: f64, offset: u32, (num, den): (u64, u64)) -> f64 {
    v * den as f64 / num as f64 - offset as f64
}

/// Maps a tile-space box into slide space.
pub fn tile_to_slide(bbox: &BBox, meta: &TileMeta) -> Result<BBox> {
    if bbox.space != meta.space() {
        return Err(Error::SpaceMismatch {
            left: bbox.space,
            right: meta.space(),
        });
    }
    let r = meta.scale_ratio;
    Ok(BBox {
        x: to_slide(bbox.x, meta.origin.0, r),
        y: to_slide(bbox.y, meta.origin.1, r),
        w: to_slide(bbox.w, 0, r),
        h: to_slide(bbox.h, 0, r),
        space: Space::Slide,
    })
}

/// Maps a slide-space box into a tile's frame (no clipping).
pub fn slide_to_tile(bbox: &BBox, meta: &TileMeta) -> Result<BBox> {
    if bbox.space != Space::Slide {
        return Err(Error::SpaceMismatch {
            left: bbox.space,
            right: Space::Slide,
        });
    }
    let r = meta.scale_ratio;
    Ok(BBox {
        x: to_tile(bbox.x, meta.origin.0, r),
        y: to_tile(bbox.y, meta.origin.1, r),
        w: to_tile(bbox.w, 0, r),
        h: to_tile(bbox.h, 0, r),
        space: meta.space(),
    })
}

/// A ground-truth box as seen from one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGroundTruth {
    /// Clipped to the tile, in tile space.
    pub gt: GroundTruthBox,
    /// Clipped area over the unclipped projected area.
    pub visible_fraction: f64,
}

/// Projects slide-space ground truth into every tile it touches.
///
/// Output is aligned with `tiles`. Boxes keep their slide order within a tile.
pub fn project_gt_to_tiles(
    gts: &[GroundTruthBox],
    tiles: &[TileMeta],
    spec: &PyramidSpec,
) -> Result<Vec<Vec<TileGroundTruth>>> {
    spec.validate()?;
    tiles
        .par_iter()
        .map(|meta| {
            let mut out = Vec::new();
            for gt in gts {
                let projected = slide_to_tile(&gt.bbox, meta)?;
                let full = projected.area();
                if full <= 0.0 {
                    continue;
                }
                let clipped = projected.clip_to(meta.size.0 as f64, meta.size.1 as f64);
                let fraction = clipped.area() / full;
                if clipped.area() > 0.0 && fraction >= spec.min_clip_area_ratio {
                    out.push(TileGroundTruth {
                        gt: GroundTruthBox {
                            bbox: clipped,
                            category: gt.category,
                            image_id: gt.image_id.clone(),
                        },
                        visible_fraction: fraction.min(1.0),
                    });
                }
            }
            Ok(out)
        })
        .collect()
}
