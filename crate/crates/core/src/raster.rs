//! Bilinear resampling on RGB rasters.

use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Axis-aligned source rectangle in real pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Resizes the whole image to `width x height`.
pub fn resize(src: &RgbImage, width: u32, height: u32) -> Result<RgbImage> {
    if src.width() == width && src.height() == height {
        return Ok(src.clone());
    }
    let full = Region {
        x: 0.0,
        y: 0.0,
        w: src.width() as f64,
        h: src.height() as f64,
    };
    resample(src, full, width, height)
}

/// Samples `region` of `src` onto a `width x height` grid.
///
/// Bilinear with pixel centers at half-integer coordinates; samples falling
/// outside the source are clamped to the edge pixels.
pub fn resample(src: &RgbImage, region: Region, width: u32, height: u32) -> Result<RgbImage> {
    if src.width() == 0 || src.height() == 0 {
        return Err(Error::Contract("cannot resample an empty raster".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::Contract(format!(
            "resample target {width}x{height} is empty"
        )));
    }
    if !(region.w > 0.0 && region.h > 0.0) {
        return Err(Error::Contract(format!(
            "resample region {}x{} is empty",
            region.w, region.h
        )));
    }

    let sx = region.w / width as f64;
    let sy = region.h / height as f64;
    let max_x = src.width() as i64 - 1;
    let max_y = src.height() as i64 - 1;

    // (lower index, upper index, upper weight) per output column.
    let columns: Vec<(u32, u32, f64)> = (0..width)
        .map(|i| {
            let x = region.x + (i as f64 + 0.5) * sx - 0.5;
            let x0 = x.floor();
            let fx = x - x0;
            let lo = (x0 as i64).clamp(0, max_x) as u32;
            let hi = (x0 as i64 + 1).clamp(0, max_x) as u32;
            (lo, hi, fx)
        })
        .collect();

    let row_bytes = width as usize * 3;
    let mut buf = vec![0u8; row_bytes * height as usize];
    buf.par_chunks_mut(row_bytes)
        .enumerate()
        .for_each(|(j, row)| {
            let y = region.y + (j as f64 + 0.5) * sy - 0.5;
            let y0 = y.floor();
            let fy = y - y0;
            let top = (y0 as i64).clamp(0, max_y) as u32;
            let bottom = (y0 as i64 + 1).clamp(0, max_y) as u32;
            for (i, &(left, right, fx)) in columns.iter().enumerate() {
                let a = src.get_pixel(left, top);
                let b = src.get_pixel(right, top);
                let c = src.get_pixel(left, bottom);
                let d = src.get_pixel(right, bottom);
                for ch in 0..3 {
                    let upper = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                    let lower = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                    let v = upper * (1.0 - fy) + lower * fy;
                    row[i * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        });
    Ok(RgbImage::from_raw(width, height, buf).expect("buffer sized to dimensions"))
}

/// Copies the integer-aligned block at `(x, y)` of size `width x height`.
pub fn copy_block(src: &RgbImage, x: u32, y: u32, width: u32, height: u32) -> RgbImage {
    image::imageops::crop_imm(src, x, y, width, height).to_image()
}

/// Draws a rectangle outline `thickness` pixels wide, clipped to the image.
pub fn draw_rect(
    img: &mut RgbImage,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    thickness: u32,
    color: Rgb<u8>,
) {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    let x1 = x.round() as i64;
    let y1 = y.round() as i64;
    let x2 = (x + w).round() as i64;
    let y2 = (y + h).round() as i64;
    let t = thickness as i64;
    let mut put = |px: i64, py: i64| {
        if px >= 0 && py >= 0 && px < iw && py < ih {
            img.put_pixel(px as u32, py as u32, color);
        }
    };
    for k in 0..t {
        for px in x1..=x2 {
            put(px, y1 + k);
            put(px, y2 - k);
        }
        for py in y1..=y2 {
            put(x1 + k, py);
            put(x2 - k, py);
        }
    }
}
