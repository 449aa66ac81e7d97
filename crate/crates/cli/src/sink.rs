//! Outputs are staged in memory and written in path order once the command
//! has succeeded, so a failed run leaves nothing behind.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use image::RgbImage;

use crate::RasterFormat;

#[derive(Default)]
pub struct Sink {
    files: BTreeMap<PathBuf, Vec<u8>>,
    stdout: Vec<u8>,
}

impl Sink {
    pub fn file(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.insert(path.into(), bytes.into());
    }

    /// Writes to `path`, or to stdout when there is none.
    pub fn file_or_stdout(&mut self, path: Option<&Path>, bytes: impl Into<Vec<u8>>) {
        match path {
            Some(p) => self.file(p, bytes),
            None => self.stdout.extend(bytes.into()),
        }
    }

    pub fn raster(
        &mut self,
        path: impl Into<PathBuf>,
        img: &RgbImage,
        format: RasterFormat,
    ) -> Result<()> {
        let mut buf = Vec::new();
        match format {
            RasterFormat::Png => {
                img.write_with_encoder(image::codecs::png::PngEncoder::new(&mut buf))?;
            }
            RasterFormat::Ppm => {
                write!(buf, "P6\n{} {}\n255\n", img.width(), img.height())?;
                buf.extend_from_slice(img.as_raw());
            }
        }
        self.file(path, buf);
        Ok(())
    }

    /// Takes over everything staged in `other`.
    pub fn absorb(&mut self, other: Sink) {
        self.files.extend(other.files);
        self.stdout.extend(other.stdout);
    }

    pub fn commit(self) -> Result<()> {
        for (path, bytes) in &self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(path, bytes).map_err(|e| cytoscreen::Error::io(path, e))?;
        }
        if !self.stdout.is_empty() {
            let mut out = std::io::stdout().lock();
            out.write_all(&self.stdout)?;
            out.flush()?;
        }
        Ok(())
    }
}

pub fn extension(format: RasterFormat) -> &'static str {
    match format {
        RasterFormat::Png => "png",
        RasterFormat::Ppm => "ppm",
    }
}
