use std::path::{Path, PathBuf};

use cytoscreen::fixtures::{MockClassifierSpec, SetSpec};
use cytoscreen::pipeline::PipelineConfig;
use cytoscreen::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub gt: Option<PathBuf>,
    /// Directory holding `<image_id>.png` (or `.ppm`) rasters.
    pub images: Option<PathBuf>,
    /// JSONL `{image_id, positive}`; defaults to "has a positive-class GT box".
    pub labels: Option<PathBuf>,
    /// Precomputed detections; the mock detector is used when absent.
    pub detections: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub overlays: bool,
    pub pr_curves: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            overlays: false,
            pr_curves: false,
        }
    }
}

/// Everything a run can be configured with. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputConfig,
    pub output: OutputConfig,
    /// Hard-example classifier; the cascade is skipped when absent.
    pub classifier: Option<MockClassifierSpec>,
    pub pipeline: PipelineConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> cytoscreen::Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| toml_error(path, &text, e))?;
        cfg.pipeline
            .validate()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.input.gt,
            &mut cfg.input.images,
            &mut cfg.input.labels,
            &mut cfg.input.detections,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        resolve(base, &mut cfg.output.dir);
        Ok(cfg)
    }
}

fn toml_error(path: &Path, text: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::Schema {
        line,
        message: format!("{}: {}", path.display(), e.message()),
    }
}

/// Reads a slide-set description: TOML when the extension is `.toml`, JSON otherwise.
pub fn load_set_spec(path: &Path) -> cytoscreen::Result<SetSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SetSpec = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| toml_error(path, &text, e))?
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        })?
    };
    spec.slide.validate()?;
    Ok(spec)
}
