//! `cytoscreen` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 missing or unreadable file, 3 malformed
//! input or config (with the offending line), 4 contract violation.

mod commands;
mod config;
mod sink;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "cytoscreen",
    version,
    about = "Cervical cytology screening toolkit"
)]
pub struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Overrides the seed of whichever stage is random.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Run configuration (TOML).
    #[arg(long, global = true, env = "CYTOSCREEN_CONFIG")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Frame {
    Tile,
    Slide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RasterFormat {
    Png,
    Ppm,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cut a slide raster into pyramid tiles plus a tiles.json manifest.
    Tile {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "png")]
        format: RasterFormat,
    },
    /// Cluster ground-truth box sizes into anchor priors.
    Anchors {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = cytoscreen::anchors::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = cytoscreen::anchors::DEFAULT_MAX_ITER)]
        max_iter: usize,
        /// Cluster box sizes as seen in pyramid tiles, or at slide scale.
        #[arg(long, value_enum, default_value = "tile")]
        frame: Frame,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score detections against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        det: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_enum, default_value = "off")]
        credit: OnOff,
        #[arg(long, value_enum, default_value = "slide")]
        granularity: Frame,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for one recall/precision CSV per class.
        #[arg(long)]
        pr_dir: Option<PathBuf>,
    },
    /// Call slides positive or negative and compare with their labels.
    Triage {
        #[arg(long)]
        det: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = cytoscreen::eval::DEFAULT_TAU)]
        tau: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded synthetic slide set.
    Synth {
        /// Set description, TOML or JSON.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "png")]
        format: RasterFormat,
    },
    /// Tile, detect, merge, relabel, evaluate and triage as configured.
    Pipeline {
        /// Overrides `output.dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use cytoscreen::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } => 2,
                Error::Image { source, .. } => {
                    if matches!(source, image::ImageError::IoError(_)) {
                        2
                    } else {
                        3
                    }
                }
                Error::Schema { .. } | Error::Config(_) | Error::UnknownCategory(_) => 3,
                Error::Contract(_) | Error::SpaceMismatch { .. } | Error::OutOfRange { .. } => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some()
            || cause.downcast_ref::<toml::de::Error>().is_some()
        {
            return 3;
        }
    }
    4
}

fn main() -> ExitCode {
    // clap would exit 2 on usage errors, which is reserved for missing files
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // core errors already include their source in the message
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
