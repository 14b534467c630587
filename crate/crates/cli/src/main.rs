//! `monoflex`: synthetic scenes, head-map encoding and decoding, depth
//! ensembles and KITTI-style AP3D evaluation from the command line.
//!
//! Exit codes for every command:
//!
//! * `0` success
//! * `1` processing error (missing or malformed input file, unsatisfiable
//!   scene spec, I/O failure)
//! * `2` usage error (bad flag, malformed `--config` file, unknown class or mode)

mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};

/// Errors caused by how the tool was invoked rather than by the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_CODES: &str = "Exit codes: 0 success, 1 processing error (missing or malformed input, I/O), \
                          2 usage error (bad flags or config file)";

#[derive(Parser, Debug)]
#[command(name = "monoflex", version, about = "MonoFlex geometry, depth ensembles and AP3D evaluation", after_help = EXIT_CODES)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalArgs {
    /// JSON run configuration; flags given on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Base random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this)
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Feature-map stride S in pixels
    #[arg(long, global = true, value_name = "S")]
    stride: Option<u32>,
    /// Minimum heatmap score of a decoded detection
    #[arg(long, global = true, value_name = "T")]
    score_threshold: Option<f64>,
    /// Comma-separated class list
    #[arg(long, global = true, value_delimiter = ',', value_name = "A,B,..")]
    classes: Option<Vec<String>>,
    /// Depth mode: soft, hard, oracle or single:<direct|center|diag1|diag2>
    #[arg(long, global = true, value_name = "MODE")]
    ensemble: Option<String>,
    /// AP interpolation: r40 or r11
    #[arg(long, global = true, value_name = "MODE")]
    mode: Option<String>,
    /// Image size as WIDTHxHEIGHT [default: 1280x384]
    #[arg(long, global = true, value_name = "WxH", value_parser = parse_size)]
    image_size: Option<(u32, u32)>,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w: u32 = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: u32 = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("image size must be positive".into());
    }
    Ok((w, h))
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes as KITTI label_2/ and calib/ files
    #[command(after_help = EXIT_CODES)]
    Synth(commands::SynthArgs),
    /// Encode ground-truth labels into head-output maps
    #[command(after_help = EXIT_CODES)]
    Encode(commands::EncodeArgs),
    /// Decode head-output maps into KITTI prediction files
    #[command(after_help = EXIT_CODES)]
    Decode(commands::DecodeArgs),
    /// Add Gaussian noise to head-output maps
    #[command(after_help = EXIT_CODES)]
    Perturb(commands::PerturbArgs),
    /// Compute AP3D of predictions against ground truth
    #[command(after_help = EXIT_CODES)]
    Eval(commands::EvalArgs),
    /// Compare depth error and AP of each estimator and ensemble
    #[command(after_help = EXIT_CODES)]
    EnsembleReport(commands::ReportArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = cli.global;
    let overrides = Overrides {
        seed: g.seed,
        jobs: g.jobs,
        stride: g.stride,
        score_threshold: g.score_threshold,
        ensemble: g.ensemble,
        mode: g.mode,
        classes: g.classes,
        image_size: g.image_size,
    };
    let cfg = RunConfig::load(g.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth(a) => commands::synth(&cfg, &a),
        Command::Encode(a) => commands::encode(&cfg, &a),
        Command::Decode(a) => commands::decode(&cfg, &a),
        Command::Perturb(a) => commands::perturb(&cfg, &a),
        Command::Eval(a) => commands::eval(&cfg, &a),
        Command::EnsembleReport(a) => commands::ensemble_report(&cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
