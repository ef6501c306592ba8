//! `physgrd`: synthetic data, PD calibration, simulation, force-model training
//! and evaluation from the command line.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use physgrd_core::{SimMode, SynthKind};

#[derive(Debug, Parser)]
#[command(name = "physgrd", version, about = "Physics-based ground reaction force toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Vertical gravity, m/s².
    #[arg(long, global = true, default_value_t = 9.81, allow_negative_numbers = true)]
    pub gravity_z: f64,
    /// PD simulation mode.
    #[arg(long, global = true, default_value = "closed_loop")]
    pub mode: SimMode,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    Gen(GenArgs),
    /// Grid-search PD gains on a dataset.
    Calibrate(CalibrateArgs),
    /// Simulate every clip with fixed gains.
    Simulate(SimulateArgs),
    /// Score predictions against plates and mocap.
    Metrics(MetricsArgs),
    /// Train the force predictor.
    Train(TrainArgs),
    /// Run a trained checkpoint on a dataset.
    Predict(PredictArgs),
    /// Write SVG overlays for one clip.
    Plot(PlotArgs),
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a, b] => Ok((
            a.trim().parse().map_err(|_| format!("bad number {a:?}"))?,
            b.trim().parse().map_err(|_| format!("bad number {b:?}"))?,
        )),
        _ => Err(format!("expected two comma-separated numbers, got {s:?}")),
    }
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad number {p:?}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected three comma-separated numbers, got {s:?}"))
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Motion kinds, comma separated: hop, walk, ballistic, spring_tracked.
    #[arg(long, value_delimiter = ',', default_value = "hop")]
    pub kind: Vec<SynthKind>,
    #[arg(long, default_value_t = 1)]
    pub subjects: usize,
    #[arg(long, default_value_t = 1)]
    pub clips_per_kind: usize,
    /// Vary mass, tempo and amplitude between subjects.
    #[arg(long)]
    pub vary_subjects: bool,
    /// Seconds per clip.
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub duration: f64,
    /// Frames per second.
    #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
    pub rate: f64,
    #[arg(long, default_value_t = 70.0, allow_negative_numbers = true)]
    pub mass: f64,
    #[arg(long, default_value_t = 4)]
    pub extra_features: usize,
    /// Hop frequency, Hz.
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub freq: f64,
    /// Hop apex height, m.
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 1.2, allow_negative_numbers = true)]
    pub walk_speed: f64,
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    pub stride_freq: f64,
    /// Generating gains for spring_tracked, `kp,kd`.
    #[arg(long, value_parser = parse_pair, default_value = "50,6", allow_negative_numbers = true)]
    pub gains: (f64, f64),
    /// Start position for ballistic and spring_tracked, `x,y,z`.
    #[arg(long, value_parser = parse_triple, allow_negative_numbers = true)]
    pub x0: Option<[f64; 3]>,
    /// Start velocity for ballistic, `x,y,z`.
    #[arg(long, value_parser = parse_triple, allow_negative_numbers = true)]
    pub v0: Option<[f64; 3]>,
    /// Fraction of leading frames without plate data.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub plate_dropout: f64,
    /// Standard deviation of plate noise, body weights.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub plate_noise: f64,
    /// Root x range covered by the plate, `lo,hi`.
    #[arg(long, value_parser = parse_pair, allow_negative_numbers = true)]
    pub plate_x_range: Option<(f64, f64)>,
    #[arg(long, default_value = "manifest.json")]
    pub manifest_name: String,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// kp values of a rectangular grid (requires --kd).
    #[arg(long, value_delimiter = ',', requires = "kd", allow_negative_numbers = true)]
    pub kp: Vec<f64>,
    /// kd values of a rectangular grid (requires --kp).
    #[arg(long, value_delimiter = ',', requires = "kp", allow_negative_numbers = true)]
    pub kd: Vec<f64>,
    /// Full product of the reference kp and kd values.
    #[arg(long, conflicts_with_all = ["kp", "kd"])]
    pub dense: bool,
    /// Additional `kp,kd` cell; repeatable.
    #[arg(long, value_parser = parse_pair, allow_negative_numbers = true)]
    pub extra_cell: Vec<(f64, f64)>,
}

#[derive(Debug, Args)]
pub struct GainArgs {
    /// `best_gains.json` written by calibrate.
    #[arg(long, conflicts_with_all = ["kp", "kd"])]
    pub gains: Option<PathBuf>,
    #[arg(long, requires = "kd", allow_negative_numbers = true)]
    pub kp: Option<f64>,
    #[arg(long, requires = "kp", allow_negative_numbers = true)]
    pub kd: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub gains: GainArgs,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long, requires = "pred_dir", conflicts_with_all = ["pred", "plate", "clip"])]
    pub manifest: Option<PathBuf>,
    /// Directory holding `<key>.pred.csv` files.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    /// Single prediction file (plate-format files are accepted too).
    #[arg(long, requires = "plate")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub plate: Option<PathBuf>,
    /// Clip file for vRPE in single-file mode.
    #[arg(long, requires = "pred")]
    pub clip: Option<PathBuf>,
    /// Body mass for `--clip`, kg.
    #[arg(long, default_value_t = 70.0)]
    pub mass: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub gains: GainArgs,
    #[arg(long, default_value_t = 11)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-5, allow_negative_numbers = true)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.002, allow_negative_numbers = true)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.005, allow_negative_numbers = true)]
    pub lambda2: f64,
    /// Training window, frames.
    #[arg(long, default_value_t = 240)]
    pub window: usize,
    #[arg(long, default_value_t = 128)]
    pub conv_width: usize,
    /// Hidden widths of the dense head, `a,b`.
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "64,32")]
    pub fc_hidden: Vec<usize>,
    /// Held-out subject; defaults to the first in sorted order.
    #[arg(long, conflicts_with = "all_folds")]
    pub test_subject: Option<String>,
    /// Train one model per leave-one-subject-out fold.
    #[arg(long)]
    pub all_folds: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Predict every clip instead of only the checkpoint's held-out subject.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Clip key, e.g. `S1_stationary_hopping_00`.
    #[arg(long)]
    pub key: String,
    /// Directory holding `<key>.pred.csv`.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    #[command(flatten)]
    pub gains: GainArgs,
}

/// Error caused by invalid user input; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn init_threads() -> Result<(), UsageError> {
    let Ok(value) = std::env::var("PHYSGRD_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("PHYSGRD_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| UsageError(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.render().to_string();
            eprintln!("{}", one_line(text.lines().next().unwrap_or("error: invalid usage")));
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let result = init_threads()
        .map_err(anyhow::Error::from)
        .and_then(|()| commands::run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", one_line(&format!("{err:#}")));
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
