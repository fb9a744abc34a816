//! Argument definitions and dispatch.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dynca::model::ModelSize;
use dynca::trainer::TrainMode;

/// Failure of a subcommand together with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    /// Bad flag values: exit code 2, like argument parsing errors.
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<dynca::Error> for CliError {
    fn from(e: dynca::Error) -> Self {
        Self::failed(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::failed(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "dynca", version, about = "Dynamic texture synthesis with neural cellular automata")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train a model on an appearance exemplar and a motion target.
    Train(TrainArgs),
    /// Render frames from trained weights, to PNG files or a live socket.
    Synthesize(SynthArgs),
    /// Measure steps per second of the update rule.
    Bench(BenchArgs),
    /// Write a target motion field as a flow-colour PNG and raw f32.
    ExportField(ExportArgs),
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    s.parse().map_err(|e: dynca::Error| e.to_string())
}

fn parse_size(s: &str) -> Result<ModelSize, String> {
    ModelSize::parse(s).ok_or_else(|| format!("unknown config {s:?}, expected S or L"))
}

/// `HxW` in cells.
pub fn parse_extent(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("size {s:?} is not HxW");
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// vec, video or style.
    #[arg(long, value_parser = parse_mode)]
    pub mode: TrainMode,
    /// Appearance exemplar image; in video mode defaults to the first frame.
    #[arg(long)]
    pub appearance: Option<PathBuf>,
    /// Field name (vec) or a directory of PNG frames (video, style).
    #[arg(long)]
    pub motion: String,
    /// Model size, S or L.
    #[arg(long, value_parser = parse_size, default_value = "S")]
    pub config: ModelSize,
    /// Side of the square training seed.
    #[arg(long, default_value_t = 128)]
    pub seed_size: usize,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log; defaults to the checkpoint path with a .log extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed motion weight; skips the automatic probe in video mode.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Epochs of the automatic motion-weight probe (video and style modes).
    #[arg(long, default_value_t = 1000)]
    pub probe_epochs: usize,
    /// Print a progress line every this many epochs (0 for none).
    #[arg(long, default_value_t = 100)]
    pub report_every: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Number of frames to write (offline mode).
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Grid size as HxW; defaults to the training seed size.
    #[arg(long, value_parser = parse_extent)]
    pub size: Option<(usize, usize)>,
    /// Output directory for numbered PNG frames.
    #[arg(long, conflicts_with = "serve", required_unless_present = "serve")]
    pub out: Option<PathBuf>,
    /// Address to stream frames on, e.g. 127.0.0.1:8080.
    #[arg(long)]
    pub serve: Option<String>,
    /// Seed of the update mask stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Steps per frame; defaults to the checkpoint's frame interval.
    #[arg(long)]
    pub t: Option<usize>,
    /// Frame rate cap when serving.
    #[arg(long)]
    pub max_fps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_parser = parse_size, default_value = "S")]
    pub config: ModelSize,
    /// Grid size as HxW, or a single side.
    #[arg(long, default_value = "128x128", value_parser = parse_side_or_extent)]
    pub size: (usize, usize),
    /// Steps per frame used for the FPS figure.
    #[arg(long = "T", default_value_t = 24)]
    pub t: usize,
    /// Benchmark these weights instead of a random rule of the chosen size.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub warmup: usize,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
}

fn parse_side_or_extent(s: &str) -> Result<(usize, usize), String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok((n, n)),
        _ => parse_extent(s),
    }
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// One of the twelve target field names.
    #[arg(long)]
    pub field: String,
    #[arg(long, default_value = "128x128", value_parser = parse_side_or_extent)]
    pub size: (usize, usize),
    /// Output prefix; writes PREFIX.png and PREFIX.f32.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::Train(a) => crate::train::run(&a),
        Cmd::Synthesize(a) => crate::synth::run(&a),
        Cmd::Bench(a) => crate::bench::run(&a),
        Cmd::ExportField(a) => crate::export::run(&a),
    }
}
