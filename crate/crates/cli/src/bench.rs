use std::fmt;
use std::io::Write;
use std::time::Instant;

use dynca::checkpoint::load_checkpoint;
use dynca::model::{make_seed, DyncaConfig, Engine, RngKey, Steering, UpdateRule};

use crate::cli::{BenchArgs, CliError};

/// Throughput over the timed steps of one benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub steps_per_sec: f64,
    pub fps: f64,
    pub ms_per_step: f64,
    pub config: String,
    pub height: usize,
    pub width: usize,
    pub t: usize,
    pub steps: usize,
}

impl BenchReport {
    /// Derives the rates from a measured wall time.
    pub fn from_timing(config: &str, (height, width): (usize, usize), t: usize, steps: usize, secs: f64) -> Self {
        let steps_per_sec = steps as f64 / secs;
        Self {
            steps_per_sec,
            fps: steps_per_sec / t as f64,
            ms_per_step: 1000.0 * secs / steps as f64,
            config: config.to_owned(),
            height,
            width,
            t,
            steps,
        }
    }

    /// One `key=value` line.
    pub fn record(&self) -> String {
        format!(
            "steps_per_sec={:.3} fps={:.3} ms_per_step={:.4} config={} size={}x{} t={} steps={}",
            self.steps_per_sec, self.fps, self.ms_per_step, self.config, self.height, self.width, self.t, self.steps
        )
    }

    /// Parses a line written by [`BenchReport::record`].
    pub fn parse_record(line: &str) -> Option<Self> {
        let mut r = Self::from_timing("", (0, 0), 1, 1, 1.0);
        for kv in line.split_whitespace() {
            let (k, v) = kv.split_once('=')?;
            match k {
                "steps_per_sec" => r.steps_per_sec = v.parse().ok()?,
                "fps" => r.fps = v.parse().ok()?,
                "ms_per_step" => r.ms_per_step = v.parse().ok()?,
                "config" => r.config = v.to_owned(),
                "size" => {
                    let (h, w) = v.split_once('x')?;
                    r.height = h.parse().ok()?;
                    r.width = w.parse().ok()?;
                }
                "t" => r.t = v.parse().ok()?,
                "steps" => r.steps = v.parse().ok()?,
                _ => return None,
            }
        }
        Some(r)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>9} {:>3} {:>10} {:>8} {:>9}", "config", "size", "T", "steps/s", "FPS", "ms/step")?;
        write!(
            f,
            "{:<8} {:>9} {:>3} {:>10.1} {:>8.2} {:>9.3}",
            self.config,
            format!("{}x{}", self.height, self.width),
            self.t,
            self.steps_per_sec,
            self.fps,
            self.ms_per_step
        )
    }
}

/// Warms up, then times `steps` forward steps from a seed of the given size.
pub fn measure(
    engine: &Engine<f32>,
    size: (usize, usize),
    t: usize,
    warmup: usize,
    steps: usize,
) -> dynca::Result<BenchReport> {
    if steps == 0 || t == 0 {
        return Err(dynca::Error::Invalid("bench needs at least one timed step and T ≥ 1".into()));
    }
    let mut s = make_seed::<f32>(&engine.cfg, size.0, size.1)?;
    let rng = RngKey::new(0);
    for _ in 0..warmup {
        engine.step_in_place(&mut s, &rng, &Steering::None)?;
    }
    let start = Instant::now();
    for _ in 0..steps {
        engine.step_in_place(&mut s, &rng, &Steering::None)?;
    }
    let secs = start.elapsed().as_secs_f64();
    let id = if engine.cfg.channels == DyncaConfig::large().channels { "L" } else { "S" };
    Ok(BenchReport::from_timing(id, size, t, steps, secs))
}

pub fn run(a: &BenchArgs) -> Result<(), CliError> {
    let engine = match &a.weights {
        Some(p) => {
            let (rule, cfg) = load_checkpoint(p)?;
            Engine::new(cfg, rule)?
        }
        None => {
            let cfg = DyncaConfig::new(a.config);
            let rule = UpdateRule::random(&cfg, 0, 0.05);
            Engine::new(cfg, rule)?
        }
    };
    let report = measure(&engine, a.size, a.t, a.warmup, a.steps).map_err(|e| CliError::usage(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}\n{report}", report.record()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}
