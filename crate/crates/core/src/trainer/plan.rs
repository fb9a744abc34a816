use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::FlowField;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Motion from a target vector field.
    VectorField,
    /// Appearance and motion from one exemplar video.
    Video,
    /// Appearance from an image, motion from an unrelated video.
    StyleTransfer,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::VectorField => "vec",
            TrainMode::Video => "video",
            TrainMode::StyleTransfer => "style",
        }
    }

    pub fn uses_video(self) -> bool {
        !matches!(self, TrainMode::VectorField)
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vec" | "vector-field" => Ok(TrainMode::VectorField),
            "video" => Ok(TrainMode::Video),
            "style" | "style-transfer" => Ok(TrainMode::StyleTransfer),
            _ => Err(Error::Invalid(format!("unknown mode {s:?}, expected vec, video or style"))),
        }
    }
}

/// Which loss terms an epoch evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Objective {
    Full,
    /// Appearance and overflow terms only.
    AppearanceOnly,
    /// Overflow term only; for schedule dry runs.
    OverflowOnly,
}

/// Inclusive range of rollout lengths drawn per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepRange {
    pub lo: usize,
    pub hi: usize,
}

impl StepRange {
    pub fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.gen_range(self.lo..=self.hi)
    }
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub mode: TrainMode,
    pub epochs: usize,
    pub lr: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub batch: usize,
    /// Direction weight inside the vector-field motion loss.
    pub gamma: f64,
    pub overflow_weight: f64,
    /// Motion weight; the starting value when annealed.
    pub lambda: f64,
    /// Scale the motion weight with appearance progress (vector-field mode).
    pub anneal_lambda: bool,
    pub steps: StepRange,
    pub pool_size: usize,
    pub reseed_period: usize,
    /// Row cap for the feature-set losses; `None` matches every row.
    pub max_rows: Option<usize>,
    pub objective: Objective,
    pub seed: u64,
}

impl TrainPlan {
    /// Defaults for `mode` at a square training seed of side `seed_side`.
    pub fn new(mode: TrainMode, seed_side: usize) -> Self {
        let video = mode.uses_video();
        Self {
            mode,
            epochs: 4000,
            lr: 1e-3,
            lr_milestones: vec![1000, 2000],
            lr_decay: 0.3,
            batch: if seed_side >= 256 { 3 } else { 4 },
            gamma: 1.5,
            overflow_weight: if video { 1.0 } else { 100.0 },
            lambda: if video { 5.0 } else { 10.0 },
            anneal_lambda: !video,
            steps: if video { StepRange::new(80, 144) } else { StepRange::new(32, 128) },
            pool_size: 256,
            reseed_period: 8,
            max_rows: Some(1024),
            objective: Objective::Full,
            seed: 0,
        }
    }

    /// Learning rate at a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.lr_decay.powi(k as i32)
    }

    /// Checks the plan against the frame interval `period` of the model.
    pub fn validate(&self, period: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return bad(format!("learning rate {} and decay {} must be positive", self.lr, self.lr_decay));
        }
        for (name, w) in [
            ("gamma", self.gamma),
            ("overflow weight", self.overflow_weight),
            ("lambda", self.lambda),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return bad(format!("{name} must be a non-negative number, got {w}"));
            }
        }
        if self.batch == 0 || self.batch > self.pool_size {
            return bad(format!("batch {} must lie in 1..={}", self.batch, self.pool_size));
        }
        if self.steps.lo == 0 || self.steps.lo > self.steps.hi {
            return bad(format!("bad step range {}..={}", self.steps.lo, self.steps.hi));
        }
        if self.mode.uses_video() && self.objective == Objective::Full && self.steps.lo <= period {
            return bad(format!(
                "video epochs need more than {period} steps, range starts at {}",
                self.steps.lo
            ));
        }
        if self.reseed_period == 0 {
            return bad("reseed period must be at least 1".into());
        }
        Ok(())
    }
}

/// Motion half of a training target.
#[derive(Clone, Debug)]
pub enum MotionTarget<T = f32> {
    Field(FlowField<T>),
    /// Ordered frames in `[0, 1]`.
    Video(Vec<Grid<T>>),
}

/// Appearance exemplar plus motion target.
#[derive(Clone, Debug)]
pub struct TargetSpec<T = f32> {
    /// RGB image in `[0, 1]`.
    pub appearance: Grid<T>,
    pub motion: MotionTarget<T>,
    pub lambda_override: Option<f64>,
}

impl<T: Scalar> TargetSpec<T> {
    pub fn check(&self, mode: TrainMode) -> Result<()> {
        if self.appearance.channels() != 3 {
            return Err(Error::Shape(format!(
                "appearance target needs 3 channels, got {}",
                self.appearance.channels()
            )));
        }
        match (&self.motion, mode.uses_video()) {
            (MotionTarget::Field(_), false) => Ok(()),
            (MotionTarget::Video(frames), true) if frames.len() >= 2 => Ok(()),
            (MotionTarget::Video(frames), true) => Err(Error::Invalid(format!(
                "target video needs at least 2 frames, got {}",
                frames.len()
            ))),
            (_, _) => Err(Error::Invalid(format!("motion target does not fit mode {mode}"))),
        }
    }
}

/// Motion weight from the median motion loss of a probe run; seeds up to 128
/// use `5.82·m − 1.05`, larger ones `6.04·m − 2.17`. Never below 0.05.
pub fn auto_lambda(median: f64, seed_side: usize) -> f64 {
    let (a, b) = if seed_side <= 128 { (5.82, -1.05) } else { (6.04, -2.17) };
    (a * median + b).max(0.05)
}

/// `λ₀ · min(1, current / initial)` over an appearance-loss history; an empty
/// or degenerate history keeps `λ₀`.
pub fn anneal_lambda_vec(lambda0: f64, history: &[f64]) -> f64 {
    match (history.first(), history.last()) {
        (Some(&first), Some(&last)) if first > 0.0 && last.is_finite() => lambda0 * (last / first).min(1.0),
        _ => lambda0,
    }
}

/// Median of a non-empty sample, averaging the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
