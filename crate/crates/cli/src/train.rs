use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dynca::checkpoint::save_checkpoint;
use dynca::fields::{generate_field, FieldKind};
use dynca::grid::{bilinear_resize, Grid};
use dynca::imaging::{load_frame_dir, load_rgb};
use dynca::model::DyncaConfig;
use dynca::trainer::{MotionTarget, TargetSpec, TrainMode, TrainPlan, Trainer};

use crate::cli::{CliError, TrainArgs};

/// Steps per frame when the motion target is a video.
pub const VIDEO_FRAME_INTERVAL: usize = 64;

/// Everything a training run needs, resolved from the flags.
pub struct Prepared {
    pub cfg: DyncaConfig,
    pub plan: TrainPlan,
    pub target: TargetSpec<f32>,
    /// Run the motion-weight probe before training.
    pub probe: bool,
    pub log: PathBuf,
}

fn fit(g: Grid<f32>, side: usize) -> Grid<f32> {
    if (g.height(), g.width()) == (side, side) {
        g
    } else {
        bilinear_resize(&g, side, side)
    }
}

fn load_image(path: &Path, side: usize) -> Result<Grid<f32>, CliError> {
    Ok(fit(load_rgb(path)?, side))
}

fn load_video(dir: &Path, side: usize) -> Result<Vec<Grid<f32>>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!("motion video {} is not a directory of PNG frames", dir.display())));
    }
    let frames = load_frame_dir::<f32>(dir)?;
    if frames.len() < 2 {
        return Err(CliError::usage(format!(
            "motion video {} has {} PNG frames, need at least 2",
            dir.display(),
            frames.len()
        )));
    }
    Ok(frames.into_iter().map(|f| fit(f, side)).collect())
}

pub fn prepare(a: &TrainArgs) -> Result<Prepared, CliError> {
    let side = a.seed_size;
    let mut cfg = DyncaConfig::new(a.config).with_seed_size(side);
    if a.mode.uses_video() {
        cfg = cfg.with_frame_interval(VIDEO_FRAME_INTERVAL);
    }
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    cfg.check_extent(side, side).map_err(|e| CliError::usage(e.to_string()))?;

    let mut plan = TrainPlan::new(a.mode, side);
    plan.seed = a.seed;
    if let Some(n) = a.epochs {
        plan.epochs = n;
    }
    if let Some(b) = a.batch {
        plan.batch = b;
    }
    if let Some(p) = a.pool_size {
        plan.pool_size = p;
    }
    if let Some(l) = a.lambda {
        if !(l.is_finite() && l >= 0.0) {
            return Err(CliError::usage(format!("--lambda must be a non-negative number, got {l}")));
        }
    }

    let (appearance, motion) = match a.mode {
        TrainMode::VectorField => {
            let kind: FieldKind = a.motion.parse().map_err(|e: dynca::Error| CliError::usage(e.to_string()))?;
            let path = a
                .appearance
                .as_deref()
                .ok_or_else(|| CliError::usage("--appearance is required in vec mode"))?;
            (load_image(path, side)?, MotionTarget::Field(generate_field(kind, side, side)?))
        }
        TrainMode::Video => {
            let frames = load_video(Path::new(&a.motion), side)?;
            let appearance = match &a.appearance {
                Some(p) => load_image(p, side)?,
                None => frames[0].clone(),
            };
            (appearance, MotionTarget::Video(frames))
        }
        TrainMode::StyleTransfer => {
            let path = a
                .appearance
                .as_deref()
                .ok_or_else(|| CliError::usage("--appearance is required in style mode"))?;
            (load_image(path, side)?, MotionTarget::Video(load_video(Path::new(&a.motion), side)?))
        }
    };
    let target = TargetSpec {
        appearance,
        motion,
        lambda_override: a.lambda,
    };
    Ok(Prepared {
        probe: a.mode.uses_video() && a.lambda.is_none() && a.probe_epochs > 0,
        log: a.log.clone().unwrap_or_else(|| a.out.with_extension("log")),
        cfg,
        plan,
        target,
    })
}

pub fn run(a: &TrainArgs) -> Result<(), CliError> {
    let p = prepare(a)?;
    let mut trainer = Trainer::with_defaults(p.cfg.clone(), p.plan.clone(), &p.target)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let mut log = BufWriter::new(File::create(&p.log)?);
    if p.probe {
        let lambda = trainer.auto_lambda(a.probe_epochs)?;
        writeln!(log, "probe_epochs={} lambda={lambda:.6}", a.probe_epochs)?;
        eprintln!("motion weight from {}-epoch probe: {lambda:.4}", a.probe_epochs);
    }
    let started = Instant::now();
    let mut io_err = None;
    trainer.run(|m| {
        if io_err.is_none() {
            io_err = writeln!(log, "{m} steps={}", m.steps).err();
        }
        if a.report_every > 0 && (m.epoch + 1) % a.report_every == 0 {
            eprintln!("{m} ({:.0}s)", started.elapsed().as_secs_f64());
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    log.flush()?;
    save_checkpoint(trainer.rule(), trainer.cfg(), &a.out)?;
    eprintln!("wrote {} and {}", a.out.display(), p.log.display());
    Ok(())
}
