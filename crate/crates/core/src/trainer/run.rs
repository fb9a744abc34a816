use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::plan::{anneal_lambda_vec, auto_lambda, median, MotionTarget, Objective, TargetSpec, TrainMode, TrainPlan};
use super::pool::{CheckpointPool, PoolEntry};
use crate::autodiff::{adam_step, normalize_gradients, AdamState, RuleVars, Tape, Var};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::{
    appearance_loss_on, default_extractor, default_flow, mvec_loss_on, mvid_loss_on, overflow_loss_on,
    target_motion_features, AppearanceTarget, FeatureExtractor, FlowConfig, FlowEstimator, RowSampler,
};
use crate::model::{make_seed, DyncaConfig, PerceptionKernels, RngKey, Steering, UpdateRule};
use crate::scalar::Scalar;

/// Seed of the default random feature bank used for appearance matching.
pub const FEATURE_SEED: u64 = 0x5eed_f00d;

/// Motion weight of the probe run behind [`Trainer::auto_lambda`].
pub const PROBE_LAMBDA: f64 = 5.0;

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub appearance: f64,
    pub motion: f64,
    pub overflow: f64,
    pub lambda: f64,
    /// Rollout length of this epoch.
    pub steps: usize,
    pub reseeded: bool,
    /// Number of overflow terms in the loss, one per batch element.
    pub overflow_terms: usize,
    pub loss: f64,
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lr={:.6e} l_appr={:.6} l_motion={:.6} l_over={:.6} lambda={:.6}",
            self.epoch, self.lr, self.appearance, self.motion, self.overflow, self.lambda
        )
    }
}

enum MotionData<T> {
    Field(Grid<T>),
    Video(Vec<Grid<T>>),
}

struct ElementOut<T> {
    grads: [Grid<T>; 3],
    appearance: f64,
    motion: f64,
    overflow: f64,
    loss: f64,
    state: Grid<T>,
}

#[inline]
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One training run: rule, optimizer, pool and targets.
pub struct Trainer<T: Scalar = f32> {
    cfg: DyncaConfig,
    plan: TrainPlan,
    rule: UpdateRule<T>,
    adam: AdamState<T>,
    pool: CheckpointPool<T>,
    rng: ChaCha8Rng,
    epoch: usize,
    lambda0: f64,
    lambda: f64,
    appearance_history: Vec<f64>,
    kernels: PerceptionKernels<T>,
    fx: Box<dyn FeatureExtractor<T>>,
    flow: Box<dyn FlowEstimator<T>>,
    appearance: AppearanceTarget<T>,
    motion: MotionData<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(
        cfg: DyncaConfig,
        plan: TrainPlan,
        target: &TargetSpec<T>,
        fx: Box<dyn FeatureExtractor<T>>,
        flow: Box<dyn FlowEstimator<T>>,
    ) -> Result<Self> {
        cfg.validate()?;
        plan.validate(cfg.frame_interval)?;
        target.check(plan.mode)?;
        let seed = make_seed::<T>(&cfg, cfg.seed_h, cfg.seed_w)?;
        let motion = match &target.motion {
            MotionTarget::Field(field) => {
                if (field.height(), field.width()) != (cfg.seed_h, cfg.seed_w) {
                    return Err(Error::Shape(format!(
                        "target field {}x{} vs seed {}x{}",
                        field.height(),
                        field.width(),
                        cfg.seed_h,
                        cfg.seed_w
                    )));
                }
                MotionData::Field(field.grid().clone())
            }
            MotionTarget::Video(frames) => {
                let pairs: Vec<_> = frames.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
                MotionData::Video(if plan.objective == Objective::Full {
                    target_motion_features(&pairs, flow.as_ref())?
                } else {
                    Vec::new()
                })
            }
        };
        let appearance = AppearanceTarget::new(&target.appearance, fx.as_ref())?;
        let lambda0 = target.lambda_override.unwrap_or(plan.lambda);
        if !(lambda0 >= 0.0) || !lambda0.is_finite() {
            return Err(Error::Config(format!("lambda must be a non-negative number, got {lambda0}")));
        }
        let rule = UpdateRule::init(&cfg, plan.seed);
        let adam = AdamState::new(&rule.layers(), T::lit(plan.lr));
        let pool = CheckpointPool::new(seed.grid, plan.pool_size, plan.reseed_period)?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(mix(plan.seed, 1)),
            cfg,
            rule,
            adam,
            pool,
            epoch: 0,
            lambda0,
            lambda: lambda0,
            appearance_history: Vec::new(),
            kernels: PerceptionKernels::default(),
            fx,
            flow,
            appearance,
            motion,
            plan,
        })
    }

    /// Trainer with the random feature bank and the Horn–Schunck flow.
    pub fn with_defaults(cfg: DyncaConfig, plan: TrainPlan, target: &TargetSpec<T>) -> Result<Self> {
        Self::new(
            cfg,
            plan,
            target,
            Box::new(default_extractor::<T>(FEATURE_SEED)),
            Box::new(default_flow(FlowConfig::default())),
        )
    }

    pub fn cfg(&self) -> &DyncaConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &TrainPlan {
        &self.plan
    }

    pub fn rule(&self) -> &UpdateRule<T> {
        &self.rule
    }

    pub fn into_rule(self) -> UpdateRule<T> {
        self.rule
    }

    pub fn pool(&self) -> &CheckpointPool<T> {
        &self.pool
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Motion weight the next epoch will use.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Sets the motion weight, also as the annealing start.
    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda0 = lambda;
        self.lambda = lambda;
    }

    /// Fresh rule, optimizer, pool and random streams; targets are kept.
    pub fn reinitialize(&mut self) -> Result<()> {
        let seed = make_seed::<T>(&self.cfg, self.cfg.seed_h, self.cfg.seed_w)?;
        self.rule = UpdateRule::init(&self.cfg, self.plan.seed);
        self.adam = AdamState::new(&self.rule.layers(), T::lit(self.plan.lr));
        self.pool = CheckpointPool::new(seed.grid, self.plan.pool_size, self.plan.reseed_period)?;
        self.rng = ChaCha8Rng::seed_from_u64(mix(self.plan.seed, 1));
        self.epoch = 0;
        self.appearance_history.clear();
        self.lambda = self.lambda0;
        Ok(())
    }

    /// Runs `probe_epochs` at the probe weight, maps the median motion loss to
    /// a weight, then reinitializes and adopts that weight.
    pub fn auto_lambda(&mut self, probe_epochs: usize) -> Result<f64> {
        if !self.plan.mode.uses_video() {
            return Err(Error::Invalid("automatic motion weight applies to video targets".into()));
        }
        self.set_lambda(PROBE_LAMBDA);
        let mut losses = Vec::with_capacity(probe_epochs);
        for _ in 0..probe_epochs {
            losses.push(self.train_epoch()?.motion);
        }
        let m = median(&losses).unwrap_or(0.0);
        let lambda = auto_lambda(m, self.cfg.seed_h.max(self.cfg.seed_w));
        self.reinitialize()?;
        self.set_lambda(lambda);
        Ok(lambda)
    }

    /// Runs epochs until `plan.epochs` are done, reporting each one.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<()> {
        while self.epoch < self.plan.epochs {
            let m = self.train_epoch()?;
            on_epoch(&m);
        }
        Ok(())
    }

    /// One optimization step over a batch drawn from the pool.
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        let lr = self.plan.lr_at(epoch);
        self.adam.lr = T::lit(lr);
        let batch = self.pool.checkout(epoch, self.plan.batch, &mut self.rng)?;
        let steps = self.plan.steps.sample(&mut self.rng);
        let pair = match &self.motion {
            MotionData::Video(f) if !f.is_empty() => rand::Rng::gen_range(&mut self.rng, 0..f.len()),
            _ => 0,
        };
        let lambda = self.lambda;
        let outs: Vec<ElementOut<T>> = batch
            .entries
            .par_iter()
            .enumerate()
            .map(|(b, entry)| self.element(entry, mix(mix(self.plan.seed, epoch as u64 + 2), b as u64), steps, pair, lambda))
            .collect::<Result<_>>()?;

        let n = T::count(outs.len());
        let mut grads: Vec<Grid<T>> = outs[0].grads.to_vec();
        for o in &outs[1..] {
            for (g, h) in grads.iter_mut().zip(&o.grads) {
                g.data_mut().iter_mut().zip(h.data()).for_each(|(a, &b)| *a += b);
            }
        }
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|x| *x /= n);
        }
        normalize_gradients(&mut grads);
        adam_step(&mut self.rule.layers_mut(), &grads, &mut self.adam)?;

        let mean = |f: fn(&ElementOut<T>) -> f64| outs.iter().map(f).sum::<f64>() / outs.len() as f64;
        let metrics = EpochMetrics {
            epoch,
            lr,
            appearance: mean(|o| o.appearance),
            motion: mean(|o| o.motion),
            overflow: mean(|o| o.overflow),
            lambda,
            steps,
            reseeded: batch.reseeded,
            overflow_terms: outs.len(),
            loss: mean(|o| o.loss),
        };
        let returned = batch
            .entries
            .iter()
            .zip(outs)
            .map(|(e, o)| PoolEntry {
                state: o.state,
                age: e.age + steps as u64,
            })
            .collect();
        self.pool.checkin(&batch.indices, returned)?;

        if self.plan.mode == TrainMode::VectorField && self.plan.anneal_lambda && self.plan.objective == Objective::Full {
            self.appearance_history.push(metrics.appearance);
            self.lambda = anneal_lambda_vec(self.lambda0, &self.appearance_history);
        }
        self.epoch += 1;
        Ok(metrics)
    }

    /// Rollout, losses and gradients of one batch element.
    fn element(&self, entry: &PoolEntry<T>, key: u64, steps: usize, pair: usize, lambda: f64) -> Result<ElementOut<T>> {
        let mut tape = Tape::new();
        let rv = RuleVars::leaves(&mut tape, &self.rule);
        let rng = RngKey::new(key);
        let start = tape.constant(entry.state.clone());
        let gap = self.cfg.frame_interval;
        let mut x = start;
        let mut mid = start;
        for i in 0..steps {
            x = tape.nca_step(x, rv, &self.cfg, &self.kernels, &Steering::None, &rng, entry.age + i as u64)?;
            if self.plan.mode.uses_video() && i + 1 + gap == steps {
                mid = x;
            }
        }
        let objective = self.plan.objective;
        let sampler = |stream: u64| RowSampler::new(self.plan.max_rows, mix(key, stream));

        let over = overflow_loss_on(&mut tape, x);
        let mut loss = tape.scale(over, T::lit(self.plan.overflow_weight));
        let mut appearance = 0.0;
        let mut motion = 0.0;
        if objective != Objective::OverflowOnly {
            let img = tape.unit_rgb(x)?;
            let appr = appearance_loss_on(&mut tape, &[img], &self.appearance, self.fx.as_ref(), &mut sampler(10))?;
            appearance = tape.scalar(appr).as_f64();
            loss = tape.add(loss, appr)?;
            if objective == Objective::Full {
                let m = self.motion_loss(&mut tape, start, mid, img, steps, pair, &mut sampler(11))?;
                motion = tape.scalar(m).as_f64();
                let weighted = tape.scale(m, T::lit(lambda));
                loss = tape.add(loss, weighted)?;
            }
        }
        let grads = tape.backward(loss)?;
        Ok(ElementOut {
            grads: rv.as_array().map(|v| grads.wrt(&tape, v)),
            appearance,
            motion,
            overflow: tape.scalar(over).as_f64(),
            loss: tape.scalar(loss).as_f64(),
            state: tape.value(x).clone(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn motion_loss(
        &self,
        tape: &mut Tape<T>,
        start: Var,
        mid: Var,
        last: Var,
        steps: usize,
        pair: usize,
        sampler: &mut RowSampler,
    ) -> Result<Var> {
        match &self.motion {
            MotionData::Field(field) => {
                let first = tape.unit_rgb(start)?;
                let ug = self.flow.estimate_on(tape, first, last)?;
                let ut = tape.constant(field.clone());
                let terms = mvec_loss_on(
                    tape,
                    ug,
                    ut,
                    0,
                    steps as u64,
                    self.cfg.frame_interval,
                    T::lit(self.plan.gamma),
                )?;
                Ok(terms.total)
            }
            MotionData::Video(features) => {
                let first = tape.unit_rgb(mid)?;
                mvid_loss_on(tape, &[(first, last)], &features[pair..pair + 1], self.flow.as_ref(), sampler)
            }
        }
    }
}
