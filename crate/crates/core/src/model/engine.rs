//! Forward stepping of the automaton.

use image::RgbImage;
use rayon::prelude::*;

use super::config::DyncaConfig;
use super::mlp::MlpView;
use super::perception::{check_perception, coarse_levels, perception_row, PerceptionKernels, RowScratch, Steering};
use super::rule::UpdateRule;
use super::state::{NcaState, RngKey};
use crate::error::{Error, Result};
use crate::imaging::state_to_rgb8;
use crate::scalar::Scalar;

/// A configured automaton: config, weights and perception kernels.
#[derive(Clone, Debug)]
pub struct Engine<T = f32> {
    pub cfg: DyncaConfig,
    pub rule: UpdateRule<T>,
    pub kernels: PerceptionKernels<T>,
}

/// Result of a rollout: final state plus one RGB frame per frame interval.
#[derive(Clone, Debug)]
pub struct Rollout<T = f32> {
    pub state: NcaState<T>,
    pub frames: Vec<RgbImage>,
}

impl<T: Scalar> Engine<T> {
    pub fn new(cfg: DyncaConfig, rule: UpdateRule<T>) -> Result<Self> {
        cfg.validate()?;
        rule.check(&cfg)?;
        Ok(Self {
            cfg,
            rule,
            kernels: PerceptionKernels::default(),
        })
    }

    /// One stochastic residual update, `S ← S + MLP(z) ⊙ M` with `Δt = 1`.
    pub fn step(&self, state: &NcaState<T>, rng: &RngKey, steering: &Steering<T>) -> Result<NcaState<T>> {
        let mut next = state.clone();
        self.step_in_place(&mut next, rng, steering)?;
        Ok(next)
    }

    pub fn step_in_place(&self, state: &mut NcaState<T>, rng: &RngKey, steering: &Steering<T>) -> Result<()> {
        state.check(&self.cfg)?;
        let (h, w, c) = state.grid.shape();
        self.cfg.check_extent(h, w)?;
        check_perception(&state.grid, &self.cfg, steering)?;
        // Rows are updated in place, so perception reads a snapshot of the old state.
        let old = state.grid.clone();
        let levels = coarse_levels(&old, &self.kernels, self.cfg.padding, &self.cfg.scales);
        let in_dim = self.cfg.in_dim();
        let kernel = MlpView::new(&self.rule.w1, &self.rule.b1, &self.rule.w2);
        let step = state.step;
        let rate = self.cfg.update_rate;
        state.grid.data_mut().par_chunks_mut(w * c).enumerate().for_each_init(
            || (Vec::with_capacity(w), RowScratch::new(w, c), vec![T::zero(); w * in_dim]),
            |(active, scratch, z), (r, row)| {
                rng.active_cells(step, r, w, rate, active);
                if active.is_empty() {
                    return;
                }
                crate::simd::dispatch(#[inline(always)] || {
                    perception_row(&old, &self.cfg, &self.kernels, steering, &levels, r, scratch, z)
                });
                kernel.forward_row(z, row, active, None);
            },
        );
        state.step += 1;
        Ok(())
    }

    /// Runs `n` steps, emitting a frame after every `interval` steps.
    pub fn rollout_with(
        &self,
        state: &NcaState<T>,
        rng: &RngKey,
        steering: &Steering<T>,
        n: usize,
        interval: usize,
    ) -> Result<Rollout<T>> {
        if n == 0 {
            return Err(Error::Invalid("rollout needs at least one step".into()));
        }
        if interval == 0 {
            return Err(Error::Invalid("frame interval must be at least 1".into()));
        }
        let mut s = state.clone();
        let mut frames = Vec::with_capacity(n / interval);
        for i in 1..=n {
            self.step_in_place(&mut s, rng, steering)?;
            if i % interval == 0 {
                frames.push(state_to_rgb8(&s.grid));
            }
        }
        Ok(Rollout { state: s, frames })
    }

    pub fn rollout(&self, state: &NcaState<T>, rng: &RngKey, n: usize) -> Result<Rollout<T>> {
        self.rollout_with(state, rng, &Steering::None, n, self.cfg.frame_interval)
    }
}

/// One unsteered update step with the default perception kernels.
pub fn step<T: Scalar>(
    state: &NcaState<T>,
    rule: &UpdateRule<T>,
    cfg: &DyncaConfig,
    rng: &RngKey,
) -> Result<NcaState<T>> {
    Engine::new(cfg.clone(), rule.clone())?.step(state, rng, &Steering::None)
}

/// `n` steps with frames every `cfg.frame_interval` steps.
pub fn rollout<T: Scalar>(
    state: &NcaState<T>,
    rule: &UpdateRule<T>,
    cfg: &DyncaConfig,
    rng: &RngKey,
    n: usize,
) -> Result<Rollout<T>> {
    Engine::new(cfg.clone(), rule.clone())?.rollout(state, rng, n)
}
