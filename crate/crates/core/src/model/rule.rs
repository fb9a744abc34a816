use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::DyncaConfig;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// Weights of the per-cell two-layer MLP.
///
/// Matrices are single-channel grids: `w1` is `in_dim × hidden`, `b1` is
/// `1 × hidden`, `w2` is `hidden × channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateRule<T = f32> {
    pub w1: Grid<T>,
    pub b1: Grid<T>,
    pub w2: Grid<T>,
}

impl<T: Scalar> UpdateRule<T> {
    /// Fan-in uniform init for the first layer, zeros for the second.
    pub fn init(cfg: &DyncaConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (cfg.in_dim() as f64).sqrt();
        let mut draw = |n: usize| -> Vec<T> {
            (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect()
        };
        let w1 = draw(cfg.in_dim() * cfg.hidden);
        let b1 = draw(cfg.hidden);
        Self {
            w1: Grid::matrix(cfg.in_dim(), cfg.hidden, w1).unwrap(),
            b1: Grid::matrix(1, cfg.hidden, b1).unwrap(),
            w2: Grid::zeros(cfg.hidden, cfg.channels, 1),
        }
    }

    /// Random weights in both layers; used to get non-trivial dynamics in tests.
    pub fn random(cfg: &DyncaConfig, seed: u64, w2_scale: f64) -> Self {
        let mut rule = Self::init(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for w in rule.w2.data_mut() {
            *w = T::lit(rng.gen_range(-w2_scale..w2_scale));
        }
        rule
    }

    pub fn in_dim(&self) -> usize {
        self.w1.height()
    }

    pub fn hidden(&self) -> usize {
        self.w1.width()
    }

    pub fn channels(&self) -> usize {
        self.w2.width()
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len()
    }

    pub fn check(&self, cfg: &DyncaConfig) -> Result<()> {
        let ok = self.w1.shape() == (cfg.in_dim(), cfg.hidden, 1)
            && self.b1.shape() == (1, cfg.hidden, 1)
            && self.w2.shape() == (cfg.hidden, cfg.channels, 1);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "rule w1 {:?} b1 {:?} w2 {:?} does not fit config (in {}, hidden {}, channels {})",
                self.w1.shape(),
                self.b1.shape(),
                self.w2.shape(),
                cfg.in_dim(),
                cfg.hidden,
                cfg.channels
            )))
        }
    }

    /// Layers in a fixed order: `[w1, b1, w2]`.
    pub fn layers(&self) -> [&Grid<T>; 3] {
        [&self.w1, &self.b1, &self.w2]
    }

    pub fn layers_mut(&mut self) -> [&mut Grid<T>; 3] {
        [&mut self.w1, &mut self.b1, &mut self.w2]
    }

    pub fn cast<U: Scalar>(&self) -> UpdateRule<U> {
        UpdateRule {
            w1: self.w1.cast(),
            b1: self.b1.cast(),
            w2: self.w2.cast(),
        }
    }
}
