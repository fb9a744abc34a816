//! Appearance and video-motion losses built on feature-set matching.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::FeatureExtractor;
use super::flow::FlowEstimator;
use super::ot::{ot_loss, ot_loss_on};
use super::FeatureSet;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// Random row subsets for the feature-set losses on the tape; `None` keeps every row.
#[derive(Clone, Debug)]
pub struct RowSampler {
    pub max_rows: Option<usize>,
    rng: ChaCha8Rng,
}

impl RowSampler {
    pub fn new(max_rows: Option<usize>, seed: u64) -> Self {
        Self {
            max_rows,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn full() -> Self {
        Self::new(None, 0)
    }

    /// Sorted row indices to keep out of `n`, or `None` for all.
    pub fn select(&mut self, n: usize) -> Option<Vec<usize>> {
        let k = self.max_rows?;
        if n <= k {
            return None;
        }
        let mut idx = sample(&mut self.rng, n, k).into_vec();
        idx.sort_unstable();
        Some(idx)
    }

    fn rows<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        match self.select(tape.value(x).cells()) {
            Some(idx) => tape.gather_rows(x, &idx),
            None => Ok(x),
        }
    }

    /// Matching loss between `x` and a constant target map.
    fn ot_on<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var, target: &Grid<T>) -> Result<Var> {
        let xs = self.rows(tape, x)?;
        let y = tape.constant(target.clone());
        let ys = self.rows(tape, y)?;
        ot_loss_on(tape, xs, ys)
    }
}

/// Feature maps of the appearance exemplar, computed once.
#[derive(Clone, Debug)]
pub struct AppearanceTarget<T = f32> {
    pub maps: Vec<Grid<T>>,
}

impl<T: Scalar> AppearanceTarget<T> {
    pub fn new(image: &Grid<T>, fx: &dyn FeatureExtractor<T>) -> Result<Self> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let maps = fx.extract_on(&mut tape, x)?;
        Ok(Self {
            maps: maps.into_iter().map(|v| tape.value(v).clone()).collect(),
        })
    }
}

fn per_image_appearance<T: Scalar>(image: &Grid<T>, target: &[FeatureSet<T>], fx: &dyn FeatureExtractor<T>) -> Result<T> {
    let feats = fx.extract(image)?;
    let mut total = T::zero();
    for (x, y) in feats.iter().zip(target) {
        total += ot_loss(x, y)?;
    }
    Ok(total)
}

/// Mean over frames of the summed per-level structure and moment terms.
pub fn appearance_loss<T: Scalar>(frames: &[Grid<T>], target: &Grid<T>, fx: &dyn FeatureExtractor<T>) -> Result<T> {
    if frames.is_empty() {
        return Err(Error::Invalid("appearance loss needs at least one frame".into()));
    }
    let tf = fx.extract(target)?;
    let mut total = T::zero();
    for f in frames {
        total += per_image_appearance(f, &tf, fx)?;
    }
    Ok(total / T::count(frames.len()))
}

/// [`appearance_loss`] on the tape, frames given as `H × W × 3` nodes in `[0, 1]`.
pub fn appearance_loss_on<T: Scalar>(
    tape: &mut Tape<T>,
    frames: &[Var],
    target: &AppearanceTarget<T>,
    fx: &dyn FeatureExtractor<T>,
    sampler: &mut RowSampler,
) -> Result<Var> {
    if frames.is_empty() {
        return Err(Error::Invalid("appearance loss needs at least one frame".into()));
    }
    let mut terms = Vec::new();
    for &f in frames {
        let maps = fx.extract_on(tape, f)?;
        for (x, y) in maps.into_iter().zip(&target.maps) {
            terms.push(sampler.ot_on(tape, x, y)?);
        }
    }
    let total = sum_vars(tape, &terms)?;
    Ok(tape.scale(total, T::one() / T::count(frames.len())))
}

fn sum_vars<T: Scalar>(tape: &mut Tape<T>, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// Mean over consecutive pairs of the matching loss between flow features.
pub fn mvid_loss<T: Scalar>(
    gen_pairs: &[(Grid<T>, Grid<T>)],
    tgt_pairs: &[(Grid<T>, Grid<T>)],
    flow: &dyn FlowEstimator<T>,
) -> Result<T> {
    check_pairs(gen_pairs.len(), tgt_pairs.len())?;
    let mut total = T::zero();
    for ((ga, gb), (ta, tb)) in gen_pairs.iter().zip(tgt_pairs) {
        total += ot_loss(&flow.features(ga, gb)?, &flow.features(ta, tb)?)?;
    }
    Ok(total / T::count(gen_pairs.len()))
}

fn check_pairs(g: usize, t: usize) -> Result<()> {
    if g == 0 || g != t {
        return Err(Error::Invalid(format!(
            "need matching non-zero pair counts, got {g} generated and {t} target"
        )));
    }
    Ok(())
}

/// Flow features of the target pairs, computed once.
pub fn target_motion_features<T: Scalar>(
    pairs: &[(Grid<T>, Grid<T>)],
    flow: &dyn FlowEstimator<T>,
) -> Result<Vec<Grid<T>>> {
    pairs
        .iter()
        .map(|(a, b)| {
            let mut tape = Tape::new();
            let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
            let f = flow.features_on(&mut tape, va, vb)?;
            Ok(tape.value(f).clone())
        })
        .collect()
}

/// [`mvid_loss`] on the tape against precomputed target features.
pub fn mvid_loss_on<T: Scalar>(
    tape: &mut Tape<T>,
    gen_pairs: &[(Var, Var)],
    target_features: &[Grid<T>],
    flow: &dyn FlowEstimator<T>,
    sampler: &mut RowSampler,
) -> Result<Var> {
    check_pairs(gen_pairs.len(), target_features.len())?;
    let mut terms = Vec::new();
    for (&(a, b), y) in gen_pairs.iter().zip(target_features) {
        let x = flow.features_on(tape, a, b)?;
        terms.push(sampler.ot_on(tape, x, y)?);
    }
    let total = sum_vars(tape, &terms)?;
    Ok(tape.scale(total, T::one() / T::count(gen_pairs.len())))
}
