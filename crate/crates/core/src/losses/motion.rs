//! Vector-field motion losses and the overflow penalty.

use crate::autodiff::{sign, CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// Per-cell motion `(u, v)` in cells per frame; `u` points right, `v` down.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T = f32> {
    grid: Grid<T>,
}

impl<T: Scalar> FlowField<T> {
    pub fn new(grid: Grid<T>) -> Result<Self> {
        if grid.channels() != 2 {
            return Err(Error::Shape(format!("flow field needs 2 channels, got {:?}", grid.shape())));
        }
        Ok(Self { grid })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self { grid: Grid::zeros(h, w, 2) }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> (T, T)) -> Self {
        let mut grid = Grid::zeros(h, w, 2);
        for r in 0..h {
            for c in 0..w {
                let (u, v) = f(r, c);
                grid.pixel_mut(r, c).copy_from_slice(&[u, v]);
            }
        }
        Self { grid }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn into_grid(self) -> Grid<T> {
        self.grid
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn at(&self, r: usize, c: usize) -> (T, T) {
        let p = self.grid.pixel(r, c);
        (p[0], p[1])
    }

    /// Mean of the per-cell L2 norms.
    pub fn mean_norm(&self) -> T {
        let n = self.grid.cells();
        self.grid.data().chunks_exact(2).map(|p| p[0].hypot(p[1])).sum::<T>() / T::count(n)
    }

    /// Mean of the `u` and `v` components.
    pub fn mean_uv(&self) -> (T, T) {
        let n = T::count(self.grid.cells());
        let (su, sv) = self
            .grid
            .data()
            .chunks_exact(2)
            .fold((T::zero(), T::zero()), |(a, b), p| (a + p[0], b + p[1]));
        (su / n, sv / n)
    }

    pub fn cast<U: Scalar>(&self) -> FlowField<U> {
        FlowField { grid: self.grid.cast() }
    }
}

fn check_pair<T: Scalar>(a: &Grid<T>, b: &Grid<T>) -> Result<()> {
    if a.shape() != b.shape() || a.channels() != 2 {
        return Err(Error::Shape(format!("flow fields {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Cosine of two 2-vectors, 0 when either is zero.
fn cos2<T: Scalar>(a: &[T], b: &[T]) -> (T, T, T) {
    let (na, nb) = (a[0].hypot(a[1]), b[0].hypot(b[1]));
    if na == T::zero() || nb == T::zero() {
        return (T::zero(), na, nb);
    }
    ((a[0] * b[0] + a[1] * b[1]) / (na * nb), na, nb)
}

fn dir_value<T: Scalar>(g: &Grid<T>, t: &Grid<T>) -> T {
    let s: T = g
        .data()
        .chunks_exact(2)
        .zip(t.data().chunks_exact(2))
        .map(|(a, b)| T::one() - cos2(a, b).0)
        .sum();
    s / T::count(g.cells())
}

/// Mean over cells of `1 − cos(Ug, Ut)`; a zero vector counts as distance 1.
pub fn dir_loss<T: Scalar>(ug: &FlowField<T>, ut: &FlowField<T>) -> Result<T> {
    check_pair(&ug.grid, &ut.grid)?;
    Ok(dir_value(&ug.grid, &ut.grid))
}

fn norm_scale<T: Scalar>(t1: u64, t2: u64, period: usize) -> Result<T> {
    if t2 <= t1 {
        return Err(Error::Invalid(format!("need t2 > t1, got t1={t1}, t2={t2}")));
    }
    Ok(T::count(period) / T::lit((t2 - t1) as f64))
}

fn norm_value<T: Scalar>(g: &Grid<T>, t: &Grid<T>, k: T) -> T {
    let s: T = g
        .data()
        .chunks_exact(2)
        .zip(t.data().chunks_exact(2))
        .map(|(a, b)| (k * a[0].hypot(a[1]) - b[0].hypot(b[1])).abs())
        .sum();
    s / T::count(g.cells())
}

/// Mean over cells of `|(T/(t2−t1))·‖Ug‖ − ‖Ut‖|`.
pub fn norm_loss<T: Scalar>(ug: &FlowField<T>, ut: &FlowField<T>, t1: u64, t2: u64, period: usize) -> Result<T> {
    check_pair(&ug.grid, &ut.grid)?;
    Ok(norm_value(&ug.grid, &ut.grid, norm_scale(t1, t2, period)?))
}

/// Components of the vector-field motion loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MvecTerms<T = f32> {
    pub dir: T,
    pub norm: T,
    pub total: T,
}

/// `(1 − min(1, L_dir))·L_norm + γ·L_dir`.
pub fn mvec_combine<T: Scalar>(dir: T, norm: T, gamma: T) -> T {
    (T::one() - dir.min(T::one())) * norm + gamma * dir
}

pub fn mvec_loss<T: Scalar>(
    ug: &FlowField<T>,
    ut: &FlowField<T>,
    t1: u64,
    t2: u64,
    period: usize,
    gamma: T,
) -> Result<MvecTerms<T>> {
    let dir = dir_loss(ug, ut)?;
    let norm = norm_loss(ug, ut, t1, t2, period)?;
    Ok(MvecTerms {
        dir,
        norm,
        total: mvec_combine(dir, norm, gamma),
    })
}

/// Mean of `|S − clip(S, −1, 1)|` over every entry.
pub fn overflow_loss<T: Scalar>(state: &Grid<T>) -> T {
    state.data().iter().map(|&v| overflow_entry(v)).sum::<T>() / T::count(state.len())
}

fn overflow_entry<T: Scalar>(v: T) -> T {
    (v - v.max(-T::one()).min(T::one())).abs()
}

struct DirOp;

impl<T: Scalar> CustomOp<T> for DirOp {
    fn backward(&self, inputs: &[&Grid<T>], _: &Grid<T>, grad: &Grid<T>) -> Vec<Option<Grid<T>>> {
        let (g, t) = (inputs[0], inputs[1]);
        let scale = grad.data()[0] / T::count(g.cells());
        let mut gg = Grid::zeros(g.height(), g.width(), 2);
        let mut gt = Grid::zeros(g.height(), g.width(), 2);
        for ((a, b), (da, db)) in g
            .data()
            .chunks_exact(2)
            .zip(t.data().chunks_exact(2))
            .zip(gg.data_mut().chunks_exact_mut(2).zip(gt.data_mut().chunks_exact_mut(2)))
        {
            let (cos, na, nb) = cos2(a, b);
            if na == T::zero() || nb == T::zero() {
                continue;
            }
            // d(1 − cos)/da = −(b̂ − cos·â)/‖a‖
            for k in 0..2 {
                da[k] = -scale * (b[k] / nb - cos * a[k] / na) / na;
                db[k] = -scale * (a[k] / na - cos * b[k] / nb) / nb;
            }
        }
        vec![Some(gg), Some(gt)]
    }
}

struct NormOp<T> {
    k: T,
}

impl<T: Scalar> CustomOp<T> for NormOp<T> {
    fn backward(&self, inputs: &[&Grid<T>], _: &Grid<T>, grad: &Grid<T>) -> Vec<Option<Grid<T>>> {
        let (g, t) = (inputs[0], inputs[1]);
        let scale = grad.data()[0] / T::count(g.cells());
        let mut gg = Grid::zeros(g.height(), g.width(), 2);
        let mut gt = Grid::zeros(g.height(), g.width(), 2);
        for ((a, b), (da, db)) in g
            .data()
            .chunks_exact(2)
            .zip(t.data().chunks_exact(2))
            .zip(gg.data_mut().chunks_exact_mut(2).zip(gt.data_mut().chunks_exact_mut(2)))
        {
            let (na, nb) = (a[0].hypot(a[1]), b[0].hypot(b[1]));
            let s = sign(self.k * na - nb) * scale;
            for k in 0..2 {
                if na > T::zero() {
                    da[k] = s * self.k * a[k] / na;
                }
                if nb > T::zero() {
                    db[k] = -s * b[k] / nb;
                }
            }
        }
        vec![Some(gg), Some(gt)]
    }
}

struct OverflowOp;

impl<T: Scalar> CustomOp<T> for OverflowOp {
    fn backward(&self, inputs: &[&Grid<T>], _: &Grid<T>, grad: &Grid<T>) -> Vec<Option<Grid<T>>> {
        let s = inputs[0];
        let scale = grad.data()[0] / T::count(s.len());
        let g = s.map(|v| {
            if v > T::one() {
                scale
            } else if v < -T::one() {
                -scale
            } else {
                T::zero()
            }
        });
        vec![Some(g)]
    }
}

fn check_vars<T: Scalar>(tape: &Tape<T>, a: Var, b: Var) -> Result<()> {
    check_pair(tape.value(a), tape.value(b))
}

/// [`dir_loss`] on the tape; `ug` and `ut` are `H × W × 2` nodes.
pub fn dir_loss_on<T: Scalar>(tape: &mut Tape<T>, ug: Var, ut: Var) -> Result<Var> {
    check_vars(tape, ug, ut)?;
    let v = dir_value(tape.value(ug), tape.value(ut));
    Ok(tape.custom(&[ug, ut], Grid::scalar(v), Box::new(DirOp)))
}

/// [`norm_loss`] on the tape.
pub fn norm_loss_on<T: Scalar>(tape: &mut Tape<T>, ug: Var, ut: Var, t1: u64, t2: u64, period: usize) -> Result<Var> {
    check_vars(tape, ug, ut)?;
    let k = norm_scale(t1, t2, period)?;
    let v = norm_value(tape.value(ug), tape.value(ut), k);
    Ok(tape.custom(&[ug, ut], Grid::scalar(v), Box::new(NormOp { k })))
}

/// Tape nodes of the vector-field motion loss.
#[derive(Clone, Copy, Debug)]
pub struct MvecVars {
    pub dir: Var,
    pub norm: Var,
    pub total: Var,
}

/// [`mvec_loss`] on the tape.
pub fn mvec_loss_on<T: Scalar>(
    tape: &mut Tape<T>,
    ug: Var,
    ut: Var,
    t1: u64,
    t2: u64,
    period: usize,
    gamma: T,
) -> Result<MvecVars> {
    let dir = dir_loss_on(tape, ug, ut)?;
    let norm = norm_loss_on(tape, ug, ut, t1, t2, period)?;
    let capped = tape.min_const(dir, T::one());
    let gate = tape.neg(capped);
    let gate = tape.add_scalar(gate, T::one());
    let gated = tape.mul(gate, norm)?;
    let weighted = tape.scale(dir, gamma);
    let total = tape.add(gated, weighted)?;
    Ok(MvecVars { dir, norm, total })
}

/// [`overflow_loss`] on the tape.
pub fn overflow_loss_on<T: Scalar>(tape: &mut Tape<T>, state: Var) -> Var {
    let v = overflow_loss(tape.value(state));
    tape.custom(&[state], Grid::scalar(v), Box::new(OverflowOp))
}
