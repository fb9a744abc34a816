//! Structure and moment matching between two feature sets.

use rayon::prelude::*;

use super::FeatureSet;
use crate::autodiff::{sign, CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

const ROW_BLOCK: usize = 16;

/// Unit-norm copies of the rows and the original norms; zero rows stay zero.
fn normalize_rows<T: Scalar>(x: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let mut out = x.to_vec();
    let mut norms = Vec::with_capacity(x.len() / c);
    for row in out.chunks_exact_mut(c) {
        let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if n > T::zero() {
            row.iter_mut().for_each(|v| *v /= n);
        }
        norms.push(n);
    }
    (out, norms)
}

/// Nearest neighbours in cosine distance, both directions. A zero row has
/// cosine 0 against nonzero rows and 1 against another zero row.
struct Matching<T> {
    xn: Vec<T>,
    yn: Vec<T>,
    x_norm: Vec<T>,
    y_norm: Vec<T>,
    /// For every row of X: best cosine over Y and its index.
    row_best: Vec<(T, usize)>,
    /// For every row of Y: best cosine over X and its index.
    col_best: Vec<(T, usize)>,
}

fn better<T: Scalar>(a: (T, usize), b: (T, usize)) -> (T, usize) {
    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

fn matching<T: Scalar>(x: &[T], y: &[T], c: usize) -> Matching<T> {
    let (xn, x_norm) = normalize_rows(x, c);
    let (yn, y_norm) = normalize_rows(y, c);
    let (n, m) = (x_norm.len(), y_norm.len());
    let mut yt = vec![T::zero(); m * c];
    for (j, row) in yn.chunks_exact(c).enumerate() {
        for (k, &v) in row.iter().enumerate() {
            yt[k * m + j] = v;
        }
    }
    let y_zero: Vec<bool> = y_norm.iter().map(|&v| v == T::zero()).collect();
    let worst = (-T::infinity(), usize::MAX);
    let blocks: Vec<(Vec<(T, usize)>, Vec<(T, usize)>)> = xn
        .par_chunks(ROW_BLOCK * c)
        .enumerate()
        .map(|(b, rows)| {
            let mut row_best = Vec::with_capacity(ROW_BLOCK);
            let mut col_best = vec![worst; m];
            let mut dots = vec![T::zero(); m];
            for (r, xi) in rows.chunks_exact(c).enumerate() {
                let i = b * ROW_BLOCK + r;
                crate::simd::dispatch(
                    #[inline(always)]
                    || {
                        dots.iter_mut().for_each(|d| *d = T::zero());
                        for (&a, col) in xi.iter().zip(yt.chunks_exact(m)) {
                            for (d, &bv) in dots.iter_mut().zip(col) {
                                *d = a.mul_add(bv, *d);
                            }
                        }
                    },
                );
                if x_norm[i] == T::zero() {
                    for (d, &z) in dots.iter_mut().zip(&y_zero) {
                        if z {
                            *d = T::one();
                        }
                    }
                }
                let mut best = worst;
                for (j, &d) in dots.iter().enumerate() {
                    best = better(best, (d, j));
                    col_best[j] = better(col_best[j], (d, i));
                }
                row_best.push(best);
            }
            (row_best, col_best)
        })
        .collect();
    let mut row_best = Vec::with_capacity(n);
    let mut col_best = vec![worst; m];
    for (rb, cb) in blocks {
        row_best.extend(rb);
        for (acc, b) in col_best.iter_mut().zip(cb) {
            *acc = better(*acc, b);
        }
    }
    Matching {
        xn,
        yn,
        x_norm,
        y_norm,
        row_best,
        col_best,
    }
}

fn mean_distance<T: Scalar>(best: &[(T, usize)]) -> T {
    best.iter().map(|&(cos, _)| T::one() - cos).sum::<T>() / T::count(best.len())
}

fn check_widths<T: Scalar>(x: &FeatureSet<T>, y: &FeatureSet<T>) -> Result<()> {
    if x.width() != y.width() {
        return Err(Error::Shape(format!(
            "feature widths differ: {} vs {}",
            x.width(),
            y.width()
        )));
    }
    Ok(())
}

/// `max(D(X,Y), D(Y,X))` with `D` the mean nearest-neighbour cosine distance.
/// A zero row is at distance 1 from nonzero rows and 0 from another zero row.
pub fn ot_structure<T: Scalar>(x: &FeatureSet<T>, y: &FeatureSet<T>) -> Result<T> {
    check_widths(x, y)?;
    let mt = matching(x.data(), y.data(), x.width());
    Ok(mean_distance(&mt.row_best).max(mean_distance(&mt.col_best)))
}

struct Moments<T> {
    mean: Vec<T>,
    cov: Vec<T>,
}

fn moments<T: Scalar>(x: &[T], c: usize) -> Moments<T> {
    let n = x.len() / c;
    let inv = T::one() / T::count(n);
    let mut mean = vec![T::zero(); c];
    for row in x.chunks_exact(c) {
        mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m *= inv);
    let cov = (0..c)
        .into_par_iter()
        .flat_map_iter(|a| {
            let mut acc = vec![T::zero(); c];
            for row in x.chunks_exact(c) {
                let da = row[a] - mean[a];
                for ((s, &v), &mu) in acc.iter_mut().zip(row).zip(&mean) {
                    *s += da * (v - mu);
                }
            }
            acc.into_iter().map(move |s| s * inv)
        })
        .collect();
    Moments { mean, cov }
}

fn moment_value<T: Scalar>(a: &Moments<T>, b: &Moments<T>, c: usize) -> T {
    let cf = T::count(c);
    let dm: T = a.mean.iter().zip(&b.mean).map(|(&p, &q)| (p - q).abs()).sum();
    let dc: T = a.cov.iter().zip(&b.cov).map(|(&p, &q)| (p - q).abs()).sum();
    dm / cf + dc / (cf * cf)
}

/// `(1/C)‖μX − μY‖₁ + (1/C²)‖ΣX − ΣY‖₁` with biased covariances.
pub fn ot_moment<T: Scalar>(x: &FeatureSet<T>, y: &FeatureSet<T>) -> Result<T> {
    check_widths(x, y)?;
    let c = x.width();
    Ok(moment_value(&moments(x.data(), c), &moments(y.data(), c), c))
}

/// `ot_structure + ot_moment`.
pub fn ot_loss<T: Scalar>(x: &FeatureSet<T>, y: &FeatureSet<T>) -> Result<T> {
    Ok(ot_structure(x, y)? + ot_moment(x, y)?)
}

struct StructureOp<T> {
    m: Matching<T>,
    /// Whether `D(X,Y)` is the larger term.
    forward: bool,
}

/// Gradient of `1 - cos(a, b)` with respect to `a`, scaled by `-g`.
fn cos_grad<T: Scalar>(out: &mut [T], a_hat: &[T], b_hat: &[T], a_norm: T, cos: T, g: T) {
    if a_norm == T::zero() {
        return;
    }
    let s = g / a_norm;
    for ((o, &a), &b) in out.iter_mut().zip(a_hat).zip(b_hat) {
        *o -= s * (b - cos * a);
    }
}

impl<T: Scalar> CustomOp<T> for StructureOp<T> {
    fn backward(&self, inputs: &[&Grid<T>], _: &Grid<T>, grad: &Grid<T>) -> Vec<Option<Grid<T>>> {
        let (x, y) = (inputs[0], inputs[1]);
        let c = x.channels();
        let m = &self.m;
        let mut gx = Grid::zeros(x.height(), x.width(), c);
        let mut gy = Grid::zeros(y.height(), y.width(), c);
        let g = grad.data()[0];
        let (best, a_hat, b_hat, a_norm, b_norm, ga, gb) = if self.forward {
            (&m.row_best, &m.xn, &m.yn, &m.x_norm, &m.y_norm, &mut gx, &mut gy)
        } else {
            (&m.col_best, &m.yn, &m.xn, &m.y_norm, &m.x_norm, &mut gy, &mut gx)
        };
        let gi = g / T::count(best.len());
        for (i, &(cos, j)) in best.iter().enumerate() {
            let (ai, bj) = (&a_hat[i * c..(i + 1) * c], &b_hat[j * c..(j + 1) * c]);
            cos_grad(&mut ga.data_mut()[i * c..(i + 1) * c], ai, bj, a_norm[i], cos, gi);
            cos_grad(&mut gb.data_mut()[j * c..(j + 1) * c], bj, ai, b_norm[j], cos, gi);
        }
        vec![Some(gx), Some(gy)]
    }
}

struct MomentOp<T> {
    mx: Moments<T>,
    my: Moments<T>,
}

/// Gradient of the moment term with respect to the set `x` whose moments are `own`.
fn moment_grad<T: Scalar>(x: &Grid<T>, own: &Moments<T>, other: &Moments<T>, g: T) -> Grid<T> {
    let c = x.channels();
    let n = x.cells();
    let cf = T::count(c);
    let inv_n = T::one() / T::count(n);
    let dmean: Vec<T> = own
        .mean
        .iter()
        .zip(&other.mean)
        .map(|(&a, &b)| g * sign(a - b) / cf * inv_n)
        .collect();
    let sc: Vec<T> = own
        .cov
        .iter()
        .zip(&other.cov)
        .map(|(&a, &b)| g * sign(a - b) / (cf * cf))
        .collect();
    // (S + Sᵀ)/n applied to centred rows.
    let mut sym = vec![T::zero(); c * c];
    for a in 0..c {
        for b in 0..c {
            sym[a * c + b] = (sc[a * c + b] + sc[b * c + a]) * inv_n;
        }
    }
    let mut out = Grid::zeros(x.height(), x.width(), c);
    out.data_mut()
        .par_chunks_mut(c)
        .zip(x.data().par_chunks(c))
        .for_each(|(o, row)| {
            let centred: Vec<T> = row.iter().zip(&own.mean).map(|(&v, &mu)| v - mu).collect();
            for (a, oa) in o.iter_mut().enumerate() {
                let srow = &sym[a * c..(a + 1) * c];
                *oa = dmean[a] + srow.iter().zip(&centred).map(|(&p, &q)| p * q).sum::<T>();
            }
        });
    out
}

impl<T: Scalar> CustomOp<T> for MomentOp<T> {
    fn backward(&self, inputs: &[&Grid<T>], _: &Grid<T>, grad: &Grid<T>) -> Vec<Option<Grid<T>>> {
        let g = grad.data()[0];
        vec![
            Some(moment_grad(inputs[0], &self.mx, &self.my, g)),
            Some(moment_grad(inputs[1], &self.my, &self.mx, g)),
        ]
    }
}

fn check_vars<T: Scalar>(tape: &Tape<T>, x: Var, y: Var) -> Result<()> {
    let (a, b) = (tape.value(x), tape.value(y));
    if a.channels() != b.channels() || a.is_empty() || b.is_empty() {
        return Err(Error::Shape(format!(
            "feature sets {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// [`ot_structure`] on the tape; every cell of `x` and `y` is one feature row.
pub fn ot_structure_on<T: Scalar>(tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
    check_vars(tape, x, y)?;
    let m = matching(tape.value(x).data(), tape.value(y).data(), tape.value(x).channels());
    let (dxy, dyx) = (mean_distance(&m.row_best), mean_distance(&m.col_best));
    let forward = dxy >= dyx;
    Ok(tape.custom(&[x, y], Grid::scalar(dxy.max(dyx)), Box::new(StructureOp { m, forward })))
}

/// [`ot_moment`] on the tape.
pub fn ot_moment_on<T: Scalar>(tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
    check_vars(tape, x, y)?;
    let c = tape.value(x).channels();
    let mx = moments(tape.value(x).data(), c);
    let my = moments(tape.value(y).data(), c);
    let value = moment_value(&mx, &my, c);
    Ok(tape.custom(&[x, y], Grid::scalar(value), Box::new(MomentOp { mx, my })))
}

/// `ot_structure + ot_moment` on the tape.
pub fn ot_loss_on<T: Scalar>(tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
    let s = ot_structure_on(tape, x, y)?;
    let m = ot_moment_on(tape, x, y)?;
    tape.add(s, m)
}
