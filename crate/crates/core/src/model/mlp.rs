//! Row kernels of the per-cell update MLP, shared by the engine and the tape.

use super::mlp_f32;
use crate::grid::Grid;
use crate::scalar::Scalar;

/// Borrowed MLP weights: `w1` is `in_dim × hidden`, `b1` is `hidden`, `w2` is `hidden × channels`.
#[derive(Clone, Copy)]
pub(crate) struct MlpView<'a, T> {
    pub w1: &'a [T],
    pub b1: &'a [T],
    pub w2: &'a [T],
    pub in_dim: usize,
    pub hidden: usize,
    pub channels: usize,
}

/// Parameter gradient accumulators; `w1` and `b1` are laid out like the
/// weights, `w2t` is the transposed second layer (`channels × hidden`).
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ParamGrads<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2t: Vec<T>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros(view: &MlpView<T>) -> Self {
        Self {
            w1: vec![T::zero(); view.w1.len()],
            b1: vec![T::zero(); view.b1.len()],
            w2t: vec![T::zero(); view.w2.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in [(&mut self.w1, &other.w1), (&mut self.b1, &other.b1), (&mut self.w2t, &other.w2t)] {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }
}

/// Transposed weights for the reverse pass: `w1t` is `hidden × stride` with
/// rows zero-padded from `in_dim` to a multiple of 32, `w2t` is `channels × hidden`.
pub(crate) struct Transposed<T> {
    pub w1t: Vec<T>,
    pub stride: usize,
    pub w2t: Vec<T>,
}

#[inline(always)]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = a.mul_add(xi, *yi);
    }
}

pub(crate) fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

impl<'a, T: Scalar> MlpView<'a, T> {
    pub fn new(w1: &'a Grid<T>, b1: &'a Grid<T>, w2: &'a Grid<T>) -> Self {
        Self {
            w1: w1.data(),
            b1: b1.data(),
            w2: w2.data(),
            in_dim: w1.height(),
            hidden: w1.width(),
            channels: w2.width(),
        }
    }

    /// Adds `relu(z·W1 + b1)·W2` to the `active` cells of `s_row`. When `save`
    /// is given, the hidden vector of the `i`-th active cell goes to `save[i·hidden..]`.
    pub fn forward_row(&self, z_row: &[T], s_row: &mut [T], active: &[usize], mut save: Option<&mut [T]>) {
        if let (Some(w1), Some(b1), Some(w2), Some(z)) = (
            T::f32_slice(self.w1),
            T::f32_slice(self.b1),
            T::f32_slice(self.w2),
            T::f32_slice(z_row),
        ) {
            let weights = mlp_f32::Weights {
                w1,
                b1,
                w2,
                in_dim: self.in_dim,
                hidden: self.hidden,
                channels: self.channels,
            };
            if let Some(s) = T::f32_slice_mut(s_row) {
                let save32 = save.as_deref_mut().and_then(T::f32_slice_mut);
                if mlp_f32::update_cells(&weights, z, s, active, save32) {
                    return;
                }
            }
        }
        let (n, hd, c) = (self.in_dim, self.hidden, self.channels);
        let mut scratch = vec![T::zero(); hd];
        let mut delta = vec![T::zero(); c];
        for (i, &col) in active.iter().enumerate() {
            let h: &mut [T] = match save.as_deref_mut() {
                Some(s) => &mut s[i * hd..(i + 1) * hd],
                None => &mut scratch,
            };
            h.copy_from_slice(self.b1);
            for (&zk, w_row) in z_row[col * n..(col + 1) * n].iter().zip(self.w1.chunks_exact(hd)) {
                for (acc, &wv) in h.iter_mut().zip(w_row) {
                    *acc += zk * wv;
                }
            }
            for x in h.iter_mut() {
                *x = x.max(T::zero());
            }
            delta.iter_mut().for_each(|d| *d = T::zero());
            for (&hj, w_row) in h.iter().zip(self.w2.chunks_exact(c)) {
                if hj > T::zero() {
                    for (d, &wv) in delta.iter_mut().zip(w_row) {
                        *d += hj * wv;
                    }
                }
            }
            for (x, &d) in s_row[col * c..(col + 1) * c].iter_mut().zip(&delta) {
                *x += d;
            }
        }
    }

    pub fn transposed(&self) -> Transposed<T> {
        let (n, hd, c) = (self.in_dim, self.hidden, self.channels);
        let stride = n.div_ceil(32) * 32;
        let mut w1t = vec![T::zero(); hd * stride];
        for i in 0..n {
            for j in 0..hd {
                w1t[j * stride + i] = self.w1[i * hd + j];
            }
        }
        Transposed {
            w1t,
            stride,
            w2t: transpose(self.w2, hd, c),
        }
    }

    /// Reverse pass for one row. `hidden` holds the saved activations of the
    /// active cells and `gd_row` the output gradient. Writes the input gradient
    /// of active cells into `gz_row` and accumulates into `grads`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_row(
        &self,
        tr: &Transposed<T>,
        z_row: &[T],
        hidden: &[T],
        gd_row: &[T],
        active: &[usize],
        gz_row: &mut [T],
        grads: &mut ParamGrads<T>,
    ) {
        if let (Some(w1t), Some(w2t), Some(z), Some(hid), Some(gd)) = (
            T::f32_slice(&tr.w1t),
            T::f32_slice(&tr.w2t),
            T::f32_slice(z_row),
            T::f32_slice(hidden),
            T::f32_slice(gd_row),
        ) {
            let k = mlp_f32::Reverse {
                w1t,
                stride: tr.stride,
                w2t,
                in_dim: self.in_dim,
                hidden: self.hidden,
                channels: self.channels,
            };
            if let (Some(gz), Some(gw1), Some(gb1), Some(gw2t)) = (
                T::f32_slice_mut(gz_row),
                T::f32_slice_mut(&mut grads.w1),
                T::f32_slice_mut(&mut grads.b1),
                T::f32_slice_mut(&mut grads.w2t),
            ) {
                if mlp_f32::backward_cells(&k, z, hid, gd, active, gz, gw1, gb1, gw2t) {
                    return;
                }
            }
        }
        let (n, hd, c) = (self.in_dim, self.hidden, self.channels);
        let mut dh = vec![T::zero(); hd];
        crate::simd::dispatch(
            #[inline(always)]
            || {
                for (i, &col) in active.iter().enumerate() {
                    let h = &hidden[i * hd..(i + 1) * hd];
                    let gd = &gd_row[col * c..(col + 1) * c];
                    let z = &z_row[col * n..(col + 1) * n];
                    dh.iter_mut().for_each(|x| *x = T::zero());
                    for ((&g, w), gw) in gd.iter().zip(tr.w2t.chunks_exact(hd)).zip(grads.w2t.chunks_exact_mut(hd)) {
                        axpy(&mut dh, g, w);
                        axpy(gw, g, h);
                    }
                    for (d, &hj) in dh.iter_mut().zip(h) {
                        if hj <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    grads.b1.iter_mut().zip(&dh).for_each(|(x, &d)| *x += d);
                    for (&zk, gw) in z.iter().zip(grads.w1.chunks_exact_mut(hd)) {
                        axpy(gw, zk, &dh);
                    }
                    let gz = &mut gz_row[col * n..(col + 1) * n];
                    for (&d, w) in dh.iter().zip(tr.w1t.chunks_exact(tr.stride)) {
                        axpy(gz, d, &w[..n]);
                    }
                }
            },
        )
    }
}
