use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// Scales each layer's gradient to unit L2 norm; all-zero layers stay zero.
pub fn normalize_gradients<T: Scalar>(grads: &mut [Grid<T>]) {
    for g in grads {
        let norm = g.data().iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm > T::zero() {
            g.data_mut().iter_mut().for_each(|x| *x /= norm);
        }
    }
}

/// Adam moments for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Grid<T>>,
    pub v: Vec<Grid<T>>,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub lr: T,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &[&Grid<T>], lr: T) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| {
                    let (h, w, c) = p.shape();
                    Grid::zeros(h, w, c)
                })
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            lr,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(params: &mut [&mut Grid<T>], grads: &[Grid<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if !p.same_shape(g) || !p.same_shape(m) {
            return Err(Error::Shape(format!("adam: {:?} vs {:?}", p.shape(), g.shape())));
        }
    }
    if state.lr.is_nan() || state.lr <= T::zero() {
        return Err(Error::Invalid(format!("learning rate {} must be positive", state.lr)));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}
