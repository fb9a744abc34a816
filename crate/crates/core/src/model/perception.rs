//! Perception stage: identity, Sobel and Laplacian responses, optionally
//! pooled over a bilinear pyramid, plus the Cartesian positional encoding.

use rayon::prelude::*;

use super::config::DyncaConfig;
use crate::error::{Error, Result};
use crate::grid::{
    bilinear_add_row, bilinear_resize, bilinear_resize_adjoint, conv3x3_adjoint_sum, resize_taps, Grid, Kernel3x3,
    PaddingMode, RowWindow, Tap1d,
};
use crate::scalar::Scalar;

/// The four fixed perception kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionKernels<T = f32> {
    pub dx: Kernel3x3<T>,
    pub dy: Kernel3x3<T>,
    pub laplacian: Kernel3x3<T>,
}

impl<T: Scalar> Default for PerceptionKernels<T> {
    fn default() -> Self {
        Self {
            dx: Kernel3x3::sobel_x(),
            dy: Kernel3x3::sobel_y(),
            laplacian: Kernel3x3::laplacian(),
        }
    }
}

/// Orientation applied to the derivative pair and the positional encoding.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Steering<T = f32> {
    #[default]
    None,
    /// One angle (radians) for every cell.
    Global(T),
    /// Per-cell angle map, `H × W × 1`.
    PerCell(Grid<T>),
}

impl<T: Scalar> Steering<T> {
    /// Angle at a cell, `None` when the cell is unrotated.
    #[inline]
    fn angle(&self, row: usize, col: usize) -> Option<T> {
        match self {
            Steering::None => None,
            Steering::Global(theta) => Some(*theta),
            Steering::PerCell(map) => Some(map.at(row, col, 0)),
        }
    }

    pub fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        match self {
            Steering::PerCell(map) if map.shape() != (h, w, 1) => Err(Error::Shape(format!(
                "angle map {:?} does not match a {h}x{w} state",
                map.shape()
            ))),
            _ => Ok(()),
        }
    }
}

/// Rotates `(x, y)` into the steered frame: `(cosθ·x + sinθ·y, −sinθ·x + cosθ·y)`.
#[inline(always)]
pub(crate) fn rotate_pair<T: Scalar>(x: T, y: T, theta: T) -> (T, T) {
    let (s, c) = theta.sin_cos();
    (c * x + s * y, -s * x + c * y)
}

/// Cartesian positional encoding, `H × W × 2`.
///
/// Cell `(row, col)` holds `[(2·col + 1)/W − 1, (2·row + 1)/H − 1]`: the first
/// coordinate runs along the width, the second along the height.
pub fn positional_encoding<T: Scalar>(h: usize, w: usize) -> Grid<T> {
    Grid::from_fn(h, w, 2, |r, c, ch| if ch == 0 { encoding(c, w) } else { encoding(r, h) })
}

/// Positional encoding rotated per cell by the steering angle.
pub fn steered_positional_encoding<T: Scalar>(h: usize, w: usize, steering: &Steering<T>) -> Grid<T> {
    let mut p = positional_encoding::<T>(h, w);
    if matches!(steering, Steering::None) {
        return p;
    }
    for r in 0..h {
        for c in 0..w {
            if let Some(theta) = steering.angle(r, c) {
                let px = p.pixel_mut(r, c);
                let (u, v) = rotate_pair(px[0], px[1], theta);
                px[0] = u;
                px[1] = v;
            }
        }
    }
    p
}

/// Single-scale perception: `[s, ∇x s, ∇y s, ∇² s]` per cell (`H × W × 4C`).
pub fn perceive<T: Scalar>(state: &Grid<T>, kernels: &PerceptionKernels<T>, pad: PaddingMode) -> Grid<T> {
    let (h, w, c) = state.shape();
    let mut out = Grid::zeros(h, w, 4 * c);
    out.data_mut().par_chunks_mut(w * 4 * c).enumerate().for_each_init(
        || RowScratch::new(w, c),
        |scratch, (r, row)| {
            crate::simd::dispatch(#[inline(always)] || perceive_row(state, kernels, pad, r, scratch, row, 4 * c))
        },
    );
    out
}

/// Buffers for building one row of perception.
pub(crate) struct RowScratch<T> {
    win: RowWindow<T>,
    blocks: [Vec<T>; 3],
}

impl<T: Scalar> RowScratch<T> {
    pub(crate) fn new(width: usize, channels: usize) -> Self {
        let n = width * channels;
        Self {
            win: RowWindow::new(width, channels),
            blocks: [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]],
        }
    }
}

/// Writes row `r` of single-scale perception into the first `4C` slots of
/// each `stride`-wide cell record of `out`.
#[inline(always)]
fn perceive_row<T: Scalar>(
    state: &Grid<T>,
    kernels: &PerceptionKernels<T>,
    pad: PaddingMode,
    r: usize,
    scratch: &mut RowScratch<T>,
    out: &mut [T],
    stride: usize,
) {
    let (h, w, c) = state.shape();
    let src = state.data();
    let RowScratch { win, blocks } = scratch;
    win.load(src, h, w, c, r, pad);
    match c {
        12 => return stencils::<T, 12, 48>(win, kernels, out, stride),
        16 => return stencils::<T, 16, 64>(win, kernels, out, stride),
        _ => {}
    }
    win.correlate(c, &kernels.dx, &mut blocks[0]);
    win.correlate(c, &kernels.dy, &mut blocks[1]);
    win.correlate(c, &kernels.laplacian, &mut blocks[2]);
    let line = &src[r * w * c..(r + 1) * w * c];
    for (col, z) in out.chunks_exact_mut(stride).enumerate() {
        let cell = col * c..(col + 1) * c;
        z[..c].copy_from_slice(&line[cell.clone()]);
        z[c..2 * c].copy_from_slice(&blocks[0][cell.clone()]);
        z[2 * c..3 * c].copy_from_slice(&blocks[1][cell.clone()]);
        z[3 * c..4 * c].copy_from_slice(&blocks[2][cell]);
    }
}

/// Single-pass version of the three [`RowWindow::correlate`] calls for a
/// fixed channel count, writing each cell's record directly. Cells are taken
/// in runs of `N / C` so the accumulators stay in registers. Taps are summed
/// in the same order, so the results are identical.
#[inline(always)]
fn stencils<T: Scalar, const C: usize, const N: usize>(
    win: &RowWindow<T>,
    kernels: &PerceptionKernels<T>,
    out: &mut [T],
    stride: usize,
) {
    let rows = win.rows();
    let width = out.len() / stride;
    let group = N / C;
    let full = width / group * group;
    for first in (0..full).step_by(group) {
        stencil_run::<T, C, N>(rows, kernels, first, &mut out[first * stride..(first + group) * stride], stride);
    }
    for col in full..width {
        stencil_run::<T, C, C>(rows, kernels, col, &mut out[col * stride..(col + 1) * stride], stride);
    }
}

#[inline(always)]
fn stencil_run<T: Scalar, const C: usize, const N: usize>(
    rows: [&[T]; 3],
    kernels: &PerceptionKernels<T>,
    first: usize,
    out: &mut [T],
    stride: usize,
) {
    let centre = &rows[1][(first + 1) * C..(first + 1) * C + N];
    for (z, s) in out.chunks_exact_mut(stride).zip(centre.chunks_exact(C)) {
        z[..C].copy_from_slice(s);
    }
    for (b, k) in [&kernels.dx, &kernels.dy, &kernels.laplacian].into_iter().enumerate() {
        let mut acc = [T::zero(); N];
        for (tap, &wt) in k.weights.iter().enumerate() {
            if wt == T::zero() {
                continue;
            }
            let off = (first + tap % 3) * C;
            let src = &rows[tap / 3][off..off + N];
            for i in 0..N {
                acc[i] += wt * src[i];
            }
        }
        for (z, a) in out.chunks_exact_mut(stride).zip(acc.chunks_exact(C)) {
            z[(b + 1) * C..(b + 2) * C].copy_from_slice(a);
        }
    }
}

/// One coarse pyramid level: its perception and the taps that upsample it.
pub(crate) struct CoarseLevel<T> {
    perception: Grid<T>,
    ys: Vec<Tap1d<T>>,
    xs: Vec<Tap1d<T>>,
}

/// Perception of every pyramid factor after the leading 1.
pub(crate) fn coarse_levels<T: Scalar>(
    state: &Grid<T>,
    kernels: &PerceptionKernels<T>,
    pad: PaddingMode,
    scales: &[usize],
) -> Vec<CoarseLevel<T>> {
    let (h, w, _) = state.shape();
    scales
        .iter()
        .skip(1)
        .map(|&s| CoarseLevel {
            perception: perceive(&bilinear_resize(state, h / s, w / s), kernels, pad),
            ys: resize_taps(h / s, h),
            xs: resize_taps(w / s, w),
        })
        .collect()
}

/// Adds the upsampled coarse levels, in ascending factor order, into row `r`.
#[inline(always)]
fn add_coarse_row<T: Scalar>(levels: &[CoarseLevel<T>], r: usize, out: &mut [T], stride: usize) {
    for level in levels {
        bilinear_add_row(&level.perception, &level.ys[r], &level.xs, out, stride);
    }
}

/// Rotates the derivative pair of every cell in row `r`.
#[inline(always)]
fn steer_row<T: Scalar>(steering: &Steering<T>, r: usize, channels: usize, out: &mut [T], stride: usize) {
    if matches!(steering, Steering::None) {
        return;
    }
    for (col, z) in out.chunks_exact_mut(stride).enumerate() {
        let Some(theta) = steering.angle(r, col) else {
            continue;
        };
        for ch in 0..channels {
            let (u, v) = rotate_pair(z[channels + ch], z[2 * channels + ch], theta);
            z[channels + ch] = u;
            z[2 * channels + ch] = v;
        }
    }
}

#[inline(always)]
fn encoding<T: Scalar>(i: usize, n: usize) -> T {
    T::lit((2.0 * i as f64 + 1.0) / n as f64 - 1.0)
}

/// Row `r` of the full MLP input (`W × in_dim`), identical to the same row of
/// [`perception_input`].
#[allow(clippy::too_many_arguments)]
#[inline(always)]
pub(crate) fn perception_row<T: Scalar>(
    state: &Grid<T>,
    cfg: &DyncaConfig,
    kernels: &PerceptionKernels<T>,
    steering: &Steering<T>,
    levels: &[CoarseLevel<T>],
    r: usize,
    scratch: &mut RowScratch<T>,
    out: &mut [T],
) {
    let (h, w, c) = state.shape();
    let stride = cfg.in_dim();
    perceive_row(state, kernels, cfg.padding, r, scratch, out, stride);
    add_coarse_row(levels, r, out, stride);
    steer_row(steering, r, c, out, stride);
    if cfg.use_cpe {
        let y = encoding::<T>(r, h);
        for (col, z) in out.chunks_exact_mut(stride).enumerate() {
            let x = encoding::<T>(col, w);
            let (u, v) = match steering.angle(r, col) {
                Some(theta) => rotate_pair(x, y, theta),
                None => (x, y),
            };
            z[4 * c] = u;
            z[4 * c + 1] = v;
        }
    }
}

fn check_scales(h: usize, w: usize, scales: &[usize]) -> Result<()> {
    if scales.first() != Some(&1) {
        return Err(Error::Config("pyramid scales must start at 1".into()));
    }
    for &s in scales {
        if s == 0 || h % s != 0 || w % s != 0 {
            return Err(Error::Divisibility {
                height: h,
                width: w,
                scale: s,
            });
        }
    }
    Ok(())
}

/// Checks that a state and steering can go through [`perception_input`].
pub(crate) fn check_perception<T: Scalar>(state: &Grid<T>, cfg: &DyncaConfig, steering: &Steering<T>) -> Result<()> {
    let (h, w, c) = state.shape();
    if c != cfg.channels {
        return Err(Error::Shape(format!("state has {c} channels, config {}", cfg.channels)));
    }
    steering.check_extent(h, w)?;
    check_scales(h, w, &cfg.scales)
}

/// Multi-scale perception: for each pyramid factor `s`, downsample by `s`,
/// perceive, upsample back and sum (factors accumulated in ascending order).
pub fn perceive_multiscale<T: Scalar>(
    state: &Grid<T>,
    kernels: &PerceptionKernels<T>,
    pad: PaddingMode,
    scales: &[usize],
) -> Result<Grid<T>> {
    let (h, w, c) = state.shape();
    check_scales(h, w, scales)?;
    let levels = coarse_levels(state, kernels, pad, scales);
    let mut out = Grid::zeros(h, w, 4 * c);
    out.data_mut().par_chunks_mut(w * 4 * c).enumerate().for_each_init(
        || RowScratch::new(w, c),
        |scratch, (r, row)| {
            crate::simd::dispatch(#[inline(always)] || {
                perceive_row(state, kernels, pad, r, scratch, row, 4 * c);
                add_coarse_row(&levels, r, row, 4 * c);
            })
        },
    );
    Ok(out)
}

/// Applies the steering rotation to the derivative blocks of a `4C` perception grid.
pub fn steer_perception<T: Scalar>(perception: &mut Grid<T>, channels: usize, steering: &Steering<T>) {
    let (_, w, stride) = perception.shape();
    for (r, row) in perception.data_mut().chunks_mut(w * stride).enumerate() {
        steer_row(steering, r, channels, row, stride);
    }
}

/// Full MLP input: steered multi-scale perception, with CPE appended when enabled.
pub fn perception_input<T: Scalar>(
    state: &Grid<T>,
    cfg: &DyncaConfig,
    kernels: &PerceptionKernels<T>,
    steering: &Steering<T>,
) -> Result<Grid<T>> {
    check_perception(state, cfg, steering)?;
    let (h, w, c) = state.shape();
    let levels = coarse_levels(state, kernels, cfg.padding, &cfg.scales);
    let stride = cfg.in_dim();
    let mut z = Grid::zeros(h, w, stride);
    z.data_mut().par_chunks_mut(w * stride).enumerate().for_each_init(
        || RowScratch::new(w, c),
        |scratch, (r, row)| {
            crate::simd::dispatch(#[inline(always)] || {
                perception_row(state, cfg, kernels, steering, &levels, r, scratch, row)
            })
        },
    );
    Ok(z)
}

/// Adjoint of single-scale [`perceive`]: maps a `4C` gradient to the state.
fn perceive_adjoint<T: Scalar>(grad: &Grid<T>, kernels: &PerceptionKernels<T>, pad: PaddingMode) -> Grid<T> {
    let c = grad.channels() / 4;
    let blocks: Vec<Grid<T>> = (1..4).map(|b| grad.slice_channels(b * c, c)).collect();
    let kernels = [&kernels.dx, &kernels.dy, &kernels.laplacian];
    let parts: Vec<_> = blocks.iter().zip(kernels).collect();
    let mut out = conv3x3_adjoint_sum(&parts, pad);
    for (o, &p) in out.data_mut().iter_mut().zip(grad.slice_channels(0, c).data()) {
        *o += p;
    }
    out
}

/// Adjoint of [`perception_input`] with respect to the state. `grad` has the
/// layout of the perception input; the positional channels carry no gradient.
pub(crate) fn perception_input_adjoint<T: Scalar>(
    grad: &Grid<T>,
    cfg: &DyncaConfig,
    kernels: &PerceptionKernels<T>,
    steering: &Steering<T>,
) -> Grid<T> {
    let (h, w, _) = grad.shape();
    let c = cfg.channels;
    let mut g = grad.slice_channels(0, 4 * c);
    if !matches!(steering, Steering::None) {
        for r in 0..h {
            for col in 0..w {
                let Some(theta) = steering.angle(r, col) else {
                    continue;
                };
                let z = g.pixel_mut(r, col);
                for ch in 0..c {
                    // Transpose of the rotation applied in the forward pass.
                    let (u, v) = rotate_pair(z[c + ch], z[2 * c + ch], -theta);
                    z[c + ch] = u;
                    z[2 * c + ch] = v;
                }
            }
        }
    }
    let mut out = perceive_adjoint(&g, kernels, cfg.padding);
    for &s in cfg.scales.iter().skip(1) {
        let small = perceive_adjoint(&bilinear_resize_adjoint(&g, h / s, w / s), kernels, cfg.padding);
        let full = bilinear_resize_adjoint(&small, h, w);
        for (o, &p) in out.data_mut().iter_mut().zip(full.data()) {
            *o += p;
        }
    }
    out
}
