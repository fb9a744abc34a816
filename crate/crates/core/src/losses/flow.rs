//! Differentiable optical flow for the motion losses.

use super::motion::FlowField;
use super::FeatureSet;
use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::grid::{Grid, Kernel3x3, PaddingMode};
use crate::scalar::Scalar;

/// Estimates motion between two frames (`H × W × 3` in `[0, 1]`, or `H × W × 1` grey).
pub trait FlowEstimator<T: Scalar>: Send + Sync {
    /// Flow from `a` to `b` as an `H × W × 2` node.
    fn estimate_on(&self, tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var>;

    /// Motion features of the pair, one `H × W × C` node.
    fn features_on(&self, tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var>;

    fn estimate(&self, a: &Grid<T>, b: &Grid<T>) -> Result<FlowField<T>> {
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let f = self.estimate_on(&mut tape, va, vb)?;
        FlowField::new(tape.value(f).clone())
    }

    fn features(&self, a: &Grid<T>, b: &Grid<T>) -> Result<FeatureSet<T>> {
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let f = self.features_on(&mut tape, va, vb)?;
        Ok(FeatureSet::from_map(tape.value(f).clone()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    /// Fixed-point iterations per pyramid level.
    pub iterations: usize,
    /// Weight of the quadratic smoothness term.
    pub smoothness: f64,
    /// Coarser levels are used while both sides stay at least this long.
    pub min_level_side: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            smoothness: 0.1,
            min_level_side: 16,
        }
    }
}

/// Coarse-to-fine Horn–Schunck with backward warping, unrolled on the tape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HornSchunck {
    pub cfg: FlowConfig,
}

pub fn default_flow(cfg: FlowConfig) -> HornSchunck {
    HornSchunck { cfg }
}

/// Bilinear lookup of `img` at `(row + v, col + u)` with coordinates clamped to the grid.
struct WarpOp;

struct Sample<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    /// Whether the coordinate was clamped (no gradient to the flow).
    cx: bool,
    cy: bool,
}

fn sample_at<T: Scalar>(r: usize, c: usize, u: T, v: T, h: usize, w: usize) -> Sample<T> {
    let locate = |base: usize, d: T, n: usize| -> (usize, usize, T, bool) {
        let p = T::count(base) + d;
        let hi = T::count(n - 1);
        let clamped = p < T::zero() || p > hi;
        let p = p.max(T::zero()).min(hi);
        let i0 = p.floor().to_usize().unwrap().min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - T::count(i0), clamped)
    };
    let (x0, x1, fx, cx) = locate(c, u, w);
    let (y0, y1, fy, cy) = locate(r, v, h);
    Sample {
        x0,
        x1,
        y0,
        y1,
        fx,
        fy,
        cx,
        cy,
    }
}

fn warp<T: Scalar>(img: &Grid<T>, flow: &Grid<T>) -> Grid<T> {
    let (h, w, ch) = img.shape();
    let mut out = Grid::zeros(h, w, ch);
    for r in 0..h {
        for c in 0..w {
            let f = flow.pixel(r, c);
            let s = sample_at(r, c, f[0], f[1], h, w);
            for k in 0..ch {
                let top = img.at(s.y0, s.x0, k) + s.fx * (img.at(s.y0, s.x1, k) - img.at(s.y0, s.x0, k));
                let bot = img.at(s.y1, s.x0, k) + s.fx * (img.at(s.y1, s.x1, k) - img.at(s.y1, s.x0, k));
                out.set(r, c, k, top + s.fy * (bot - top));
            }
        }
    }
    out
}

impl<T: Scalar> CustomOp<T> for WarpOp {
    fn backward(&self, inputs: &[&Grid<T>], _: &Grid<T>, grad: &Grid<T>) -> Vec<Option<Grid<T>>> {
        let (img, flow) = (inputs[0], inputs[1]);
        let (h, w, ch) = img.shape();
        let mut gi = Grid::zeros(h, w, ch);
        let mut gf = Grid::zeros(h, w, 2);
        let one = T::one();
        for r in 0..h {
            for c in 0..w {
                let f = flow.pixel(r, c);
                let s = sample_at(r, c, f[0], f[1], h, w);
                let (mut du, mut dv) = (T::zero(), T::zero());
                for k in 0..ch {
                    let g = grad.at(r, c, k);
                    let (i00, i01) = (img.at(s.y0, s.x0, k), img.at(s.y0, s.x1, k));
                    let (i10, i11) = (img.at(s.y1, s.x0, k), img.at(s.y1, s.x1, k));
                    let taps = [
                        (s.y0, s.x0, (one - s.fy) * (one - s.fx)),
                        (s.y0, s.x1, (one - s.fy) * s.fx),
                        (s.y1, s.x0, s.fy * (one - s.fx)),
                        (s.y1, s.x1, s.fy * s.fx),
                    ];
                    for (y, x, wt) in taps {
                        let cur = gi.at(y, x, k);
                        gi.set(y, x, k, cur + g * wt);
                    }
                    if !s.cx {
                        du += g * ((one - s.fy) * (i01 - i00) + s.fy * (i11 - i10));
                    }
                    if !s.cy {
                        let top = i00 + s.fx * (i01 - i00);
                        let bot = i10 + s.fx * (i11 - i10);
                        dv += g * (bot - top);
                    }
                }
                gf.pixel_mut(r, c).copy_from_slice(&[du, dv]);
            }
        }
        vec![Some(gi), Some(gf)]
    }
}

/// Samples `img` along `flow` on the tape.
pub fn warp_on<T: Scalar>(tape: &mut Tape<T>, img: Var, flow: Var) -> Result<Var> {
    let (iv, fv) = (tape.value(img), tape.value(flow));
    if iv.height() != fv.height() || iv.width() != fv.width() || fv.channels() != 2 {
        return Err(Error::Shape(format!("warp {:?} by {:?}", iv.shape(), fv.shape())));
    }
    let out = warp(iv, fv);
    Ok(tape.custom(&[img, flow], out, Box::new(WarpOp)))
}

/// Rec. 601 luma of an RGB node; grey nodes pass through.
pub fn luma_on<T: Scalar>(tape: &mut Tape<T>, img: Var) -> Result<Var> {
    match tape.value(img).channels() {
        1 => Ok(img),
        3 => {
            let w = tape.constant(Grid::matrix(3, 1, vec![T::lit(0.299), T::lit(0.587), T::lit(0.114)])?);
            tape.dense(img, w, None)
        }
        c => Err(Error::Shape(format!("flow input needs 1 or 3 channels, got {c}"))),
    }
}

impl HornSchunck {
    /// Pyramid sizes from coarsest to finest.
    fn levels(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut sizes = vec![(h, w)];
        let (mut lh, mut lw) = (h, w);
        while lh % 2 == 0 && lw % 2 == 0 && lh / 2 >= self.cfg.min_level_side && lw / 2 >= self.cfg.min_level_side {
            lh /= 2;
            lw /= 2;
            sizes.push((lh, lw));
        }
        sizes.reverse();
        sizes
    }

    /// Final flow and the residual `warp(b, flow) − a` at full resolution.
    fn solve<T: Scalar>(&self, tape: &mut Tape<T>, a: Var, b: Var) -> Result<(Var, Var)> {
        if tape.value(a).shape() != tape.value(b).shape() {
            return Err(Error::Shape(format!(
                "frame shapes {:?} vs {:?}",
                tape.value(a).shape(),
                tape.value(b).shape()
            )));
        }
        let ga = luma_on(tape, a)?;
        let gb = luma_on(tape, b)?;
        let (h, w, _) = tape.value(ga).shape();
        let sizes = self.levels(h, w);
        let mut pyramid = vec![(ga, gb)];
        for &(lh, lw) in sizes.iter().rev().skip(1) {
            let (pa, pb) = *pyramid.last().unwrap();
            pyramid.push((tape.resize(pa, lh, lw), tape.resize(pb, lh, lw)));
        }
        pyramid.reverse();

        let half = T::lit(0.5);
        let dx = Kernel3x3::new([0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0].map(T::lit)).scale(half);
        let dy = Kernel3x3::new([0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0].map(T::lit)).scale(half);
        let avg = Kernel3x3::new([1.0, 2.0, 1.0, 2.0, 0.0, 2.0, 1.0, 2.0, 1.0].map(|v| T::lit(v / 12.0)));
        let alpha2 = T::lit(self.cfg.smoothness);
        let pad = PaddingMode::Replicate;

        let mut flow: Option<Var> = None;
        let mut residual = None;
        for (&(lh, lw), &(la, lb)) in sizes.iter().zip(&pyramid) {
            let u0 = match flow {
                None => tape.constant(Grid::zeros(lh, lw, 2)),
                Some(f) => {
                    let up = tape.resize(f, lh, lw);
                    tape.scale(up, T::lit(2.0))
                }
            };
            let bw = warp_on(tape, lb, u0)?;
            let it = tape.sub(bw, la)?;
            let ax = tape.conv(la, &dx, pad);
            let bx = tape.conv(bw, &dx, pad);
            let ix = tape.add(ax, bx)?;
            let ix = tape.scale(ix, half);
            let ay = tape.conv(la, &dy, pad);
            let by = tape.conv(bw, &dy, pad);
            let iy = tape.add(ay, by)?;
            let iy = tape.scale(iy, half);
            let ix2 = tape.square(ix);
            let iy2 = tape.square(iy);
            let den = tape.add(ix2, iy2)?;
            let den = tape.add_scalar(den, alpha2);
            let u0x = tape.slice_channels(u0, 0, 1)?;
            let u0y = tape.slice_channels(u0, 1, 1)?;
            let mut u = u0;
            for _ in 0..self.cfg.iterations {
                let bar = tape.conv(u, &avg, pad);
                let bx = tape.slice_channels(bar, 0, 1)?;
                let by = tape.slice_channels(bar, 1, 1)?;
                let ddx = tape.sub(bx, u0x)?;
                let ddy = tape.sub(by, u0y)?;
                let px = tape.mul(ix, ddx)?;
                let py = tape.mul(iy, ddy)?;
                let num = tape.add(px, py)?;
                let num = tape.add(num, it)?;
                let t = tape.div(num, den)?;
                let cx = tape.mul(ix, t)?;
                let cy = tape.mul(iy, t)?;
                let nx = tape.sub(bx, cx)?;
                let ny = tape.sub(by, cy)?;
                u = tape.concat_channels(&[nx, ny])?;
            }
            flow = Some(u);
            residual = Some((lb, la, u));
        }
        let (lb, la, u) = residual.unwrap();
        let bw = warp_on(tape, lb, u)?;
        let diff = tape.sub(bw, la)?;
        Ok((u, diff))
    }
}

impl<T: Scalar> FlowEstimator<T> for HornSchunck {
    fn estimate_on(&self, tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
        Ok(self.solve(tape, a, b)?.0)
    }

    fn features_on(&self, tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
        let (u, diff) = self.solve(tape, a, b)?;
        tape.concat_channels(&[u, diff])
    }
}
