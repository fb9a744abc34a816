//! Dense H×W×C grids and the 3×3 stencil / bilinear primitives built on them.
//!
//! Layout is row-major with channels innermost: element `(row, col, ch)` lives
//! at `(row * width + col) * channels + ch`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Rows per rayon task for the parallel stencils. The split is fixed so results
/// never depend on the worker count.
const ROW_CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T = f32> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    /// All-zero grid. Panics on a zero dimension.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(
            height >= 1 && width >= 1 && channels >= 1,
            "grid dimensions must be positive, got {height}x{width}x{channels}"
        );
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{channels} grid",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(row, col, ch)` at every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut g = Self::zeros(height, width, channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    g.data[(r * width + c) * channels + ch] = f(r, c, ch);
                }
            }
        }
        g
    }

    /// A `rows × cols` matrix stored as a single-channel grid.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(rows, cols, 1, data)
    }

    pub fn scalar(value: T) -> Self {
        Self::filled(1, 1, 1, value)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Number of spatial cells (`height * width`).
    #[inline]
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: T) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    /// Channel vector of one cell.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [T] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
            ..*self
        }
    }

    /// Elementwise combination of two equally shaped grids.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::count(self.data.len())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copies channels `start..start + len` into a new grid.
    pub fn slice_channels(&self, start: usize, len: usize) -> Self {
        assert!(len >= 1 && start + len <= self.channels);
        let mut data = Vec::with_capacity(self.cells() * len);
        for px in self.data.chunks_exact(self.channels) {
            data.extend_from_slice(&px[start..start + len]);
        }
        Self {
            height: self.height,
            width: self.width,
            channels: len,
            data,
        }
    }

    /// Concatenates grids of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero grids".into()))?;
        let (h, w) = (first.height, first.width);
        if parts.iter().any(|p| p.height != h || p.width != w) {
            return Err(Error::Shape("concat of grids with different extents".into()));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for cell in 0..h * w {
            for p in parts {
                data.extend_from_slice(&p.data[cell * p.channels..(cell + 1) * p.channels]);
            }
        }
        Ok(Self {
            height: h,
            width: w,
            channels,
            data,
        })
    }

    /// Reinterprets the buffer with a new shape of equal element count.
    pub fn reshape(self, height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::from_vec(height, width, channels, self.data)
    }

    pub fn cast<U: Scalar>(&self) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }

    /// Cyclic spatial shift: output `(r, c)` reads input `(r - dr, c - dc)` modulo size.
    pub fn roll(&self, dr: isize, dc: isize) -> Self {
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                let sr = (r as isize - dr).rem_euclid(h) as usize;
                let sc = (c as isize - dc).rem_euclid(w) as usize;
                out.pixel_mut(r, c).copy_from_slice(self.pixel(sr, sc));
            }
        }
        out
    }
}

/// Boundary rule for the 3×3 stencils.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum PaddingMode {
    Zero,
    #[default]
    Replicate,
    Circular,
}

impl PaddingMode {
    /// Resolves a possibly out-of-range coordinate; `None` reads as zero.
    #[inline(always)]
    pub fn resolve(self, idx: isize, n: usize) -> Option<usize> {
        let n_i = n as isize;
        if (0..n_i).contains(&idx) {
            return Some(idx as usize);
        }
        match self {
            PaddingMode::Zero => None,
            PaddingMode::Replicate => Some(idx.clamp(0, n_i - 1) as usize),
            PaddingMode::Circular => Some(idx.rem_euclid(n_i) as usize),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            PaddingMode::Zero => 0,
            PaddingMode::Replicate => 1,
            PaddingMode::Circular => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PaddingMode::Zero),
            1 => Some(PaddingMode::Replicate),
            2 => Some(PaddingMode::Circular),
            _ => None,
        }
    }
}

/// 3×3 stencil weights, row-major; tap `(dr, dc)` is at `(dr + 1) * 3 + dc + 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel3x3<T = f32> {
    pub weights: [T; 9],
}

impl<T: Scalar> Kernel3x3<T> {
    pub fn new(weights: [T; 9]) -> Self {
        Self { weights }
    }

    fn scaled(raw: [f64; 9], div: f64) -> Self {
        Self {
            weights: raw.map(|x| T::lit(x / div)),
        }
    }

    pub fn identity() -> Self {
        Self::scaled([0., 0., 0., 0., 1., 0., 0., 0., 0.], 1.0)
    }

    /// Horizontal Sobel derivative, normalized by 8.
    pub fn sobel_x() -> Self {
        Self::scaled([-1., 0., 1., -2., 0., 2., -1., 0., 1.], 8.0)
    }

    /// Vertical Sobel derivative (transpose of [`Self::sobel_x`]).
    pub fn sobel_y() -> Self {
        Self::scaled([-1., -2., -1., 0., 0., 0., 1., 2., 1.], 8.0)
    }

    /// Nine-point Laplacian, normalized by 16.
    pub fn laplacian() -> Self {
        Self::scaled([1., 2., 1., 2., -12., 2., 1., 2., 1.], 16.0)
    }

    /// Uniform 3×3 mean.
    pub fn box_mean() -> Self {
        Self::scaled([1.; 9], 9.0)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn scale(&self, k: T) -> Self {
        Self {
            weights: self.weights.map(|w| w * k),
        }
    }

    /// Kernel of the adjoint (transposed) correlation: taps mirrored through the centre.
    pub fn flipped(&self) -> Self {
        let mut w = self.weights;
        w.reverse();
        Self { weights: w }
    }
}

/// Padded copies of the three source rows centred on one output row.
///
/// Each row holds `width + 2` cells; cell `x` of the output row reads cells
/// `x..x + 3` of the three buffers.
pub(crate) struct RowWindow<T> {
    rows: [Vec<T>; 3],
}

impl<T: Scalar> RowWindow<T> {
    pub(crate) fn new(width: usize, channels: usize) -> Self {
        let n = (width + 2) * channels;
        Self {
            rows: [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]],
        }
    }

    #[inline(always)]
    pub(crate) fn load(&mut self, src: &[T], height: usize, width: usize, channels: usize, row: usize, pad: PaddingMode) {
        let c = channels;
        let left = pad.resolve(-1, width);
        let right = pad.resolve(width as isize, width);
        for (dr, buf) in self.rows.iter_mut().enumerate() {
            match pad.resolve(row as isize + dr as isize - 1, height) {
                None => buf.iter_mut().for_each(|x| *x = T::zero()),
                Some(sr) => {
                    let line = &src[sr * width * c..(sr + 1) * width * c];
                    buf[c..(width + 1) * c].copy_from_slice(line);
                    match left {
                        Some(x) => buf.copy_within((x + 1) * c..(x + 2) * c, 0),
                        None => buf[..c].iter_mut().for_each(|v| *v = T::zero()),
                    }
                    let tail = (width + 1) * c;
                    match right {
                        Some(x) => buf.copy_within((x + 1) * c..(x + 2) * c, tail),
                        None => buf[tail..].iter_mut().for_each(|v| *v = T::zero()),
                    }
                }
            }
        }
    }

    /// The three padded rows, top to bottom.
    #[inline(always)]
    pub(crate) fn rows(&self) -> [&[T]; 3] {
        [&self.rows[0], &self.rows[1], &self.rows[2]]
    }

    /// Correlates the loaded rows with `k` into `out` (`width * channels` long).
    ///
    /// Taps are accumulated in row-major order and zero weights are skipped; every
    /// stencil in the crate goes through here so their rounding agrees.
    #[inline(always)]
    pub(crate) fn correlate(&self, channels: usize, k: &Kernel3x3<T>, out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        let n = out.len();
        for (tap, &wt) in k.weights.iter().enumerate() {
            if wt == T::zero() {
                continue;
            }
            let off = (tap % 3) * channels;
            let src = &self.rows[tap / 3][off..off + n];
            for (o, &x) in out.iter_mut().zip(src) {
                *o += wt * x;
            }
        }
    }
}

/// Depthwise 3×3 correlation of every channel with `k`.
pub fn conv3x3_depthwise<T: Scalar>(g: &Grid<T>, k: &Kernel3x3<T>, pad: PaddingMode) -> Grid<T> {
    let (h, w, c) = g.shape();
    let mut out = Grid::zeros(h, w, c);
    out.data
        .par_chunks_mut(ROW_CHUNK * w * c)
        .enumerate()
        .for_each(|(chunk, rows)| {
            crate::simd::dispatch(#[inline(always)] || {
                let mut win = RowWindow::new(w, c);
                for (i, row_out) in rows.chunks_mut(w * c).enumerate() {
                    win.load(&g.data, h, w, c, chunk * ROW_CHUNK + i, pad);
                    win.correlate(c, k, row_out);
                }
            })
        });
    out
}

/// Adjoint of [`conv3x3_depthwise`]: maps an output gradient back onto the input.
pub fn conv3x3_depthwise_adjoint<T: Scalar>(
    grad_out: &Grid<T>,
    k: &Kernel3x3<T>,
    pad: PaddingMode,
) -> Grid<T> {
    conv3x3_adjoint_sum(&[(grad_out, k)], pad)
}

/// Sum of the adjoints of several depthwise correlations over same-shaped gradients.
///
/// Each gradient is spread onto the padded `(h + 2) × (w + 2)` domain by a full
/// convolution, then the halo is folded back onto the cells it was read from.
pub(crate) fn conv3x3_adjoint_sum<T: Scalar>(parts: &[(&Grid<T>, &Kernel3x3<T>)], pad: PaddingMode) -> Grid<T> {
    let (h, w, c) = parts[0].0.shape();
    let (ph, pw) = (h + 2, w + 2);
    let mut full = vec![T::zero(); ph * pw * c];
    full.par_chunks_mut(pw * c).enumerate().for_each(|(pr, row)| {
        crate::simd::dispatch(#[inline(always)] || {
            for (g, k) in parts {
                for dr in 0..3 {
                    let Some(sr) = pr.checked_sub(dr).filter(|&r| r < h) else {
                        continue;
                    };
                    let src = &g.data[sr * w * c..(sr + 1) * w * c];
                    for dc in 0..3 {
                        let wt = k.weights[dr * 3 + dc];
                        if wt == T::zero() {
                            continue;
                        }
                        for (o, &x) in row[dc * c..dc * c + w * c].iter_mut().zip(src) {
                            *o += wt * x;
                        }
                    }
                }
            }
        })
    });
    let mut out = Grid::zeros(h, w, c);
    for r in 0..h {
        let src = &full[((r + 1) * pw + 1) * c..((r + 1) * pw + 1 + w) * c];
        out.data[r * w * c..(r + 1) * w * c].copy_from_slice(src);
    }
    let halo = (0..pw).flat_map(|pc| [(0, pc), (ph - 1, pc)]).chain((1..ph - 1).flat_map(|pr| [(pr, 0), (pr, pw - 1)]));
    for (pr, pc) in halo {
        let rr = pad.resolve(pr as isize - 1, h);
        let cc = pad.resolve(pc as isize - 1, w);
        if let (Some(rr), Some(cc)) = (rr, cc) {
            let src = &full[(pr * pw + pc) * c..(pr * pw + pc + 1) * c];
            for (d, &v) in out.data[(rr * w + cc) * c..(rr * w + cc + 1) * c].iter_mut().zip(src) {
                *d += v;
            }
        }
    }
    out
}

/// One axis of a half-pixel-centred bilinear map: source indices and blend weight.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap1d<T> {
    pub lo: usize,
    pub hi: usize,
    pub frac: T,
}

pub(crate) fn resize_taps<T: Scalar>(n_in: usize, n_out: usize) -> Vec<Tap1d<T>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|x| {
            let src = ((x as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            Tap1d {
                lo,
                hi,
                frac: T::lit(src - lo as f64),
            }
        })
        .collect()
}

#[inline(always)]
fn lerp<T: Scalar>(a: T, b: T, f: T) -> T {
    a + (b - a) * f
}

/// Bilinear resampling with half-pixel centres (align-corners = false).
pub fn bilinear_resize<T: Scalar>(g: &Grid<T>, out_h: usize, out_w: usize) -> Grid<T> {
    assert!(out_h >= 1 && out_w >= 1);
    let (h, w, c) = g.shape();
    let ys = resize_taps::<T>(h, out_h);
    let xs = resize_taps::<T>(w, out_w);
    let mut out = Grid::zeros(out_h, out_w, c);
    for (r, ty) in ys.iter().enumerate() {
        for (col, tx) in xs.iter().enumerate() {
            let p00 = g.pixel(ty.lo, tx.lo);
            let p01 = g.pixel(ty.lo, tx.hi);
            let p10 = g.pixel(ty.hi, tx.lo);
            let p11 = g.pixel(ty.hi, tx.hi);
            let dst = out.pixel_mut(r, col);
            for ch in 0..c {
                let top = lerp(p00[ch], p01[ch], tx.frac);
                let bot = lerp(p10[ch], p11[ch], tx.frac);
                dst[ch] = lerp(top, bot, ty.frac);
            }
        }
    }
    out
}

/// Adds output row `ty` of [`bilinear_resize`] of `g` into the first `C` slots
/// of each `stride`-wide record of `out`, rounding exactly as the full resize does.
#[inline(always)]
pub(crate) fn bilinear_add_row<T: Scalar>(g: &Grid<T>, ty: &Tap1d<T>, xs: &[Tap1d<T>], out: &mut [T], stride: usize) {
    let c = g.channels();
    let lo = &g.data()[ty.lo * g.width() * c..(ty.lo + 1) * g.width() * c];
    let hi = &g.data()[ty.hi * g.width() * c..(ty.hi + 1) * g.width() * c];
    for (dst, tx) in out.chunks_exact_mut(stride).zip(xs) {
        let p00 = &lo[tx.lo * c..(tx.lo + 1) * c];
        let p01 = &lo[tx.hi * c..(tx.hi + 1) * c];
        let p10 = &hi[tx.lo * c..(tx.lo + 1) * c];
        let p11 = &hi[tx.hi * c..(tx.hi + 1) * c];
        for ch in 0..c {
            let top = lerp(p00[ch], p01[ch], tx.frac);
            let bot = lerp(p10[ch], p11[ch], tx.frac);
            dst[ch] += lerp(top, bot, ty.frac);
        }
    }
}

/// Adjoint of [`bilinear_resize`]: scatters an output gradient onto an `in_h × in_w` grid.
pub fn bilinear_resize_adjoint<T: Scalar>(grad_out: &Grid<T>, in_h: usize, in_w: usize) -> Grid<T> {
    let (out_h, out_w, c) = grad_out.shape();
    let ys = resize_taps::<T>(in_h, out_h);
    let xs = resize_taps::<T>(in_w, out_w);
    let mut out = Grid::zeros(in_h, in_w, c);
    let one = T::one();
    for (r, ty) in ys.iter().enumerate() {
        for (col, tx) in xs.iter().enumerate() {
            let g = grad_out.pixel(r, col).to_vec();
            let weights = [
                (ty.lo, tx.lo, (one - ty.frac) * (one - tx.frac)),
                (ty.lo, tx.hi, (one - ty.frac) * tx.frac),
                (ty.hi, tx.lo, ty.frac * (one - tx.frac)),
                (ty.hi, tx.hi, ty.frac * tx.frac),
            ];
            for (sr, sc, wt) in weights {
                let dst = out.pixel_mut(sr, sc);
                for (d, &gv) in dst.iter_mut().zip(&g) {
                    *d += wt * gv;
                }
            }
        }
    }
    out
}

/// Rotates a derivative kernel pair: `(cosθ·k + sinθ·p, −sinθ·k + cosθ·p)`.
pub fn rotate_kernel<T: Scalar>(
    k: &Kernel3x3<T>,
    partner: &Kernel3x3<T>,
    theta: T,
) -> (Kernel3x3<T>, Kernel3x3<T>) {
    let (s, c) = theta.sin_cos();
    let mut u = [T::zero(); 9];
    let mut v = [T::zero(); 9];
    for i in 0..9 {
        u[i] = c * k.weights[i] + s * partner.weights[i];
        v[i] = -s * k.weights[i] + c * partner.weights[i];
    }
    (Kernel3x3::new(u), Kernel3x3::new(v))
}
