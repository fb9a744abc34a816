use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{
    bilinear_resize, bilinear_resize_adjoint, conv3x3_depthwise, conv3x3_depthwise_adjoint, Grid, Kernel3x3,
    PaddingMode,
};
use crate::model::mlp::{transpose, MlpView, ParamGrads};
use crate::model::{perception_input, DyncaConfig, PerceptionKernels, RngKey, Steering};
use crate::scalar::Scalar;

/// Handle to a node of a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written reverse rule, recorded by [`Tape::custom`].
pub trait CustomOp<T: Scalar>: Send + Sync {
    /// Gradient for each input given the gradient of the output, `None` for
    /// inputs the op does not differentiate.
    fn backward(&self, inputs: &[&Grid<T>], output: &Grid<T>, grad: &Grid<T>) -> Vec<Option<Grid<T>>>;
}

#[derive(Clone, Copy, Debug)]
enum Unary<T> {
    Relu,
    Neg,
    Abs,
    Sqrt,
    Square,
    Scale(T),
    AddScalar(T),
    MinConst(T),
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Saved state of a masked MLP evaluation.
struct MlpRecord<T> {
    active: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    hidden: Vec<T>,
}

enum Op<T: Scalar> {
    Leaf,
    Constant,
    Conv {
        x: Var,
        kernel: Kernel3x3<T>,
        pad: PaddingMode,
    },
    Resize {
        x: Var,
    },
    Perceive {
        x: Var,
        cfg: DyncaConfig,
        kernels: PerceptionKernels<T>,
        steering: Steering<T>,
    },
    Mlp {
        z: Var,
        w1: Var,
        b1: Var,
        w2: Var,
        record: MlpRecord<T>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Patches {
        x: Var,
        pad: PaddingMode,
    },
    Gather {
        x: Var,
        rows: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Unary {
        x: Var,
        f: Unary<T>,
    },
    Binary {
        a: Var,
        b: Var,
        f: Binary,
    },
    Slice {
        x: Var,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::Conv { x, .. }
            | Op::Resize { x }
            | Op::Perceive { x, .. }
            | Op::Patches { x, .. }
            | Op::Gather { x, .. }
            | Op::Reshape { x }
            | Op::Unary { x, .. }
            | Op::Slice { x, .. }
            | Op::Sum { x }
            | Op::Mean { x } => vec![*x],
            Op::Mlp { z, w1, b1, w2, .. } => vec![*z, *w1, *b1, *w2],
            Op::Dense { x, w, b } => std::iter::once(*x).chain(std::iter::once(*w)).chain(*b).collect(),
            Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Concat { parts } => parts.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Scalar> {
    value: Grid<T>,
    op: Op<T>,
    grad: bool,
}

/// Reverse-mode recording of grid computations.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Rows processed together in the parallel MLP reverse pass; fixed so the
/// weight-gradient summation order does not depend on the thread count.
const MLP_ROW_CHUNK: usize = 4;

fn shape_err<T: Scalar>(what: &str, a: &Grid<T>, b: &Grid<T>) -> Error {
    Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Grid<T>, op: Op<T>) -> Var {
        let grad = matches!(op, Op::Leaf) || op.inputs().iter().any(|v| self.nodes[v.0].grad);
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Grid<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Grid<T>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Grid<T> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1 × 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    pub fn conv(&mut self, x: Var, kernel: &Kernel3x3<T>, pad: PaddingMode) -> Var {
        let value = conv3x3_depthwise(self.value(x), kernel, pad);
        self.push(
            value,
            Op::Conv {
                x,
                kernel: kernel.clone(),
                pad,
            },
        )
    }

    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let value = bilinear_resize(self.value(x), out_h, out_w);
        self.push(value, Op::Resize { x })
    }

    /// The automaton's perception input (multi-scale, steered, with CPE when enabled).
    pub fn perceive(
        &mut self,
        x: Var,
        cfg: &DyncaConfig,
        kernels: &PerceptionKernels<T>,
        steering: &Steering<T>,
    ) -> Result<Var> {
        let value = perception_input(self.value(x), cfg, kernels, steering)?;
        Ok(self.push(
            value,
            Op::Perceive {
                x,
                cfg: cfg.clone(),
                kernels: kernels.clone(),
                steering: steering.clone(),
            },
        ))
    }

    /// Masked residual of the update MLP, `relu(z·W1 + b1)·W2 ⊙ M`, with the
    /// mask drawn from `rng` at `step` exactly as the engine does.
    pub fn masked_mlp(&mut self, z: Var, w1: Var, b1: Var, w2: Var, rng: &RngKey, step: u64, rate: f64) -> Result<Var> {
        let (zv, w1v, b1v, w2v) = (self.value(z), self.value(w1), self.value(b1), self.value(w2));
        let (h, w, in_dim) = zv.shape();
        if w1v.shape() != (in_dim, w1v.width(), 1)
            || b1v.shape() != (1, w1v.width(), 1)
            || w2v.shape() != (w1v.width(), w2v.width(), 1)
        {
            return Err(Error::Shape(format!(
                "mlp weights {:?} {:?} {:?} for input width {in_dim}",
                w1v.shape(),
                b1v.shape(),
                w2v.shape()
            )));
        }
        let view = MlpView::new(w1v, b1v, w2v);
        let (hd, c) = (view.hidden, view.channels);
        let active: Vec<Vec<usize>> = (0..h)
            .map(|r| {
                let mut a = Vec::new();
                rng.active_cells(step, r, w, rate, &mut a);
                a
            })
            .collect();
        let mut offsets = Vec::with_capacity(h + 1);
        offsets.push(0);
        for a in &active {
            offsets.push(offsets.last().unwrap() + a.len() * hd);
        }
        let mut hidden = vec![T::zero(); *offsets.last().unwrap()];
        let mut out = Grid::zeros(h, w, c);
        {
            let mut rest = hidden.as_mut_slice();
            let mut saves = Vec::with_capacity(h);
            for a in &active {
                let (head, tail) = rest.split_at_mut(a.len() * hd);
                saves.push(head);
                rest = tail;
            }
            let zdata = zv.data();
            out.data_mut()
                .par_chunks_mut(w * c)
                .zip(saves.into_par_iter())
                .enumerate()
                .for_each(|(r, (row, save))| {
                    view.forward_row(&zdata[r * w * in_dim..(r + 1) * w * in_dim], row, &active[r], Some(save));
                });
        }
        Ok(self.push(
            out,
            Op::Mlp {
                z,
                w1,
                b1,
                w2,
                record: MlpRecord {
                    active,
                    offsets,
                    hidden,
                },
            },
        ))
    }

    /// Per-cell affine map: `x` is `H × W × in`, `w` is `in × out`, `b` is `1 × out`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (h, wd, n) = xv.shape();
        if wv.height() != n || wv.channels() != 1 {
            return Err(shape_err("dense weight", xv, wv));
        }
        let m = wv.width();
        if let Some(b) = b {
            if self.value(b).shape() != (1, m, 1) {
                return Err(shape_err("dense bias", wv, self.value(b)));
            }
        }
        let bias = b.map(|b| self.value(b).data().to_vec());
        let mut out = Grid::zeros(h, wd, m);
        let (xd, wdata) = (xv.data(), wv.data());
        out.data_mut().par_chunks_mut(wd * m).enumerate().for_each(|(r, row)| {
            crate::simd::dispatch(
                #[inline(always)]
                || {
                    for (col, o) in row.chunks_exact_mut(m).enumerate() {
                        if let Some(b) = &bias {
                            o.copy_from_slice(b);
                        }
                        let xi = &xd[(r * wd + col) * n..(r * wd + col + 1) * n];
                        for (&xk, w_row) in xi.iter().zip(wdata.chunks_exact(m)) {
                            for (acc, &wv) in o.iter_mut().zip(w_row) {
                                *acc = xk.mul_add(wv, *acc);
                            }
                        }
                    }
                },
            )
        });
        Ok(self.push(out, Op::Dense { x, w, b }))
    }

    /// 3×3 neighbourhoods gathered per cell: output channel `tap·C + ch`, taps row-major.
    pub fn patches3x3(&mut self, x: Var, pad: PaddingMode) -> Var {
        let xv = self.value(x);
        let (h, w, c) = xv.shape();
        let mut out = Grid::zeros(h, w, 9 * c);
        for r in 0..h {
            for col in 0..w {
                let o = out.pixel_mut(r, col);
                for tap in 0..9 {
                    let rr = pad.resolve(r as isize + tap as isize / 3 - 1, h);
                    let cc = pad.resolve(col as isize + tap as isize % 3 - 1, w);
                    if let (Some(rr), Some(cc)) = (rr, cc) {
                        o[tap * c..(tap + 1) * c].copy_from_slice(xv.pixel(rr, cc));
                    }
                }
            }
        }
        self.push(out, Op::Patches { x, pad })
    }

    /// Selects cells (row-major index) of `x` into an `n × 1 × C` feature set.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.channels();
        let cells = xv.cells();
        if let Some(&bad) = rows.iter().find(|&&r| r >= cells) {
            return Err(Error::Shape(format!("row {bad} out of {cells}")));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(&xv.data()[r * c..(r + 1) * c]);
        }
        let out = Grid::from_vec(rows.len(), 1, c, data)?;
        Ok(self.push(
            out,
            Op::Gather {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Flattens `H × W × C` into an `HW × 1 × C` feature set.
    pub fn flatten_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = xv.clone().reshape(xv.cells(), 1, xv.channels()).unwrap();
        self.push(out, Op::Reshape { x })
    }

    fn unary(&mut self, x: Var, f: Unary<T>) -> Var {
        let value = self.value(x).map(|v| match f {
            Unary::Relu => v.max(T::zero()),
            Unary::Neg => -v,
            Unary::Abs => v.abs(),
            Unary::Sqrt => v.sqrt(),
            Unary::Square => v * v,
            Unary::Scale(k) => v * k,
            Unary::AddScalar(k) => v + k,
            Unary::MinConst(k) => v.min(k),
        });
        self.push(value, Op::Unary { x, f })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Neg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sqrt)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        self.unary(x, Unary::Scale(k))
    }

    pub fn add_scalar(&mut self, x: Var, k: T) -> Var {
        self.unary(x, Unary::AddScalar(k))
    }

    /// `min(x, k)`; the gradient passes where `x < k`.
    pub fn min_const(&mut self, x: Var, k: T) -> Var {
        self.unary(x, Unary::MinConst(k))
    }

    fn binary(&mut self, a: Var, b: Var, f: Binary) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| match f {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        })?;
        Ok(self.push(value, Op::Binary { a, b, f }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.channels() || len == 0 {
            return Err(Error::Shape(format!(
                "channel slice {start}..{} of {}",
                start + len,
                xv.channels()
            )));
        }
        let value = xv.slice_channels(start, len);
        Ok(self.push(value, Op::Slice { x, start }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let grids: Vec<&Grid<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Grid::concat_channels(&grids)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Grid::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Grid::scalar(self.value(x).mean());
        self.push(value, Op::Mean { x })
    }

    /// Records an op whose value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Grid<T>, op: Box<dyn CustomOp<T>>) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != (1, 1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Grid<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Grid::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            for (input, contribution) in self.propagate(node, &g) {
                if !self.nodes[input.0].grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(contribution.data()).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(contribution),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Grid<T>) -> Vec<(Var, Grid<T>)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].grad;
        match &node.op {
            Op::Leaf | Op::Constant => vec![],
            Op::Conv { x, kernel, pad } => vec![(*x, conv3x3_depthwise_adjoint(g, kernel, *pad))],
            Op::Resize { x } => {
                let (h, w, _) = val(*x).shape();
                vec![(*x, bilinear_resize_adjoint(g, h, w))]
            }
            Op::Perceive {
                x,
                cfg,
                kernels,
                steering,
            } => vec![(
                *x,
                crate::model::perception_input_adjoint(g, cfg, kernels, steering),
            )],
            Op::Mlp { z, w1, b1, w2, record } => self.mlp_backward(*z, *w1, *b1, *w2, record, g),
            Op::Dense { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (h, wd, n) = xv.shape();
                let m = wv.width();
                let mut out = Vec::new();
                if needs(*x) {
                    let wdat = wv.data();
                    let mut gx = Grid::zeros(h, wd, n);
                    gx.data_mut()
                        .par_chunks_mut(n)
                        .zip(g.data().par_chunks(m))
                        .for_each(|(gxi, gi)| {
                            for (k, o) in gxi.iter_mut().enumerate() {
                                *o = wdat[k * m..(k + 1) * m].iter().zip(gi).map(|(&a, &b)| a * b).sum();
                            }
                        });
                    out.push((*x, gx));
                }
                if needs(*w) {
                    let mut gw = Grid::zeros(n, m, 1);
                    for (xi, gi) in xv.data().chunks_exact(n).zip(g.data().chunks_exact(m)) {
                        for (&xk, row) in xi.iter().zip(gw.data_mut().chunks_exact_mut(m)) {
                            row.iter_mut().zip(gi).for_each(|(a, &b)| *a += xk * b);
                        }
                    }
                    out.push((*w, gw));
                }
                if let Some(b) = b.filter(|&b| needs(b)) {
                    let mut gb = Grid::zeros(1, m, 1);
                    for gi in g.data().chunks_exact(m) {
                        gb.data_mut().iter_mut().zip(gi).for_each(|(a, &b)| *a += b);
                    }
                    out.push((b, gb));
                }
                out
            }
            Op::Patches { x, pad } => {
                let (h, w, c) = val(*x).shape();
                let mut gx = Grid::zeros(h, w, c);
                for r in 0..h {
                    for col in 0..w {
                        let gi = g.pixel(r, col);
                        for tap in 0..9 {
                            let rr = pad.resolve(r as isize + tap as isize / 3 - 1, h);
                            let cc = pad.resolve(col as isize + tap as isize % 3 - 1, w);
                            if let (Some(rr), Some(cc)) = (rr, cc) {
                                let px = gx.pixel_mut(rr, cc);
                                px.iter_mut().zip(&gi[tap * c..(tap + 1) * c]).for_each(|(a, &b)| *a += b);
                            }
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::Gather { x, rows } => {
                let (h, w, c) = val(*x).shape();
                let mut gx = Grid::zeros(h, w, c);
                for (i, &r) in rows.iter().enumerate() {
                    let dst = &mut gx.data_mut()[r * c..(r + 1) * c];
                    dst.iter_mut().zip(&g.data()[i * c..(i + 1) * c]).for_each(|(a, &b)| *a += b);
                }
                vec![(*x, gx)]
            }
            Op::Reshape { x } => {
                let (h, w, c) = val(*x).shape();
                vec![(*x, g.clone().reshape(h, w, c).unwrap())]
            }
            Op::Unary { x, f } => {
                let xv = val(*x);
                let y = &node.value;
                let gx = Grid::from_vec(
                    xv.height(),
                    xv.width(),
                    xv.channels(),
                    xv.data()
                        .iter()
                        .zip(y.data())
                        .zip(g.data())
                        .map(|((&xi, &yi), &gi)| match f {
                            Unary::Relu => {
                                if xi > T::zero() {
                                    gi
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Neg => -gi,
                            Unary::Abs => gi * sign(xi),
                            Unary::Sqrt => {
                                if yi > T::zero() {
                                    gi / (yi + yi)
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Square => gi * (xi + xi),
                            Unary::Scale(k) => gi * *k,
                            Unary::AddScalar(_) => gi,
                            Unary::MinConst(k) => {
                                if xi < *k {
                                    gi
                                } else {
                                    T::zero()
                                }
                            }
                        })
                        .collect(),
                )
                .unwrap();
                vec![(*x, gx)]
            }
            Op::Binary { a, b, f } => {
                let (av, bv) = (val(*a), val(*b));
                let mut out = Vec::new();
                if needs(*a) {
                    let ga = match f {
                        Binary::Add | Binary::Sub => g.clone(),
                        Binary::Mul => g.zip_map(bv, |gi, y| gi * y).unwrap(),
                        Binary::Div => g.zip_map(bv, |gi, y| gi / y).unwrap(),
                    };
                    out.push((*a, ga));
                }
                if needs(*b) {
                    let gb = match f {
                        Binary::Add => g.clone(),
                        Binary::Sub => g.map(|gi| -gi),
                        Binary::Mul => g.zip_map(av, |gi, x| gi * x).unwrap(),
                        Binary::Div => {
                            let q = node.value.zip_map(bv, |z, y| z / y).unwrap();
                            g.zip_map(&q, |gi, q| -gi * q).unwrap()
                        }
                    };
                    out.push((*b, gb));
                }
                out
            }
            Op::Slice { x, start } => {
                let (h, w, c) = val(*x).shape();
                let len = g.channels();
                let mut gx = Grid::zeros(h, w, c);
                for (dst, src) in gx.data_mut().chunks_exact_mut(c).zip(g.data().chunks_exact(len)) {
                    dst[*start..start + len].copy_from_slice(src);
                }
                vec![(*x, gx)]
            }
            Op::Concat { parts } => {
                let mut start = 0;
                let mut out = Vec::new();
                for &p in parts {
                    let len = val(p).channels();
                    if needs(p) {
                        out.push((p, g.slice_channels(start, len)));
                    }
                    start += len;
                }
                out
            }
            Op::Sum { x } => {
                let (h, w, c) = val(*x).shape();
                vec![(*x, Grid::filled(h, w, c, g.data()[0]))]
            }
            Op::Mean { x } => {
                let xv = val(*x);
                let (h, w, c) = xv.shape();
                vec![(*x, Grid::filled(h, w, c, g.data()[0] / T::count(xv.len())))]
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Grid<T>> = inputs.iter().map(|&v| val(v)).collect();
                inputs
                    .iter()
                    .zip(op.backward(&values, &node.value, g))
                    .filter_map(|(&v, gv)| gv.map(|gv| (v, gv)))
                    .collect()
            }
        }
    }

    fn mlp_backward(&self, z: Var, w1: Var, b1: Var, w2: Var, rec: &MlpRecord<T>, g: &Grid<T>) -> Vec<(Var, Grid<T>)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let (zv, w1v, b1v, w2v) = (val(z), val(w1), val(b1), val(w2));
        let view = MlpView::new(w1v, b1v, w2v);
        let (h, w, n) = zv.shape();
        let c = view.channels;
        let tr = view.transposed();
        let mut gz = Grid::zeros(h, w, n);
        let zdata = zv.data();
        let partials: Vec<ParamGrads<T>> = gz
            .data_mut()
            .par_chunks_mut(MLP_ROW_CHUNK * w * n)
            .enumerate()
            .map(|(chunk, gz_rows)| {
                let mut acc = ParamGrads::zeros(&view);
                for (i, gz_row) in gz_rows.chunks_mut(w * n).enumerate() {
                    let r = chunk * MLP_ROW_CHUNK + i;
                    view.backward_row(
                        &tr,
                        &zdata[r * w * n..(r + 1) * w * n],
                        &rec.hidden[rec.offsets[r]..rec.offsets[r + 1]],
                        &g.data()[r * w * c..(r + 1) * w * c],
                        &rec.active[r],
                        gz_row,
                        &mut acc,
                    );
                }
                acc
            })
            .collect();
        let mut total = ParamGrads::zeros(&view);
        for p in &partials {
            total.add_assign(p);
        }
        let mut out = vec![(z, gz)];
        let to_grid = |data: Vec<T>, like: &Grid<T>| Grid::from_vec(like.height(), like.width(), 1, data).unwrap();
        out.push((w1, to_grid(total.w1, w1v)));
        out.push((b1, to_grid(total.b1, b1v)));
        out.push((w2, to_grid(transpose(&total.w2t, c, view.hidden), w2v)));
        out
    }
}

#[inline]
pub(crate) fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Result of [`Tape::backward`]: one optional gradient per node.
pub struct Gradients<T> {
    grads: Vec<Option<Grid<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a node, `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Grid<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, zero-filled in the node's shape when absent.
    pub fn wrt(&self, tape: &Tape<T>, v: Var) -> Grid<T> {
        self.get(v).cloned().unwrap_or_else(|| {
            let (h, w, c) = tape.value(v).shape();
            Grid::zeros(h, w, c)
        })
    }
}
