//! Hand-crafted target motion fields and flow colouring.

use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::losses::FlowField;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Right,
    Up,
    RightAccRight,
    RightAccDown,
    Circular,
    Converge,
    Diverge,
    Hyperbolic,
    TwoBlockX,
    TwoBlockY,
    ThreeBlock,
    FourBlock,
}

impl FieldKind {
    pub const ALL: [FieldKind; 12] = [
        FieldKind::Right,
        FieldKind::Up,
        FieldKind::RightAccRight,
        FieldKind::RightAccDown,
        FieldKind::Circular,
        FieldKind::Converge,
        FieldKind::Diverge,
        FieldKind::Hyperbolic,
        FieldKind::TwoBlockX,
        FieldKind::TwoBlockY,
        FieldKind::ThreeBlock,
        FieldKind::FourBlock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Right => "right",
            FieldKind::Up => "up",
            FieldKind::RightAccRight => "right_acc_right",
            FieldKind::RightAccDown => "right_acc_down",
            FieldKind::Circular => "circular",
            FieldKind::Converge => "converge",
            FieldKind::Diverge => "diverge",
            FieldKind::Hyperbolic => "hyperbolic",
            FieldKind::TwoBlockX => "2block_x",
            FieldKind::TwoBlockY => "2block_y",
            FieldKind::ThreeBlock => "3block",
            FieldKind::FourBlock => "4block",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|k| k.name()).collect()
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL.into_iter().find(|k| k.name() == key).ok_or_else(|| {
            Error::Invalid(format!(
                "unknown field {s:?}; expected one of {}",
                Self::names().join(", ")
            ))
        })
    }
}

/// Unit vector at a multiple of 90°, exact.
fn axis(deg: u32) -> (f64, f64) {
    match deg {
        0 => (1.0, 0.0),
        90 => (0.0, 1.0),
        180 => (-1.0, 0.0),
        270 => (0.0, -1.0),
        _ => unreachable!(),
    }
}

/// Lattice coordinates of a cell: `i` along the width, `j` along the height,
/// measured from the grid centre to the cell centre. On odd sides the centre
/// cell sits at 0, where the radial fields are defined as zero.
pub fn lattice(r: usize, c: usize, h: usize, w: usize) -> (f64, f64) {
    (c as f64 - w as f64 / 2.0 + 0.5, r as f64 - h as f64 / 2.0 + 0.5)
}

/// The field before normalization, in `f64`.
pub fn raw_field(kind: FieldKind, h: usize, w: usize) -> FlowField<f64> {
    let (hf, wf) = (h as f64, w as f64);
    let diag = (hf * hf + wf * wf).sqrt();
    FlowField::from_fn(h, w, |r, c| {
        let (i, j) = lattice(r, c, h, w);
        match kind {
            FieldKind::Right => axis(0),
            FieldKind::Up => axis(270),
            FieldKind::RightAccRight => ((2.0 * i + wf) / 2.0, 0.0),
            FieldKind::RightAccDown => ((2.0 * j + hf) / 2.0, 0.0),
            FieldKind::Circular => (j / diag, -i / diag),
            FieldKind::Converge => {
                let n = i.hypot(j);
                if n == 0.0 {
                    return (0.0, 0.0);
                }
                (-i / n, -j / n)
            }
            FieldKind::Diverge => {
                let n = i.hypot(j);
                if n == 0.0 {
                    return (0.0, 0.0);
                }
                (i / n, j / n)
            }
            FieldKind::Hyperbolic => (j / diag, i / diag),
            FieldKind::TwoBlockX => axis(if j >= 0.0 { 0 } else { 180 }),
            FieldKind::TwoBlockY => axis(if j >= 0.0 { 90 } else { 270 }),
            FieldKind::ThreeBlock => axis(if j >= 0.0 {
                0
            } else if i >= 0.0 {
                180
            } else {
                90
            }),
            FieldKind::FourBlock => axis(match (i >= 0.0, j >= 0.0) {
                (true, true) => 0,
                (true, false) => 270,
                (false, true) => 90,
                (false, false) => 180,
            }),
        }
    })
}

/// Divides by the mean cell norm.
pub fn normalize_field(f: &FlowField<f64>) -> FlowField<f64> {
    let m = f.mean_norm();
    if m == 0.0 {
        return f.clone();
    }
    FlowField::new(f.grid().map(|v| v / m)).unwrap()
}

/// Target field with mean cell L2 norm 1.
pub fn generate_field<T: Scalar>(kind: FieldKind, h: usize, w: usize) -> Result<FlowField<T>> {
    if h < 2 || w < 2 {
        return Err(Error::Invalid(format!("field needs at least 2×2 cells, got {h}×{w}")));
    }
    Ok(normalize_field(&raw_field(kind, h, w)).cast())
}

/// `u` plane then `v` plane, row-major `f32` little-endian.
pub fn field_to_raw_f32<T: Scalar>(f: &FlowField<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(f.grid().len() * 4);
    for k in 0..2 {
        for p in f.grid().data().chunks_exact(2) {
            out.extend_from_slice(&p[k].as_f32().to_le_bytes());
        }
    }
    out
}

/// The 55-entry colour wheel of the Middlebury flow visualisation, in `[0, 255]`.
pub fn color_wheel() -> Vec<[f64; 3]> {
    let segments: [(usize, [f64; 3], [f64; 3]); 6] = [
        (15, [255.0, 0.0, 0.0], [0.0, 255.0, 0.0]),
        (6, [255.0, 255.0, 0.0], [-255.0, 0.0, 0.0]),
        (4, [0.0, 255.0, 0.0], [0.0, 0.0, 255.0]),
        (11, [0.0, 255.0, 255.0], [0.0, -255.0, 0.0]),
        (13, [0.0, 0.0, 255.0], [255.0, 0.0, 0.0]),
        (6, [255.0, 0.0, 255.0], [0.0, 0.0, -255.0]),
    ];
    let mut wheel = Vec::with_capacity(55);
    for (n, base, step) in segments {
        for k in 0..n {
            let ramp = (255.0 * k as f64 / n as f64).floor();
            wheel.push([0, 1, 2].map(|c| base[c] + step[c].signum() * ramp * (step[c] != 0.0) as u8 as f64));
        }
    }
    wheel
}

/// Colour of a flow vector whose magnitude is already divided by the maximum.
fn flow_color(wheel: &[[f64; 3]], u: f64, v: f64) -> [u8; 3] {
    let n = wheel.len();
    let rad = u.hypot(v);
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (n - 1) as f64;
    let k0 = fk.floor() as usize;
    let k1 = if k0 + 1 == n { 0 } else { k0 + 1 };
    let f = fk - k0 as f64;
    [0, 1, 2].map(|c| {
        let col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
        let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
        (255.0 * col).round() as u8
    })
}

/// Middlebury colour coding; saturation scales with magnitude over the field maximum.
pub fn colorize_flow<T: Scalar>(f: &FlowField<T>) -> RgbImage {
    let wheel = color_wheel();
    let max = f
        .grid()
        .data()
        .chunks_exact(2)
        .map(|p| p[0].as_f64().hypot(p[1].as_f64()))
        .fold(0.0, f64::max);
    RgbImage::from_fn(f.width() as u32, f.height() as u32, |x, y| {
        let (u, v) = f.at(y as usize, x as usize);
        if max == 0.0 {
            return Rgb([255, 255, 255]);
        }
        Rgb(flow_color(&wheel, u.as_f64() / max, v.as_f64() / max))
    })
}
