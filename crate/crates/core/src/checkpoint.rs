//! The `DYNC` weight file.
//!
//! Layout, little-endian: `"DYNC"`, `u16` version, `u16` C, `u16` FC,
//! `u8` scale count and one `u16` per scale, `u8` padding code, `u8` CPE flag,
//! `u32` frame interval, `f64` update rate, `u16` seed height and width, then
//! `f32` arrays `w1`, `b1`, `w2`.

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::grid::{Grid, PaddingMode};
use crate::model::{DyncaConfig, UpdateRule};
use crate::scalar::Scalar;

fn corrupt(field: &'static str, reason: impl Into<String>) -> FormatError {
    FormatError::Corrupt {
        field,
        reason: reason.into(),
    }
}

fn narrow(v: usize, field: &'static str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Invalid(format!("{field} = {v} does not fit the weight file")))
}

pub fn encode_checkpoint<T: Scalar>(rule: &UpdateRule<T>, cfg: &DyncaConfig) -> Result<Vec<u8>> {
    rule.check(cfg)?;
    let mut w = Writer::header();
    w.u16(narrow(cfg.channels, "channels")?);
    w.u16(narrow(cfg.hidden, "hidden")?);
    w.u8(u8::try_from(cfg.scales.len()).map_err(|_| Error::Invalid("too many scales".into()))?);
    for &s in &cfg.scales {
        w.u16(narrow(s, "scale")?);
    }
    w.u8(cfg.padding.code());
    w.u8(cfg.use_cpe as u8);
    w.u32(u32::try_from(cfg.frame_interval).map_err(|_| Error::Invalid("frame interval too large".into()))?);
    w.f64(cfg.update_rate);
    w.u16(narrow(cfg.seed_h, "seed height")?);
    w.u16(narrow(cfg.seed_w, "seed width")?);
    for layer in rule.layers() {
        w.f32s(layer.data().iter().map(|v| v.as_f32()));
    }
    Ok(w.buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(UpdateRule<f32>, DyncaConfig)> {
    let mut r = Reader::new(bytes);
    r.header()?;
    let channels = r.u16("channels")? as usize;
    let hidden = r.u16("hidden")? as usize;
    let n_scales = r.u8("scale count")? as usize;
    let scales = (0..n_scales)
        .map(|_| r.u16("scales").map(usize::from))
        .collect::<Result<Vec<_>, _>>()?;
    let pad = r.u8("padding")?;
    let padding = PaddingMode::from_code(pad).ok_or_else(|| corrupt("padding", format!("unknown code {pad}")))?;
    let use_cpe = match r.u8("cpe flag")? {
        0 => false,
        1 => true,
        v => return Err(corrupt("cpe flag", format!("{v}")).into()),
    };
    let frame_interval = r.u32("frame interval")? as usize;
    let update_rate = r.f64("update rate")?;
    let seed_h = r.u16("seed height")? as usize;
    let seed_w = r.u16("seed width")? as usize;
    let cfg = DyncaConfig {
        channels,
        hidden,
        seed_h,
        seed_w,
        padding,
        scales,
        use_cpe,
        frame_interval,
        update_rate,
    };
    cfg.validate().map_err(|e| corrupt("config", e.to_string()))?;
    let in_dim = cfg.in_dim();
    let w1 = r.f32s(in_dim * hidden, "w1")?;
    let b1 = r.f32s(hidden, "b1")?;
    let w2 = r.f32s(hidden * channels, "w2")?;
    if !r.is_empty() {
        return Err(corrupt("trailer", "unexpected bytes after w2").into());
    }
    let rule = UpdateRule {
        w1: Grid::matrix(in_dim, hidden, w1)?,
        b1: Grid::matrix(1, hidden, b1)?,
        w2: Grid::matrix(hidden, channels, w2)?,
    };
    Ok((rule, cfg))
}

pub fn save_checkpoint<T: Scalar>(rule: &UpdateRule<T>, cfg: &DyncaConfig, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(rule, cfg)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(UpdateRule<f32>, DyncaConfig)> {
    decode_checkpoint(&std::fs::read(path)?)
}
