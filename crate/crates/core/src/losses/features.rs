//! Deep-feature backends for the appearance loss.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FeatureSet;
use crate::autodiff::{Tape, Var};
use crate::codec::{Reader, Writer};
use crate::error::{FormatError, Result};
use crate::grid::{Grid, PaddingMode};
use crate::scalar::Scalar;

/// Maps an `H × W × 3` image in `[0, 1]` to a pyramid of feature maps.
pub trait FeatureExtractor<T: Scalar>: Send + Sync {
    fn levels(&self) -> usize;

    /// Feature maps of each level recorded on the tape, one `h × w × C_l` node per level.
    fn extract_on(&self, tape: &mut Tape<T>, image: Var) -> Result<Vec<Var>>;

    fn extract(&self, image: &Grid<T>) -> Result<Vec<FeatureSet<T>>> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let maps = self.extract_on(&mut tape, x)?;
        Ok(maps.into_iter().map(|v| FeatureSet::from_map(tape.value(v).clone())).collect())
    }
}

/// Channel widths of the default bank.
pub const DEFAULT_WIDTHS: [usize; 5] = [32, 64, 64, 128, 128];

pub const FEATURE_TAG: [u8; 4] = *b"FXW1";

/// Fixed 3×3 filters with ReLU applied to successively halved copies of the image.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomFeatureBank<T = f32> {
    /// Per level: `27 × C_l` weights (tap-major, RGB-minor) and a `1 × C_l` bias.
    pub layers: Vec<(Grid<T>, Grid<T>)>,
}

/// The default five-level bank for a seed.
pub fn default_extractor<T: Scalar>(seed: u64) -> RandomFeatureBank<T> {
    RandomFeatureBank::random(seed, &DEFAULT_WIDTHS)
}

impl<T: Scalar> RandomFeatureBank<T> {
    pub fn random(seed: u64, widths: &[usize]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0f64 / 27.0).sqrt();
        let layers = widths
            .iter()
            .map(|&c| {
                let w: Vec<T> = (0..27 * c).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
                let b: Vec<T> = (0..c).map(|_| T::lit(rng.gen_range(-0.1..0.1))).collect();
                (Grid::matrix(27, c, w).unwrap(), Grid::matrix(1, c, b).unwrap())
            })
            .collect();
        Self { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|(w, _)| w.width()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> RandomFeatureBank<U> {
        RandomFeatureBank {
            layers: self.layers.iter().map(|(w, b)| (w.cast(), b.cast())).collect(),
        }
    }

    /// `FXW1` section: `u16` level count, then per level `u16` width, weights, bias.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::header();
        w.tag(&FEATURE_TAG);
        w.u16(self.layers.len() as u16);
        for (wt, b) in &self.layers {
            w.u16(wt.width() as u16);
            w.f32s(wt.data().iter().map(|v| v.as_f32()));
            w.f32s(b.data().iter().map(|v| v.as_f32()));
        }
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header()?;
        let tag = r.tag("section tag")?;
        if tag != FEATURE_TAG {
            return Err(FormatError::BadSection(tag).into());
        }
        let levels = r.u16("level count")? as usize;
        if levels == 0 {
            return Err(FormatError::Corrupt {
                field: "level count",
                reason: "zero levels".into(),
            }
            .into());
        }
        let mut layers = Vec::with_capacity(levels);
        for _ in 0..levels {
            let c = r.u16("level width")? as usize;
            let w = r.f32s(27 * c, "filter weights")?;
            let b = r.f32s(c, "filter bias")?;
            layers.push((
                Grid::matrix(27, c, w.into_iter().map(|v| T::lit(v as f64)).collect())?,
                Grid::matrix(1, c, b.into_iter().map(|v| T::lit(v as f64)).collect())?,
            ));
        }
        Ok(Self { layers })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }
}

impl<T: Scalar> FeatureExtractor<T> for RandomFeatureBank<T> {
    fn levels(&self) -> usize {
        self.layers.len()
    }

    fn extract_on(&self, tape: &mut Tape<T>, image: Var) -> Result<Vec<Var>> {
        let centred = tape.scale(image, T::lit(2.0));
        let mut x = tape.add_scalar(centred, -T::one());
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, (w, b)) in self.layers.iter().enumerate() {
            if l > 0 {
                let (h, wd, _) = tape.value(x).shape();
                x = tape.resize(x, (h / 2).max(1), (wd / 2).max(1));
            }
            let wv = tape.constant(w.clone());
            let bv = tape.constant(b.clone());
            let p = tape.patches3x3(x, PaddingMode::Replicate);
            let f = tape.dense(p, wv, Some(bv))?;
            out.push(tape.relu(f));
        }
        Ok(out)
    }
}
