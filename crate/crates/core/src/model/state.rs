use super::config::DyncaConfig;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// Evolving cell state and the number of steps taken since the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct NcaState<T = f32> {
    pub grid: Grid<T>,
    pub step: u64,
}

impl<T: Scalar> NcaState<T> {
    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn channels(&self) -> usize {
        self.grid.channels()
    }

    pub fn check(&self, cfg: &DyncaConfig) -> Result<()> {
        if self.grid.channels() != cfg.channels {
            return Err(Error::Shape(format!(
                "state has {} channels, config expects {}",
                self.grid.channels(),
                cfg.channels
            )));
        }
        Ok(())
    }

    /// RGB channels mapped from the `[-1, 1]` state range to `[0, 1]` (unclamped).
    pub fn rgb(&self) -> Grid<T> {
        let half = T::lit(0.5);
        self.grid.slice_channels(0, 3).map(|x| x * half + half)
    }
}

/// All-zero seed of size `h × w` for `cfg`.
pub fn make_seed<T: Scalar>(cfg: &DyncaConfig, h: usize, w: usize) -> Result<NcaState<T>> {
    cfg.validate()?;
    cfg.check_extent(h, w)?;
    Ok(NcaState {
        grid: Grid::zeros(h, w, cfg.channels),
        step: 0,
    })
}

/// Counter-based source of the stochastic update mask.
///
/// The mask bit of cell `(row, col)` at a given step is a pure function of
/// `(seed, step, row, col)`, so evaluation order and thread count never change it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngKey {
    pub seed: u64,
}

#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngKey {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Uniform draw in `[0, 1)` for one cell at one step.
    #[inline]
    pub fn uniform(&self, step: u64, row: usize, col: usize) -> f64 {
        let cell = ((row as u64) << 32) | col as u64;
        let h = mix64(
            self.seed
                ^ mix64(step.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ mix64(cell.wrapping_add(0x632b_e59b))),
        );
        (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli(`rate`) mask bit.
    #[inline]
    pub fn mask(&self, step: u64, row: usize, col: usize, rate: f64) -> bool {
        rate >= 1.0 || self.uniform(step, row, col) < rate
    }

    /// Columns of row `row` that update at `step`, written to `out` in ascending order.
    pub fn active_cells(&self, step: u64, row: usize, width: usize, rate: f64, out: &mut Vec<usize>) {
        out.clear();
        out.extend((0..width).filter(|&col| self.mask(step, row, col, rate)));
    }

    /// The full `h × w` mask for one step, row-major.
    pub fn mask_grid(&self, step: u64, h: usize, w: usize, rate: f64) -> Vec<bool> {
        (0..h * w)
            .map(|i| self.mask(step, i / w, i % w, rate))
            .collect()
    }
}
