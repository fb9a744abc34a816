//! Training objectives and the feature and flow backends they use.

mod appearance;
mod features;
mod flow;
mod motion;
mod ot;

pub use appearance::{
    appearance_loss, appearance_loss_on, mvid_loss, mvid_loss_on, target_motion_features, AppearanceTarget,
    RowSampler,
};
pub use features::{default_extractor, FeatureExtractor, RandomFeatureBank, DEFAULT_WIDTHS, FEATURE_TAG};
pub use flow::{default_flow, luma_on, warp_on, FlowConfig, FlowEstimator, HornSchunck};
pub use motion::{
    dir_loss, dir_loss_on, mvec_combine, mvec_loss, mvec_loss_on, norm_loss, norm_loss_on, overflow_loss,
    overflow_loss_on, FlowField, MvecTerms, MvecVars,
};
pub use ot::{ot_loss, ot_loss_on, ot_moment, ot_moment_on, ot_structure, ot_structure_on};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// `n` feature vectors of width `C`, stored as an `n × 1 × C` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet<T = f32> {
    grid: Grid<T>,
}

impl<T: Scalar> FeatureSet<T> {
    /// Row-major `n × width` values.
    pub fn new(width: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || data.is_empty() || data.len() % width != 0 {
            return Err(Error::Shape(format!("{} values do not form rows of {width}", data.len())));
        }
        let n = data.len() / width;
        Ok(Self {
            grid: Grid::from_vec(n, 1, width, data)?,
        })
    }

    /// Every cell of a feature map becomes one row.
    pub fn from_map(map: Grid<T>) -> Self {
        let (n, c) = (map.cells(), map.channels());
        Self {
            grid: map.reshape(n, 1, c).unwrap(),
        }
    }

    pub fn rows(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.channels()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.grid.pixel(i, 0)
    }

    pub fn data(&self) -> &[T] {
        self.grid.data()
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }
}
