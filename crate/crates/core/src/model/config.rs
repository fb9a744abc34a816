use crate::error::{Error, Result};
use crate::grid::PaddingMode;

/// Smallest accepted side length of a state grid.
pub const MIN_SIDE: usize = 8;

/// Named model sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelSize {
    /// 12 channels, 96 hidden units.
    Small,
    /// 16 channels, 128 hidden units.
    Large,
}

impl ModelSize {
    pub fn id(self) -> &'static str {
        match self {
            ModelSize::Small => "S",
            ModelSize::Large => "L",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "S" | "s" | "small" => Some(ModelSize::Small),
            "L" | "l" | "large" => Some(ModelSize::Large),
            _ => None,
        }
    }
}

/// Hyperparameters of one cellular automaton.
#[derive(Clone, Debug, PartialEq)]
pub struct DyncaConfig {
    /// State channels; the first three render as RGB.
    pub channels: usize,
    /// Width of the hidden layer of the update MLP.
    pub hidden: usize,
    pub seed_h: usize,
    pub seed_w: usize,
    pub padding: PaddingMode,
    /// Pyramid downsample factors, ascending, starting at 1.
    pub scales: Vec<usize>,
    pub use_cpe: bool,
    /// Steps per emitted video frame.
    pub frame_interval: usize,
    /// Bernoulli rate of the per-cell update mask.
    pub update_rate: f64,
}

impl DyncaConfig {
    pub fn new(size: ModelSize) -> Self {
        let (channels, hidden) = match size {
            ModelSize::Small => (12, 96),
            ModelSize::Large => (16, 128),
        };
        Self {
            channels,
            hidden,
            seed_h: 128,
            seed_w: 128,
            padding: PaddingMode::Replicate,
            scales: vec![1],
            use_cpe: true,
            frame_interval: 24,
            update_rate: 0.5,
        }
    }

    pub fn small() -> Self {
        Self::new(ModelSize::Small)
    }

    pub fn large() -> Self {
        Self::new(ModelSize::Large)
    }

    /// Sets the training seed size and the matching default pyramid:
    /// three octaves from 256 upward, a single scale below.
    pub fn with_seed_size(mut self, side: usize) -> Self {
        self.seed_h = side;
        self.seed_w = side;
        self.scales = if side >= 256 { vec![1, 2, 4] } else { vec![1] };
        self
    }

    pub fn with_frame_interval(mut self, t: usize) -> Self {
        self.frame_interval = t;
        self
    }

    /// Width of the MLP input: four perception blocks plus optional CPE.
    pub fn in_dim(&self) -> usize {
        4 * self.channels + if self.use_cpe { 2 } else { 0 }
    }

    pub fn max_scale(&self) -> usize {
        self.scales.last().copied().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 4 {
            return Err(Error::Config(format!(
                "need at least 4 channels (RGB + hidden), got {}",
                self.channels
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if self.scales.first() != Some(&1) {
            return Err(Error::Config("pyramid scales must start at 1".into()));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("pyramid scales must be strictly ascending".into()));
        }
        if !(self.update_rate > 0.0 && self.update_rate <= 1.0) {
            return Err(Error::Config(format!(
                "update rate must lie in (0, 1], got {}",
                self.update_rate
            )));
        }
        if self.frame_interval == 0 {
            return Err(Error::Config("frame interval must be at least 1".into()));
        }
        Ok(())
    }

    /// Checks that an `h × w` grid supports the stencil and every pyramid level.
    pub fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::TooSmall {
                height: h,
                width: w,
                min: MIN_SIDE,
            });
        }
        for &s in &self.scales {
            if h % s != 0 || w % s != 0 {
                return Err(Error::Divisibility {
                    height: h,
                    width: w,
                    scale: s,
                });
            }
        }
        Ok(())
    }
}

/// Trainable parameter count: `in_dim·FC + FC + FC·C` (second layer has no bias).
pub fn parameter_count(cfg: &DyncaConfig) -> usize {
    cfg.in_dim() * cfg.hidden + cfg.hidden + cfg.hidden * cfg.channels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(parameter_count(&DyncaConfig::small()), 6048);
        assert_eq!(parameter_count(&DyncaConfig::large()), 10624);
        let mut plain = DyncaConfig::small();
        plain.use_cpe = false;
        assert_eq!(parameter_count(&plain), 5856);
    }

    #[test]
    fn validation() {
        assert!(DyncaConfig::small().validate().is_ok());
        let mut c = DyncaConfig::small();
        c.channels = 3;
        assert!(c.validate().is_err());
        let mut c = DyncaConfig::small();
        c.scales = vec![2, 4];
        assert!(c.validate().is_err());
        let mut c = DyncaConfig::small();
        c.update_rate = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn extent_rules() {
        let cfg = DyncaConfig::small().with_seed_size(256);
        assert_eq!(cfg.scales, vec![1, 2, 4]);
        assert!(cfg.check_extent(4, 4).is_err());
        assert!(matches!(
            cfg.check_extent(130, 128),
            Err(Error::Divisibility { scale: 4, .. })
        ));
        assert!(cfg.check_extent(256, 128).is_ok());
    }
}
