use super::tape::{Tape, Var};
use crate::error::Result;
use crate::model::{DyncaConfig, PerceptionKernels, RngKey, Steering, UpdateRule};
use crate::scalar::Scalar;

/// Tape handles of the three weight tensors of an [`UpdateRule`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RuleVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
}

impl RuleVars {
    /// Records the rule's weights as leaves.
    pub fn leaves<T: Scalar>(tape: &mut Tape<T>, rule: &UpdateRule<T>) -> Self {
        Self {
            w1: tape.leaf(rule.w1.clone()),
            b1: tape.leaf(rule.b1.clone()),
            w2: tape.leaf(rule.w2.clone()),
        }
    }

    pub fn as_array(self) -> [Var; 3] {
        [self.w1, self.b1, self.w2]
    }
}

impl<T: Scalar> Tape<T> {
    /// One automaton step recorded on the tape; the mask is the engine's mask
    /// for `step` and is held constant.
    #[allow(clippy::too_many_arguments)]
    pub fn nca_step(
        &mut self,
        state: Var,
        rule: RuleVars,
        cfg: &DyncaConfig,
        kernels: &PerceptionKernels<T>,
        steering: &Steering<T>,
        rng: &RngKey,
        step: u64,
    ) -> Result<Var> {
        let z = self.perceive(state, cfg, kernels, steering)?;
        let delta = self.masked_mlp(z, rule.w1, rule.b1, rule.w2, rng, step, cfg.update_rate)?;
        self.add(state, delta)
    }

    /// The first three channels of a state.
    pub fn rgb(&mut self, state: Var) -> Result<Var> {
        self.slice_channels(state, 0, 3)
    }

    /// Image in `[0, 1]` shown for a state, `(s_rgb + 1) / 2`.
    pub fn unit_rgb(&mut self, state: Var) -> Result<Var> {
        let rgb = self.rgb(state)?;
        let half = self.scale(rgb, T::lit(0.5));
        Ok(self.add_scalar(half, T::lit(0.5)))
    }
}
