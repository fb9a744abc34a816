//! The cellular automaton itself: configuration, weights, perception and stepping.

mod config;
mod engine;
pub(crate) mod mlp;
mod mlp_f32;
mod perception;
mod rule;
mod state;

pub use config::{parameter_count, DyncaConfig, ModelSize, MIN_SIDE};
pub use engine::{rollout, step, Engine, Rollout};
pub use perception::{
    perceive, perceive_multiscale, perception_input, positional_encoding, steer_perception,
    steered_positional_encoding, PerceptionKernels, Steering,
};
pub(crate) use perception::perception_input_adjoint;
pub use rule::UpdateRule;
pub use state::{make_seed, NcaState, RngKey};
