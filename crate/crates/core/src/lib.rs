//! Dynamic neural cellular automata: a real-time texture synthesis engine,
//! its losses and trainer, and live editing controls.

pub mod autodiff;
pub mod checkpoint;
mod codec;
pub mod controls;
pub mod error;
pub mod fields;
pub mod grid;
pub mod imaging;
pub mod losses;
pub mod model;
pub mod scalar;
mod simd;
pub mod trainer;

pub use error::{Error, FormatError, Result};
pub use scalar::Scalar;

/// Single-precision grid, the production scalar type.
pub type Grid = grid::Grid<f32>;
pub type State = model::NcaState<f32>;
pub type Rule = model::UpdateRule<f32>;
pub type Field = losses::FlowField<f32>;
pub type Engine = model::Engine<f32>;
pub type Player = controls::Player<f32>;
pub type Controls = controls::ControlState<f32>;
