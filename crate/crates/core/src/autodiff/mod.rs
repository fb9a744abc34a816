//! Reverse-mode differentiation over the operations used by rollouts and losses.

mod nca;
mod optim;
mod tape;

pub use nca::RuleVars;
pub use optim::{adam_step, normalize_gradients, AdamState};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub(crate) use tape::sign;
