//! Command line front end of the engine: training, offline and streamed
//! synthesis, the throughput benchmark and field export.

pub mod bench;
pub mod cli;
pub mod export;
pub mod protocol;
pub mod server;
pub mod session;
pub mod synth;
pub mod train;

pub use bench::BenchReport;
pub use cli::{Cli, CliError};
pub use protocol::{Command, FrameMessage, Reply};
