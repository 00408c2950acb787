pub mod bundle;
pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod metrics;
pub mod plots;

pub use commands::{cmd_process, cmd_simulate, cmd_sweep};
pub use config::{Method, RunConfig};
pub use error::CliError;
