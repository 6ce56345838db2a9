//! Command-line driver: JSON run configurations for crawling, attribution, cube
//! join and materialization.

pub mod config;
pub mod error;
pub mod run;
pub mod source;

pub use config::{Command, Loaded, RunConfig};
pub use error::{CliError, CliResult};
pub use run::{run, Outcome, RunArgs};
