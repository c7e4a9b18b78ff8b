//! Driver layer: case configuration, run orchestration and output formats.

pub mod cases;
pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod vtk;

pub use config::RunConfig;
pub use error::CliError;
pub use run::{run_case, RunSummary};
pub use vtk::write_vtk;
