//! Command-line front end for AutoWU: single runs and seed batteries,
//! baseline grid sweeps, detector evaluation on synthetic curves, and SVG
//! plots of the resulting logs.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;

pub use commands::{cmd_detect_eval, cmd_plot, cmd_run, cmd_sweep};
pub use config::FileConfig;
pub use error::CliError;
