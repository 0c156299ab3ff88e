//! Experiment runner for dynamic OAR scheduling.
//!
//! `run` drives multi-episode agent runs and fixed-OAR baseline sweeps,
//! `plot` renders a schedule CSV as SVG, `summarize` compares the two.

pub mod config;
pub mod error;
pub mod plot;
pub mod run;
pub mod summary;

pub use config::{EnvironmentKind, Mode, RunConfig};
pub use error::HarnessError;
pub use run::{run, RoarReport, SweepReport};
pub use summary::{summarize, Summary};
