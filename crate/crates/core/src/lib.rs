//! Benchmarking speaker-identity leakage in depression detection.
//!
//! The crate builds size-matched training sets that differ only in whether
//! their speakers overlap the test set, trains lightweight heads (with an
//! optional adversarial speaker branch) on pooled features, and reports
//! depression and speaker-identification metrics side by side.
//!
//! Typical flow:
//!
//! ```no_run
//! use leakbench::{config::ExperimentConfig, experiment::{run_experiment, ExperimentPlan}};
//!
//! let config = ExperimentConfig::load("configs/leakage.ini", None)?;
//! let report = run_experiment(&ExperimentPlan { config, out_dir: "out".into() })?;
//! print!("{}", report.table());
//! # Ok::<(), leakbench::Error>(())
//! ```

pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod splitter;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
