//! Trains the original and DANN arms on both training sets of a synthetic
//! corpus and prints the comparison table.
//!
//! ```text
//! cargo run --release --example leakage_gap -- [config] [out_dir] [seed]
//! ```

use leakbench::config::ExperimentConfig;
use leakbench::experiment::{run_experiment, ExperimentPlan};

fn main() -> leakbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let config_path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/leakage.ini").into());
    let out_dir = args
        .next()
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("leakbench-leakage-gap"));
    let seed = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"));

    let config = ExperimentConfig::load(&config_path, seed)?;
    let report = run_experiment(&ExperimentPlan { config, out_dir })?;
    print!("{}", report.table());
    if let Some(t) = report.wall_clock {
        println!("wall clock: {:.2}s", t.as_secs_f64());
    }
    Ok(())
}
