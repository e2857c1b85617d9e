//! Builds a size-matched split, audits it, then shows the audit catching a
//! plan that leaks a target speaker into Training Set A.
//!
//! ```text
//! cargo run --example split_audit -- [seed]
//! ```

use leakbench::splitter::{audit_split, build_split, render_split, SplitConfig};
use leakbench::synth::{generate, SynthConfig};

fn main() -> leakbench::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .map_or(0, |s| s.parse().expect("seed must be an integer"));
    let data = generate(&SynthConfig {
        n_speakers: 30,
        segments_per_speaker: 9,
        ..Default::default()
    })?
    .data;

    let plan = build_split(&data.manifest, &SplitConfig::new(seed, 6))?;
    println!(
        "test {}  subtarget {}  subcontrol_a {}  subcontrol_b {}",
        plan.test.len(),
        plan.subtarget.len(),
        plan.subcontrol_a.len(),
        plan.subcontrol_b.len()
    );
    println!(
        "Training Set A {}  Training Set B {}",
        plan.training_set_a().len(),
        plan.training_set_b().len()
    );
    print!("{}", audit_split(&data.manifest, &plan)?);

    let mut leaky = plan.clone();
    let moved = leaky.test.pop_first().expect("test set is non-empty");
    println!("\nmoving {moved} from test to subcontrol_a");
    leaky.subcontrol_a.insert(moved);
    print!("{}", audit_split(&data.manifest, &leaky)?);

    println!("\nplan file starts:");
    for line in render_split(&plan).lines().take(8) {
        println!("  {line}");
    }
    Ok(())
}
