//! Trains the original and DANN variants of one head on the overlapped
//! training set and compares how much speaker identity a post-hoc probe
//! can recover from each representation.
//!
//! ```text
//! cargo run --release --example dann_training -- [config]
//! ```

use leakbench::config::ExperimentConfig;
use leakbench::experiment::{load_data, make_split};
use leakbench::splitter::TrainingSet;
use leakbench::trainer::{train_speaker_probe, train_with, Variant};

fn main() -> leakbench::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/leakage.ini").into());
    let config = ExperimentConfig::load(&path, None)?;
    let data = load_data(&config)?;
    let (plan, _) = make_split(&config, &data)?;
    let train_ids = plan.training_set(TrainingSet::B);
    let test: Vec<&String> = plan.test.iter().collect();

    for spec in &config.arms {
        let mut last_epoch = usize::MAX;
        let steps_per_epoch = train_ids.len().div_ceil(config.sgd.batch_size);
        let model = train_with(
            spec,
            &data,
            &train_ids,
            &config.sgd,
            config.init_seed,
            |step, net| {
                let epoch = (step - 1) / steps_per_epoch;
                if epoch % 100 == 0 && epoch != last_epoch {
                    last_epoch = epoch;
                    println!(
                        "  {} epoch {epoch:>3} lambda {:.3}",
                        spec.variant,
                        net.grl.lambda()
                    );
                }
            },
        )?;

        let probe = train_speaker_probe(
            &model,
            &data,
            &train_ids,
            &config.probe_sgd,
            config.probe_init_seed,
        )?;
        let guesses = probe.predict(&model, &data, &test)?;
        let hits = test
            .iter()
            .zip(&guesses)
            .filter(|(id, g)| data.manifest.get(id).is_some_and(|s| &s.speaker_id == *g))
            .count();
        println!("{}", spec.arm_name());
        println!(
            "  final losses dep {:.4} spk {}",
            model.final_losses.depression,
            model
                .final_losses
                .speaker
                .map_or("-".into(), |l| format!("{l:.4}"))
        );
        if spec.variant == Variant::Dann {
            println!(
                "  adversary training accuracy {:.2}%",
                100.0 * model.speaker_head_accuracy.unwrap_or(0.0)
            );
        }
        println!(
            "  post-hoc speaker probe on test {:.2}%",
            100.0 * hits as f64 / test.len() as f64
        );
    }
    Ok(())
}
