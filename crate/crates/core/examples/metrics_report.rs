//! Scores a small set of prediction records and prints the metrics that
//! go into a report row.
//!
//! ```text
//! cargo run --example metrics_report
//! ```

use leakbench::corpus::Label;
use leakbench::metrics::{render_predictions, MetricsReport, PredictionRecord};

fn record(
    i: usize,
    truth: Label,
    pred: Label,
    speaker: &str,
    guess: Option<&str>,
) -> PredictionRecord {
    PredictionRecord {
        segment_id: format!("{speaker}_{i:04}"),
        true_label: truth,
        pred_label: pred,
        true_speaker: speaker.into(),
        pred_speaker: guess.map(Into::into),
    }
}

fn main() -> leakbench::Result<()> {
    use Label::{Depressed as D, NotDepressed as N};
    let records = vec![
        record(0, D, D, "321", Some("321")),
        record(1, D, N, "321", Some("330")),
        record(0, N, N, "330", Some("330")),
        record(1, N, N, "330", None),
        record(0, N, D, "345", Some("321")),
        record(1, N, N, "345", Some("345")),
    ];
    print!("{}", render_predictions(&records));

    let m = MetricsReport::from_records(&records)?;
    println!();
    for (c, scores) in m.per_class.iter().enumerate() {
        let label = Label::from_index(c).expect("two classes");
        println!(
            "{label:<13} precision {:.3} recall {:.3} f1 {:.3} support {}",
            scores.precision, scores.recall, scores.f1, scores.support
        );
    }
    println!("depression macro F1  {:.4}", m.dep_macro_f1);
    println!("depression accuracy  {:.4}", m.dep_accuracy);
    println!(
        "speaker ID accuracy  {:.4} (chance {:.4} for {} speakers)",
        m.spk_id_accuracy, m.chance_level, m.n_speakers
    );
    Ok(())
}
