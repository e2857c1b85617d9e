use leakbench::metrics::{accuracy, macro_f1, speaker_id_accuracy, ConfusionMatrix, OOV};
use proptest::prelude::*;

/// Brute force from the expanded list of (truth, prediction) pairs.
fn reference(pairs: &[(usize, usize)], classes: usize) -> (f64, f64) {
    let mut f1_sum = 0.0;
    for c in 0..classes {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
        let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
        let f1 = if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        f1_sum += f1;
    }
    let correct = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    (f1_sum / classes as f64, correct / pairs.len() as f64)
}

fn matrices() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (2usize..=5).prop_flat_map(|c| {
        proptest::collection::vec(proptest::collection::vec(0u64..30, c), c)
            .prop_filter("non-empty", |m| m.iter().flatten().sum::<u64>() > 0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_brute_force(rows in matrices()) {
        let classes = rows.len();
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        let mut pairs = Vec::new();
        for (t, row) in rows.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                pairs.extend(std::iter::repeat_n((t, p), n as usize));
            }
        }
        let (f1, acc) = reference(&pairs, classes);
        prop_assert!((macro_f1(&cm).unwrap() - f1).abs() <= 1e-12);
        prop_assert!((accuracy(&cm).unwrap() - acc).abs() <= 1e-12);
        let rebuilt = ConfusionMatrix::from_pairs(classes, pairs.iter().copied()).unwrap();
        prop_assert_eq!(rebuilt, cm);
    }
}

#[test]
fn chance_for_38_speakers() {
    let truths: Vec<String> = (0..38).flat_map(|s| vec![format!("s{s}"); 3]).collect();
    let preds: Vec<Option<&str>> = vec![Some(OOV); truths.len()];
    let score = speaker_id_accuracy(&preds, &truths).unwrap();
    assert_eq!(score.n_speakers, 38);
    assert_eq!(score.chance_level, 1.0 / 38.0);
    assert_eq!(format!("{:.2}%", 100.0 * score.chance_level), "2.63%");
    assert_eq!(score.accuracy, 0.0);
}
