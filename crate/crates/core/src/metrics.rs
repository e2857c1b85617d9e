//! Depression macro F1, depression accuracy and speaker identification
//! accuracy, plus the prediction record file they are computed from.
//!
//! All rates are segment-level. A class with no true and no predicted
//! members has F1 = 0.

use std::collections::BTreeSet;
use std::path::Path;

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn from_pairs(
        classes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut cm = Self::new(classes);
        for (t, p) in pairs {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::Shape(format!(
                "class ({truth}, {predicted}) outside 0..{}",
                self.classes
            )));
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|j| self.get(c, j)).sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, c)).sum()
    }

    /// Precision, recall and F1 for one class, with 0 for any 0/0.
    pub fn class_scores(&self, c: usize) -> ClassScores {
        let tp = self.get(c, c) as f64;
        let predicted = self.col_sum(c) as f64;
        let actual = self.row_sum(c) as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassScores {
            precision,
            recall,
            f1,
            support: self.row_sum(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn non_empty(cm: &ConfusionMatrix) -> Result<()> {
    if cm.total() == 0 {
        Err(Error::Validation("empty confusion matrix".into()))
    } else {
        Ok(())
    }
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    non_empty(cm)?;
    let sum: f64 = (0..cm.classes()).map(|c| cm.class_scores(c).f1).sum();
    Ok(sum / cm.classes() as f64)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    non_empty(cm)?;
    Ok(cm.trace() as f64 / cm.total() as f64)
}

/// Token for a speaker prediction outside the probe's vocabulary.
pub const OOV: &str = "OOV";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerIdScore {
    pub accuracy: f64,
    pub chance_level: f64,
    /// Distinct true speakers among the scored segments.
    pub n_speakers: usize,
}

/// Fraction of exact speaker matches. `None` predictions (and the `OOV`
/// token) never match.
pub fn speaker_id_accuracy<P, T>(predictions: &[Option<P>], truths: &[T]) -> Result<SpeakerIdScore>
where
    P: AsRef<str>,
    T: AsRef<str>,
{
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} speaker predictions for {} segments",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Validation("no speaker predictions".into()));
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| {
            p.as_ref()
                .is_some_and(|p| p.as_ref() != OOV && p.as_ref() == t.as_ref())
        })
        .count();
    let n_speakers = truths
        .iter()
        .map(AsRef::as_ref)
        .collect::<BTreeSet<&str>>()
        .len();
    Ok(SpeakerIdScore {
        accuracy: hits as f64 / truths.len() as f64,
        chance_level: 1.0 / n_speakers as f64,
        n_speakers,
    })
}

/// One scored test segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    pub segment_id: String,
    pub true_label: Label,
    pub pred_label: Label,
    pub true_speaker: String,
    /// `None` is written as `OOV`.
    pub pred_speaker: Option<String>,
}

const PREDICTIONS_HEADER: &str = "segment_id,true_label,pred_label,true_speaker,pred_speaker";

pub fn render_predictions(records: &[PredictionRecord]) -> String {
    let mut s = String::from(PREDICTIONS_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.segment_id,
            r.true_label,
            r.pred_label,
            r.true_speaker,
            r.pred_speaker.as_deref().unwrap_or(OOV)
        ));
    }
    s
}

pub fn parse_predictions(text: &str, path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == PREDICTIONS_HEADER => {}
        _ => {
            return Err(Error::parse(
                path,
                1,
                format!("expected header `{PREDICTIONS_HEADER}`"),
            ))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected 5 fields, found {}", f.len()),
            ));
        }
        let label = |s: &str| {
            Label::parse(s).ok_or_else(|| Error::parse(path, i + 1, format!("unknown label `{s}`")))
        };
        out.push(PredictionRecord {
            segment_id: f[0].to_owned(),
            true_label: label(f[1])?,
            pred_label: label(f[2])?,
            true_speaker: f[3].to_owned(),
            pred_speaker: (f[4] != OOV).then(|| f[4].to_owned()),
        });
    }
    Ok(out)
}

pub fn write_predictions(records: &[PredictionRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_predictions(records)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dep_macro_f1: f64,
    pub dep_accuracy: f64,
    pub spk_id_accuracy: f64,
    pub chance_level: f64,
    pub n_speakers: usize,
    pub n_segments: usize,
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_records(records: &[PredictionRecord]) -> Result<Self> {
        let confusion = ConfusionMatrix::from_pairs(
            Label::COUNT,
            records
                .iter()
                .map(|r| (r.true_label.index(), r.pred_label.index())),
        )?;
        let preds: Vec<Option<&str>> = records.iter().map(|r| r.pred_speaker.as_deref()).collect();
        let truths: Vec<&str> = records.iter().map(|r| r.true_speaker.as_str()).collect();
        let spk = speaker_id_accuracy(&preds, &truths)?;
        Ok(Self {
            dep_macro_f1: macro_f1(&confusion)?,
            dep_accuracy: accuracy(&confusion)?,
            spk_id_accuracy: spk.accuracy,
            chance_level: spk.chance_level,
            n_speakers: spk.n_speakers,
            n_segments: records.len(),
            per_class: (0..Label::COUNT)
                .map(|c| confusion.class_scores(c))
                .collect(),
            confusion,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(rows: &[[u64; 2]]) -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn perfect_matrix() {
        let m = cm(&[[7, 0], [0, 3]]);
        assert_eq!(macro_f1(&m).unwrap(), 1.0);
        assert_eq!(accuracy(&m).unwrap(), 1.0);
    }

    #[test]
    fn symmetric_matrix_gives_half() {
        let m = cm(&[[5, 5], [5, 5]]);
        assert!((macro_f1(&m).unwrap() - 0.5).abs() < 1e-15);
        let s = m.class_scores(0);
        assert_eq!((s.precision, s.recall), (0.5, 0.5));
    }

    #[test]
    fn all_wrong() {
        assert_eq!(accuracy(&cm(&[[0, 1], [1, 0]])).unwrap(), 0.0);
    }

    #[test]
    fn absent_class_scores_zero() {
        // class 1 never occurs and is never predicted
        let m = cm(&[[4, 0], [0, 0]]);
        assert_eq!(m.class_scores(1).f1, 0.0);
        assert!((macro_f1(&m).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(macro_f1(&ConfusionMatrix::new(2)).is_err());
        assert!(accuracy(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn chance_for_38_speakers() {
        let truths: Vec<String> = (0..38).map(|i| format!("s{i}")).collect();
        let preds: Vec<Option<&str>> = vec![None; 38];
        let s = speaker_id_accuracy(&preds, &truths).unwrap();
        assert_eq!(s.n_speakers, 38);
        assert!((s.chance_level - 1.0 / 38.0).abs() < 1e-15);
        assert!((s.chance_level * 100.0 - 2.63).abs() < 0.005);
        assert_eq!(s.accuracy, 0.0);
    }

    #[test]
    fn oov_and_exact_matches() {
        let truths = ["a", "b", "c"];
        let all = speaker_id_accuracy(&[Some("a"), Some("b"), Some("c")], &truths).unwrap();
        assert_eq!(all.accuracy, 1.0);
        let oov = speaker_id_accuracy(&[Some(OOV), Some("x"), None], &truths).unwrap();
        assert_eq!(oov.accuracy, 0.0);
        assert!(speaker_id_accuracy(&[Some("a")], &truths).is_err());
    }

    #[test]
    fn prediction_file_round_trip() {
        let recs = vec![
            PredictionRecord {
                segment_id: "s1_000".into(),
                true_label: Label::Depressed,
                pred_label: Label::NotDepressed,
                true_speaker: "s1".into(),
                pred_speaker: None,
            },
            PredictionRecord {
                segment_id: "s2_000".into(),
                true_label: Label::NotDepressed,
                pred_label: Label::NotDepressed,
                true_speaker: "s2".into(),
                pred_speaker: Some("s2".into()),
            },
        ];
        let text = render_predictions(&recs);
        assert!(text.contains(",OOV\n"));
        assert_eq!(parse_predictions(&text, Path::new("p")).unwrap(), recs);
        let r = MetricsReport::from_records(&recs).unwrap();
        assert_eq!(r.dep_accuracy, 0.5);
        assert_eq!(r.spk_id_accuracy, 0.5);
        assert_eq!(r.n_speakers, 2);
    }
}
