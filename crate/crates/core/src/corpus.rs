//! Corpus model: speakers, segments, subject-level labels and the manifest
//! file that ties segments to feature views.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// PHQ-8 score at or above which a subject counts as depressed.
pub const PHQ8_THRESHOLD: u8 = 10;
pub const PHQ8_MAX: u8 = 24;

const MANIFEST_HEADER: &str = "segment_id,speaker_id,label,phq8_score,feature_refs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NotDepressed,
    Depressed,
}

impl Label {
    pub const COUNT: usize = 2;

    /// Class index used by the classifiers: 0 = not depressed, 1 = depressed.
    pub fn index(self) -> usize {
        match self {
            Label::NotDepressed => 0,
            Label::Depressed => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::NotDepressed),
            1 => Some(Label::Depressed),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NotDepressed => "not_depressed",
            Label::Depressed => "depressed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "not_depressed" => Some(Label::NotDepressed),
            "depressed" => Some(Label::Depressed),
            _ => None,
        }
    }

    pub fn from_phq8(score: u8) -> Self {
        if score >= PHQ8_THRESHOLD {
            Label::Depressed
        } else {
            Label::NotDepressed
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepressionLabel {
    pub value: Label,
    pub phq8_score: Option<u8>,
}

impl DepressionLabel {
    pub fn new(value: Label) -> Self {
        Self {
            value,
            phq8_score: None,
        }
    }

    pub fn from_phq8(score: u8) -> Self {
        Self {
            value: Label::from_phq8(score),
            phq8_score: Some(score),
        }
    }

    /// A score, when present, must agree with the value under the inclusive
    /// threshold.
    pub fn is_consistent(&self) -> bool {
        match self.phq8_score {
            Some(s) => s <= PHQ8_MAX && Label::from_phq8(s) == self.value,
            None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub speaker_id: String,
    pub utterance_index: u32,
    pub start_time: Option<f64>,
    pub end_time: Option<f64>,
}

impl UtteranceRecord {
    pub fn new(speaker_id: impl Into<String>, utterance_index: u32) -> Self {
        Self {
            speaker_id: speaker_id.into(),
            utterance_index,
            start_time: None,
            end_time: None,
        }
    }
}

/// All participant utterances of one interview, in order, plus the
/// subject-level label.
#[derive(Debug, Clone)]
pub struct SpeakerUtterances {
    pub speaker_id: String,
    pub label: DepressionLabel,
    pub utterances: Vec<UtteranceRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub segment_id: String,
    pub speaker_id: String,
    /// Ordinal within the speaker, in manifest order.
    pub segment_index: u32,
    pub label: DepressionLabel,
    pub feature_refs: Vec<String>,
}

/// A segment produced by [`group_utterances`] with the utterance indices it
/// covers (inclusive).
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceGroup {
    pub segment: Segment,
    pub first_utterance: u32,
    pub last_utterance: u32,
}

/// Concatenates every `group_size` consecutive utterances of a speaker into
/// one segment. A trailing run shorter than `group_size` is dropped, so each
/// speaker yields `floor(n / group_size)` segments.
pub fn group_utterances(
    speakers: &[SpeakerUtterances],
    group_size: usize,
    feature_refs: &[String],
) -> Result<Vec<UtteranceGroup>> {
    if group_size == 0 {
        return Err(Error::Validation("group_size must be at least 1".into()));
    }
    let mut out = Vec::new();
    for spk in speakers {
        for pair in spk.utterances.windows(2) {
            if pair[1].utterance_index <= pair[0].utterance_index {
                return Err(Error::Validation(format!(
                    "speaker {}: utterance_index not strictly increasing ({} then {})",
                    spk.speaker_id, pair[0].utterance_index, pair[1].utterance_index
                )));
            }
        }
        for u in &spk.utterances {
            if u.speaker_id != spk.speaker_id {
                return Err(Error::Validation(format!(
                    "utterance {} of speaker {} is attributed to {}",
                    u.utterance_index, spk.speaker_id, u.speaker_id
                )));
            }
            if let (Some(s), Some(e)) = (u.start_time, u.end_time) {
                if e < s {
                    return Err(Error::Validation(format!(
                        "speaker {} utterance {}: end_time {e} before start_time {s}",
                        spk.speaker_id, u.utterance_index
                    )));
                }
            }
        }
        for (k, chunk) in spk.utterances.chunks_exact(group_size).enumerate() {
            out.push(UtteranceGroup {
                segment: Segment {
                    segment_id: format!("{}_{:04}", spk.speaker_id, k),
                    speaker_id: spk.speaker_id.clone(),
                    segment_index: k as u32,
                    label: spk.label,
                    feature_refs: feature_refs.to_vec(),
                },
                first_utterance: chunk[0].utterance_index,
                last_utterance: chunk[chunk.len() - 1].utterance_index,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ManifestCounts {
    pub segments: usize,
    pub speakers: usize,
    pub depressed_speakers: usize,
    pub depressed_segments: usize,
}

/// The segment list plus derived speaker index. Segment order is the order
/// they were supplied in.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    segments: Vec<Segment>,
    by_id: HashMap<String, usize>,
    by_speaker: BTreeMap<String, Vec<usize>>,
}

impl Manifest {
    /// Builds a manifest and rejects it if any invariant fails.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let m = Self::unchecked(segments);
        let report = validate_manifest(&m, None);
        if report.is_empty() {
            Ok(m)
        } else {
            Err(Error::Validation(report.to_string()))
        }
    }

    /// Builds the derived indices without validating. Duplicate ids resolve to
    /// the first occurrence; use [`validate_manifest`] to see what is wrong.
    pub fn unchecked(segments: Vec<Segment>) -> Self {
        let mut by_id = HashMap::with_capacity(segments.len());
        let mut by_speaker: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in segments.iter().enumerate() {
            by_id.entry(s.segment_id.clone()).or_insert(i);
            by_speaker.entry(s.speaker_id.clone()).or_default().push(i);
        }
        Self {
            segments,
            by_id,
            by_speaker,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn get(&self, segment_id: &str) -> Option<&Segment> {
        self.by_id.get(segment_id).map(|&i| &self.segments[i])
    }

    pub fn contains(&self, segment_id: &str) -> bool {
        self.by_id.contains_key(segment_id)
    }

    /// Speaker ids in sorted order.
    pub fn speakers(&self) -> impl Iterator<Item = &str> {
        self.by_speaker.keys().map(String::as_str)
    }

    pub fn speaker_count(&self) -> usize {
        self.by_speaker.len()
    }

    /// Segments of one speaker in manifest order.
    pub fn speaker_segments<'a>(&'a self, speaker_id: &str) -> impl Iterator<Item = &'a Segment> {
        self.by_speaker
            .get(speaker_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.segments[i])
    }

    pub fn speaker_label(&self, speaker_id: &str) -> Option<Label> {
        self.speaker_segments(speaker_id)
            .next()
            .map(|s| s.label.value)
    }

    /// Union of all feature refs, in order of first appearance.
    pub fn declared_views(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for s in &self.segments {
            for r in &s.feature_refs {
                if seen.insert(r.as_str()) {
                    out.push(r.clone());
                }
            }
        }
        out
    }

    pub fn counts(&self) -> ManifestCounts {
        let depressed_speakers = self
            .by_speaker
            .keys()
            .filter(|s| self.speaker_label(s) == Some(Label::Depressed))
            .count();
        ManifestCounts {
            segments: self.segments.len(),
            speakers: self.by_speaker.len(),
            depressed_speakers,
            depressed_segments: self
                .segments
                .iter()
                .filter(|s| s.label.value == Label::Depressed)
                .count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManifestViolation {
    EmptyId {
        row: usize,
    },
    ReservedCharacter {
        row: usize,
        value: String,
    },
    DuplicateSegment {
        segment_id: String,
    },
    MixedLabels {
        speaker_id: String,
    },
    Phq8Mismatch {
        segment_id: String,
        score: u8,
        label: Label,
    },
    Phq8OutOfRange {
        segment_id: String,
        score: u8,
    },
    MissingFeatureView {
        segment_id: String,
        view: String,
    },
    IncompleteViews {
        segment_id: String,
        missing: Vec<String>,
    },
}

impl fmt::Display for ManifestViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ManifestViolation::*;
        match self {
            EmptyId { row } => write!(f, "row {row}: empty segment or speaker id"),
            ReservedCharacter { row, value } => {
                write!(f, "row {row}: `{value}` contains a reserved character")
            }
            DuplicateSegment { segment_id } => write!(f, "duplicate segment_id {segment_id}"),
            MixedLabels { speaker_id } => write!(f, "speaker {speaker_id} has mixed labels"),
            Phq8Mismatch {
                segment_id,
                score,
                label,
            } => write!(
                f,
                "segment {segment_id}: phq8_score {score} inconsistent with label {label} (depressed iff score >= {PHQ8_THRESHOLD})"
            ),
            Phq8OutOfRange { segment_id, score } => {
                write!(f, "segment {segment_id}: phq8_score {score} outside 0..={PHQ8_MAX}")
            }
            MissingFeatureView { segment_id, view } => {
                write!(f, "segment {segment_id} references missing feature view {view}")
            }
            IncompleteViews {
                segment_id,
                missing,
            } => write!(
                f,
                "segment {segment_id} lacks declared views {}",
                missing.join(";")
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<ManifestViolation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn has_reserved(s: &str) -> bool {
    s.contains([',', ';', '\n', '\r']) || s.trim() != s
}

/// Lists every invariant violation. When `available_views` is given, feature
/// refs outside it are reported too.
pub fn validate_manifest(m: &Manifest, available_views: Option<&[String]>) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    let mut reported_dup = HashSet::new();
    for (row, s) in m.segments.iter().enumerate() {
        if s.segment_id.is_empty() || s.speaker_id.is_empty() {
            violations.push(ManifestViolation::EmptyId { row });
        }
        for v in [&s.segment_id, &s.speaker_id]
            .into_iter()
            .chain(s.feature_refs.iter())
        {
            if has_reserved(v) {
                violations.push(ManifestViolation::ReservedCharacter {
                    row,
                    value: v.clone(),
                });
            }
        }
        if !seen.insert(s.segment_id.as_str()) && reported_dup.insert(s.segment_id.as_str()) {
            violations.push(ManifestViolation::DuplicateSegment {
                segment_id: s.segment_id.clone(),
            });
        }
        if let Some(score) = s.label.phq8_score {
            if score > PHQ8_MAX {
                violations.push(ManifestViolation::Phq8OutOfRange {
                    segment_id: s.segment_id.clone(),
                    score,
                });
            } else if Label::from_phq8(score) != s.label.value {
                violations.push(ManifestViolation::Phq8Mismatch {
                    segment_id: s.segment_id.clone(),
                    score,
                    label: s.label.value,
                });
            }
        }
        if let Some(avail) = available_views {
            for r in &s.feature_refs {
                if !avail.contains(r) {
                    violations.push(ManifestViolation::MissingFeatureView {
                        segment_id: s.segment_id.clone(),
                        view: r.clone(),
                    });
                }
            }
        }
    }
    for (speaker, idx) in &m.by_speaker {
        let first = m.segments[idx[0]].label.value;
        if idx.iter().any(|&i| m.segments[i].label.value != first) {
            violations.push(ManifestViolation::MixedLabels {
                speaker_id: speaker.clone(),
            });
        }
    }
    let declared = m.declared_views();
    for s in &m.segments {
        let missing: Vec<String> = declared
            .iter()
            .filter(|v| !s.feature_refs.contains(v))
            .cloned()
            .collect();
        if !missing.is_empty() {
            violations.push(ManifestViolation::IncompleteViews {
                segment_id: s.segment_id.clone(),
                missing,
            });
        }
    }
    ValidationReport { violations }
}

/// Parses manifest text. Structural problems fail with the line number;
/// invariant violations fail with the full report.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == MANIFEST_HEADER => {}
        Some((_, h)) => {
            return Err(Error::parse(
                path,
                1,
                format!("expected header `{MANIFEST_HEADER}`, found `{h}`"),
            ))
        }
        None => return Err(Error::parse(path, 1, "empty manifest")),
    }
    let mut segments = Vec::new();
    let mut per_speaker: HashMap<String, u32> = HashMap::new();
    for (i, raw) in lines {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let value = Label::parse(fields[2])
            .ok_or_else(|| Error::parse(path, lineno, format!("unknown label `{}`", fields[2])))?;
        let phq8_score = if fields[3].is_empty() {
            None
        } else {
            Some(fields[3].parse::<u8>().map_err(|_| {
                Error::parse(path, lineno, format!("bad phq8_score `{}`", fields[3]))
            })?)
        };
        let feature_refs = if fields[4].is_empty() {
            Vec::new()
        } else {
            fields[4].split(';').map(str::to_owned).collect()
        };
        let counter = per_speaker.entry(fields[1].to_owned()).or_insert(0);
        segments.push(Segment {
            segment_id: fields[0].to_owned(),
            speaker_id: fields[1].to_owned(),
            segment_index: *counter,
            label: DepressionLabel { value, phq8_score },
            feature_refs,
        });
        *counter += 1;
    }
    Manifest::new(segments).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        e => e,
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

/// Loads a manifest and also rejects feature refs outside `available_views`.
pub fn load_manifest_checked(
    path: impl AsRef<Path>,
    available_views: &[String],
) -> Result<Manifest> {
    let path = path.as_ref();
    let m = load_manifest(path)?;
    let report = validate_manifest(&m, Some(available_views));
    if report.is_empty() {
        Ok(m)
    } else {
        Err(Error::Validation(format!("{}: {report}", path.display())))
    }
}

pub fn render_manifest(m: &Manifest) -> String {
    let mut out = String::with_capacity(64 * (m.len() + 1));
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for s in &m.segments {
        let phq = s
            .label
            .phq8_score
            .map(|p| p.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.segment_id,
            s.speaker_id,
            s.label.value,
            phq,
            s.feature_refs.join(";")
        ));
    }
    out
}

pub fn write_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_manifest(m)).map_err(|e| Error::io(path, e))
}
