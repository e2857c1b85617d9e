//! Size-matched split with controlled speaker overlap, its auditor, and the
//! split plan file.
//!
//! Speakers are divided into a control group and a target group. Each target
//! speaker's segments are halved into the shared test set and the subtarget
//! (odd counts give the extra segment to test). Control segments are divided
//! into subcontrol A and subcontrol B with `|subcontrol B| = |subtarget|`.
//! Training Set A is the whole control group; Training Set B swaps
//! subcontrol B for the subtarget, so both sets have the same size and only
//! B shares speakers with the test set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::Manifest;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub type IdSet = BTreeSet<String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HalvingRule {
    /// Seeded uniform shuffle within each speaker.
    #[default]
    RandomWithinSpeaker,
    /// Earlier segments go to the subtarget, later ones to the test set.
    FirstHalfTemporal,
}

impl HalvingRule {
    pub fn as_str(self) -> &'static str {
        match self {
            HalvingRule::RandomWithinSpeaker => "random_within_speaker",
            HalvingRule::FirstHalfTemporal => "first_half_temporal",
        }
    }
}

impl FromStr for HalvingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_within_speaker" => Ok(HalvingRule::RandomWithinSpeaker),
            "first_half_temporal" => Ok(HalvingRule::FirstHalfTemporal),
            _ => Err(Error::Config(format!("unknown halving_rule `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitConfig {
    pub seed: u64,
    pub n_target_speakers: usize,
    pub halving_rule: HalvingRule,
}

impl SplitConfig {
    pub fn new(seed: u64, n_target_speakers: usize) -> Self {
        Self {
            seed,
            n_target_speakers,
            halving_rule: HalvingRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub config: SplitConfig,
    pub control_speakers: IdSet,
    pub target_speakers: IdSet,
    pub test: IdSet,
    pub subtarget: IdSet,
    pub subcontrol_a: IdSet,
    pub subcontrol_b: IdSet,
}

impl SplitPlan {
    /// Speaker-independent training set: every control-group segment.
    pub fn training_set_a(&self) -> IdSet {
        self.subcontrol_a
            .union(&self.subcontrol_b)
            .cloned()
            .collect()
    }

    /// Speaker-overlapped training set: subcontrol A plus the subtarget.
    pub fn training_set_b(&self) -> IdSet {
        self.subcontrol_a.union(&self.subtarget).cloned().collect()
    }

    pub fn training_set(&self, which: TrainingSet) -> IdSet {
        match which {
            TrainingSet::A => self.training_set_a(),
            TrainingSet::B => self.training_set_b(),
        }
    }

    fn sections(&self) -> [(&'static str, &IdSet); 6] {
        [
            ("control_speakers", &self.control_speakers),
            ("target_speakers", &self.target_speakers),
            ("test", &self.test),
            ("subtarget", &self.subtarget),
            ("subcontrol_a", &self.subcontrol_a),
            ("subcontrol_b", &self.subcontrol_b),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrainingSet {
    A,
    B,
}

impl TrainingSet {
    pub const BOTH: [TrainingSet; 2] = [TrainingSet::A, TrainingSet::B];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingSet::A => "A",
            TrainingSet::B => "B",
        }
    }
}

impl FromStr for TrainingSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(TrainingSet::A),
            "B" | "b" => Ok(TrainingSet::B),
            _ => Err(Error::Config(format!(
                "training set must be A or B, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for TrainingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Picks the target speakers. This is the first draw of the split's
/// generator and depends only on the sorted speaker ids and the seed.
pub fn select_target_speakers(manifest: &Manifest, config: &SplitConfig) -> Result<IdSet> {
    let (target, _) = draw_groups(manifest, config, &mut SplitMix64::new(config.seed))?;
    Ok(target)
}

fn draw_groups(
    manifest: &Manifest,
    config: &SplitConfig,
    rng: &mut SplitMix64,
) -> Result<(IdSet, IdSet)> {
    let total = manifest.speaker_count();
    if config.n_target_speakers == 0 {
        return Err(Error::Config("n_target_speakers must be positive".into()));
    }
    if config.n_target_speakers >= total {
        return Err(Error::Config(format!(
            "n_target_speakers ({}) must be below the number of speakers ({total})",
            config.n_target_speakers
        )));
    }
    let mut speakers: Vec<&str> = manifest.speakers().collect();
    rng.shuffle(&mut speakers);
    let target = speakers[..config.n_target_speakers]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let control = speakers[config.n_target_speakers..]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Ok((target, control))
}

pub fn build_split(manifest: &Manifest, config: &SplitConfig) -> Result<SplitPlan> {
    let mut rng = SplitMix64::new(config.seed);
    let (target, control) = draw_groups(manifest, config, &mut rng)?;

    let short: Vec<&str> = target
        .iter()
        .filter(|s| manifest.speaker_segments(s).nth(1).is_none())
        .map(String::as_str)
        .collect();
    if !short.is_empty() {
        return Err(Error::Validation(format!(
            "target speakers need at least 2 segments: {}",
            short.join(", ")
        )));
    }

    let mut test = IdSet::new();
    let mut subtarget = IdSet::new();
    for speaker in &target {
        let mut segs: Vec<_> = manifest.speaker_segments(speaker).collect();
        match config.halving_rule {
            HalvingRule::RandomWithinSpeaker => rng.shuffle(&mut segs),
            HalvingRule::FirstHalfTemporal => {
                segs.sort_by_key(|s| s.segment_index);
                segs.reverse();
            }
        }
        let n_test = segs.len().div_ceil(2);
        test.extend(segs[..n_test].iter().map(|s| s.segment_id.clone()));
        subtarget.extend(segs[n_test..].iter().map(|s| s.segment_id.clone()));
    }

    let mut control_segs: Vec<&str> = manifest
        .segments()
        .iter()
        .filter(|s| control.contains(&s.speaker_id))
        .map(|s| s.segment_id.as_str())
        .collect();
    if control_segs.len() < subtarget.len() {
        return Err(Error::Validation(format!(
            "control group has {} segments, fewer than the {} needed to size-match the subtarget",
            control_segs.len(),
            subtarget.len()
        )));
    }
    rng.shuffle(&mut control_segs);
    let (b, a) = control_segs.split_at(subtarget.len());

    Ok(SplitPlan {
        config: *config,
        control_speakers: control,
        target_speakers: target,
        test,
        subtarget,
        subcontrol_a: a.iter().map(|s| s.to_string()).collect(),
        subcontrol_b: b.iter().map(|s| s.to_string()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitViolation {
    GroupOverlap {
        speakers: Vec<String>,
    },
    UnassignedSpeakers {
        speakers: Vec<String>,
    },
    UnknownSpeakers {
        speakers: Vec<String>,
    },
    TestSubtargetOverlap {
        segments: Vec<String>,
    },
    TargetCoverage {
        missing: Vec<String>,
        foreign: Vec<String>,
    },
    UnevenHalves {
        speaker: String,
        test: usize,
        subtarget: usize,
    },
    SubcontrolOverlap {
        segments: Vec<String>,
    },
    ControlCoverage {
        missing: Vec<String>,
        foreign: Vec<String>,
    },
    SubcontrolSize {
        subcontrol_b: usize,
        subtarget: usize,
    },
    SizeMismatch {
        set_a: usize,
        set_b: usize,
    },
    SpeakerOverlapSetA {
        speakers: Vec<String>,
    },
    SubtargetSpeakersNotInTest {
        speakers: Vec<String>,
    },
}

fn list(v: &[String]) -> String {
    v.join(", ")
}

impl fmt::Display for SplitViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use SplitViolation::*;
        match self {
            GroupOverlap { speakers } => {
                write!(f, "speakers in both control and target groups: {}", list(speakers))
            }
            UnassignedSpeakers { speakers } => {
                write!(f, "speakers in neither group: {}", list(speakers))
            }
            UnknownSpeakers { speakers } => {
                write!(f, "plan names speakers absent from the manifest: {}", list(speakers))
            }
            TestSubtargetOverlap { segments } => {
                write!(f, "segments in both test and subtarget: {}", list(segments))
            }
            TargetCoverage { missing, foreign } => write!(
                f,
                "test + subtarget must equal the target-group segments; missing [{}], foreign [{}]",
                list(missing),
                list(foreign)
            ),
            UnevenHalves {
                speaker,
                test,
                subtarget,
            } => write!(
                f,
                "speaker {speaker} halves differ by more than one: test {test}, subtarget {subtarget}"
            ),
            SubcontrolOverlap { segments } => {
                write!(f, "segments in both subcontrol A and B: {}", list(segments))
            }
            ControlCoverage { missing, foreign } => write!(
                f,
                "subcontrol A + B must equal the control-group segments; missing [{}], foreign [{}]",
                list(missing),
                list(foreign)
            ),
            SubcontrolSize {
                subcontrol_b,
                subtarget,
            } => write!(
                f,
                "subcontrol B has {subcontrol_b} segments but subtarget has {subtarget}"
            ),
            SizeMismatch { set_a, set_b } => write!(
                f,
                "size mismatch: Training Set A has {set_a} segments, Training Set B has {set_b}"
            ),
            SpeakerOverlapSetA { speakers } => {
                write!(f, "speaker overlap in Set A: {}", list(speakers))
            }
            SubtargetSpeakersNotInTest { speakers } => {
                write!(f, "subtarget speakers absent from the test set: {}", list(speakers))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub violations: Vec<SplitViolation>,
    pub set_a_size: usize,
    pub set_b_size: usize,
    pub test_size: usize,
    pub test_speakers: usize,
    /// Speakers shared between Training Set A and the test set.
    pub overlap_a: usize,
    /// Speakers shared between Training Set B and the test set.
    pub overlap_b: usize,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "set_a={} set_b={} test={} test_speakers={} overlap_a={} overlap_b={}",
            self.set_a_size,
            self.set_b_size,
            self.test_size,
            self.test_speakers,
            self.overlap_a,
            self.overlap_b
        )?;
        if self.violations.is_empty() {
            writeln!(f, "clean")
        } else {
            for v in &self.violations {
                writeln!(f, "violation: {v}")?;
            }
            Ok(())
        }
    }
}

fn speakers_of<'a>(
    manifest: &'a Manifest,
    ids: impl IntoIterator<Item = &'a String>,
) -> BTreeSet<&'a str> {
    ids.into_iter()
        .filter_map(|id| manifest.get(id))
        .map(|s| s.speaker_id.as_str())
        .collect()
}

/// Speakers shared by an arbitrary train/test pair of segment ids.
pub fn speaker_overlap(manifest: &Manifest, train: &IdSet, test: &IdSet) -> Result<Vec<String>> {
    check_known(manifest, train.iter().chain(test))?;
    let tr = speakers_of(manifest, train);
    let te = speakers_of(manifest, test);
    Ok(tr.intersection(&te).map(|s| s.to_string()).collect())
}

fn check_known<'a>(manifest: &Manifest, ids: impl Iterator<Item = &'a String>) -> Result<()> {
    let dangling: BTreeSet<&str> = ids
        .filter(|id| !manifest.contains(id))
        .map(String::as_str)
        .collect();
    if dangling.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "plan references segments absent from the manifest: {}",
            dangling.into_iter().collect::<Vec<_>>().join(", ")
        )))
    }
}

fn owned(it: impl IntoIterator<Item = impl ToString>) -> Vec<String> {
    it.into_iter().map(|s| s.to_string()).collect()
}

pub fn audit_split(manifest: &Manifest, plan: &SplitPlan) -> Result<AuditReport> {
    check_known(
        manifest,
        plan.test
            .iter()
            .chain(&plan.subtarget)
            .chain(&plan.subcontrol_a)
            .chain(&plan.subcontrol_b),
    )?;
    let mut v = Vec::new();

    let both: Vec<_> = plan
        .control_speakers
        .intersection(&plan.target_speakers)
        .collect();
    if !both.is_empty() {
        v.push(SplitViolation::GroupOverlap {
            speakers: owned(both),
        });
    }
    let assigned: BTreeSet<&str> = plan
        .control_speakers
        .iter()
        .chain(&plan.target_speakers)
        .map(String::as_str)
        .collect();
    let all: BTreeSet<&str> = manifest.speakers().collect();
    let unassigned: Vec<_> = all.difference(&assigned).collect();
    if !unassigned.is_empty() {
        v.push(SplitViolation::UnassignedSpeakers {
            speakers: owned(unassigned),
        });
    }
    let unknown: Vec<_> = assigned.difference(&all).collect();
    if !unknown.is_empty() {
        v.push(SplitViolation::UnknownSpeakers {
            speakers: owned(unknown),
        });
    }

    // Target group.
    let target_segs: IdSet = manifest
        .segments()
        .iter()
        .filter(|s| plan.target_speakers.contains(&s.speaker_id))
        .map(|s| s.segment_id.clone())
        .collect();
    let shared: Vec<_> = plan.test.intersection(&plan.subtarget).collect();
    if !shared.is_empty() {
        v.push(SplitViolation::TestSubtargetOverlap {
            segments: owned(shared),
        });
    }
    let halves: IdSet = plan.test.union(&plan.subtarget).cloned().collect();
    if halves != target_segs {
        v.push(SplitViolation::TargetCoverage {
            missing: owned(target_segs.difference(&halves)),
            foreign: owned(halves.difference(&target_segs)),
        });
    }
    let mut per_speaker: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for id in &plan.test {
        per_speaker
            .entry(&manifest.get(id).unwrap().speaker_id)
            .or_default()
            .0 += 1;
    }
    for id in &plan.subtarget {
        per_speaker
            .entry(&manifest.get(id).unwrap().speaker_id)
            .or_default()
            .1 += 1;
    }
    for (speaker, (t, s)) in &per_speaker {
        if t.abs_diff(*s) > 1 && plan.target_speakers.contains(*speaker) {
            v.push(SplitViolation::UnevenHalves {
                speaker: speaker.to_string(),
                test: *t,
                subtarget: *s,
            });
        }
    }

    // Control group.
    let control_segs: IdSet = manifest
        .segments()
        .iter()
        .filter(|s| plan.control_speakers.contains(&s.speaker_id))
        .map(|s| s.segment_id.clone())
        .collect();
    let shared: Vec<_> = plan.subcontrol_a.intersection(&plan.subcontrol_b).collect();
    if !shared.is_empty() {
        v.push(SplitViolation::SubcontrolOverlap {
            segments: owned(shared),
        });
    }
    let set_a = plan.training_set_a();
    if set_a != control_segs {
        v.push(SplitViolation::ControlCoverage {
            missing: owned(control_segs.difference(&set_a)),
            foreign: owned(set_a.difference(&control_segs)),
        });
    }
    if plan.subcontrol_b.len() != plan.subtarget.len() {
        v.push(SplitViolation::SubcontrolSize {
            subcontrol_b: plan.subcontrol_b.len(),
            subtarget: plan.subtarget.len(),
        });
    }

    // Training sets.
    let set_b = plan.training_set_b();
    if set_a.len() != set_b.len() {
        v.push(SplitViolation::SizeMismatch {
            set_a: set_a.len(),
            set_b: set_b.len(),
        });
    }
    let test_speakers = speakers_of(manifest, &plan.test);
    let overlap_a: Vec<_> = speakers_of(manifest, &set_a)
        .intersection(&test_speakers)
        .copied()
        .collect();
    if !overlap_a.is_empty() {
        v.push(SplitViolation::SpeakerOverlapSetA {
            speakers: owned(overlap_a.iter()),
        });
    }
    let sub_speakers = speakers_of(manifest, &plan.subtarget);
    let stray: Vec<_> = sub_speakers.difference(&test_speakers).collect();
    if !stray.is_empty() {
        v.push(SplitViolation::SubtargetSpeakersNotInTest {
            speakers: owned(stray),
        });
    }
    let overlap_b = speakers_of(manifest, &set_b)
        .intersection(&test_speakers)
        .count();

    Ok(AuditReport {
        violations: v,
        set_a_size: set_a.len(),
        set_b_size: set_b.len(),
        test_size: plan.test.len(),
        test_speakers: test_speakers.len(),
        overlap_a: overlap_a.len(),
        overlap_b,
    })
}

pub fn render_split(plan: &SplitPlan) -> String {
    let mut out = String::new();
    out.push_str("[meta]\n");
    out.push_str(&format!("seed = {}\n", plan.config.seed));
    out.push_str(&format!(
        "n_target_speakers = {}\n",
        plan.config.n_target_speakers
    ));
    out.push_str(&format!(
        "halving_rule = {}\n",
        plan.config.halving_rule.as_str()
    ));
    out.push_str(&format!("tool_version = {}\n", crate::VERSION));
    for (name, ids) in plan.sections() {
        out.push_str(&format!("\n[{name}]\n"));
        for id in ids {
            out.push_str(id);
            out.push('\n');
        }
    }
    out
}

pub fn parse_split(text: &str, path: &Path) -> Result<SplitPlan> {
    let mut seed = None;
    let mut n_target = None;
    let mut rule = HalvingRule::default();
    let mut sets: BTreeMap<&'static str, IdSet> = BTreeMap::new();
    const NAMES: [&str; 6] = [
        "control_speakers",
        "target_speakers",
        "test",
        "subtarget",
        "subcontrol_a",
        "subcontrol_b",
    ];
    let mut current: Option<&'static str> = None;
    let mut in_meta = false;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            if name == "meta" {
                in_meta = true;
                current = None;
                continue;
            }
            let known = NAMES
                .iter()
                .find(|n| **n == name)
                .ok_or_else(|| Error::parse(path, lineno, format!("unknown set name `{name}`")))?;
            if sets.contains_key(known) {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("section `{name}` repeated"),
                ));
            }
            sets.insert(known, IdSet::new());
            current = Some(known);
            in_meta = false;
            continue;
        }
        if in_meta {
            let (k, val) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::parse(path, lineno, "expected `key = value` in [meta]"))?;
            let bad = |what: &str| Error::parse(path, lineno, format!("bad {what} `{val}`"));
            match k {
                "seed" => seed = Some(val.parse::<u64>().map_err(|_| bad("seed"))?),
                "n_target_speakers" => {
                    n_target = Some(val.parse::<usize>().map_err(|_| bad("n_target_speakers"))?)
                }
                "halving_rule" => {
                    rule = val
                        .parse()
                        .map_err(|e: Error| Error::parse(path, lineno, e.to_string()))?
                }
                "tool_version" => {}
                _ => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("unknown meta key `{k}`"),
                    ))
                }
            }
            continue;
        }
        let Some(section) = current else {
            return Err(Error::parse(path, lineno, "id outside of any section"));
        };
        if !sets.get_mut(section).unwrap().insert(line.to_owned()) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate id `{line}` in [{section}]"),
            ));
        }
    }
    let missing: Vec<&str> = NAMES
        .iter()
        .copied()
        .filter(|n| !sets.contains_key(n))
        .collect();
    if !missing.is_empty() {
        return Err(Error::parse(
            path,
            text.lines().count(),
            format!("missing sections: {}", missing.join(", ")),
        ));
    }
    let config = SplitConfig {
        seed: seed.ok_or_else(|| Error::parse(path, 1, "missing meta seed"))?,
        n_target_speakers: n_target
            .ok_or_else(|| Error::parse(path, 1, "missing meta n_target_speakers"))?,
        halving_rule: rule,
    };
    let mut take = |n: &str| sets.remove(n).unwrap();
    Ok(SplitPlan {
        config,
        control_speakers: take("control_speakers"),
        target_speakers: take("target_speakers"),
        test: take("test"),
        subtarget: take("subtarget"),
        subcontrol_a: take("subcontrol_a"),
        subcontrol_b: take("subcontrol_b"),
    })
}

pub fn write_split(plan: &SplitPlan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_split(plan)).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: impl AsRef<Path>) -> Result<SplitPlan> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split(&text, path)
}
