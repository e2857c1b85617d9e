//! Synthetic corpora where speaker identity and the depression label are
//! entangled with controllable strength.
//!
//! Each speaker gets a label `y ~ Bernoulli(prevalence)` and a centroid
//! `mu ~ N(0, sigma_identity^2 I)`. Every frame of every segment is
//! `mu + y * delta_label * e1 + N(0, sigma_noise^2 I)`, where `e1` is the first
//! coordinate axis. Views share the centroid and draw independent noise.

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{DepressionLabel, Label, Manifest, Segment};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::{FeatureView, FeatureViews, Frames};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_speakers: usize,
    pub segments_per_speaker: usize,
    pub dim: usize,
    pub sigma_identity: f64,
    pub delta_label: f64,
    pub sigma_noise: f64,
    pub prevalence: f64,
    pub n_views: usize,
    pub frames_per_segment: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_speakers: 40,
            segments_per_speaker: 20,
            dim: 16,
            sigma_identity: 5.0,
            delta_label: 0.5,
            sigma_noise: 1.0,
            prevalence: 0.3,
            n_views: 1,
            frames_per_segment: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_speakers == 0 || self.segments_per_speaker == 0 || self.dim == 0 {
            return bad("n_speakers, segments_per_speaker and dim must be positive".into());
        }
        if self.n_views == 0 || self.frames_per_segment == 0 {
            return bad("n_views and frames_per_segment must be at least 1".into());
        }
        for (name, v) in [
            ("sigma_identity", self.sigma_identity),
            ("sigma_noise", self.sigma_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.delta_label.is_finite() {
            return bad("delta_label must be finite".into());
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad(format!(
                "prevalence must lie in (0, 1), got {}",
                self.prevalence
            ));
        }
        Ok(())
    }

    pub fn view_names(&self) -> Vec<String> {
        (0..self.n_views).map(|k| format!("view{k}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerTruth {
    pub speaker_id: String,
    pub label: Label,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub speakers: Vec<SpeakerTruth>,
}

impl GroundTruth {
    /// Expected segment mean for a speaker: `mu + y * delta_label * e1`.
    pub fn expected_mean(&self, speaker: &SpeakerTruth) -> Vec<f64> {
        let mut m = speaker.centroid.clone();
        if speaker.label == Label::Depressed {
            m[0] += self.config.delta_label;
        }
        m
    }

    pub fn render(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "[config]");
        let _ = writeln!(s, "seed = {}", c.seed);
        let _ = writeln!(s, "n_speakers = {}", c.n_speakers);
        let _ = writeln!(s, "segments_per_speaker = {}", c.segments_per_speaker);
        let _ = writeln!(s, "dim = {}", c.dim);
        let _ = writeln!(s, "sigma_identity = {:?}", c.sigma_identity);
        let _ = writeln!(s, "delta_label = {:?}", c.delta_label);
        let _ = writeln!(s, "sigma_noise = {:?}", c.sigma_noise);
        let _ = writeln!(s, "prevalence = {:?}", c.prevalence);
        let _ = writeln!(s, "n_views = {}", c.n_views);
        let _ = writeln!(s, "frames_per_segment = {}", c.frames_per_segment);
        let _ = writeln!(s, "label_direction = e1");
        let _ = writeln!(s, "\n[speakers]");
        for spk in &self.speakers {
            let mu: Vec<String> = spk.centroid.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{} {} {}", spk.speaker_id, spk.label, mu.join(","));
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub data: Dataset,
    pub truth: GroundTruth,
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let width = config.n_speakers.saturating_sub(1).to_string().len().max(3);

    let speakers: Vec<SpeakerTruth> = (0..config.n_speakers)
        .map(|s| {
            let label = if rng.next_f64() < config.prevalence {
                Label::Depressed
            } else {
                Label::NotDepressed
            };
            let centroid = (0..config.dim)
                .map(|_| config.sigma_identity * rng.normal())
                .collect();
            SpeakerTruth {
                speaker_id: format!("spk{s:0width$}"),
                label,
                centroid,
            }
        })
        .collect();

    let names = config.view_names();
    let mut views: Vec<FeatureView> = names
        .iter()
        .map(|n| FeatureView::new(n, config.dim))
        .collect();
    let mut segments = Vec::with_capacity(config.n_speakers * config.segments_per_speaker);
    let seg_width = config
        .segments_per_speaker
        .saturating_sub(1)
        .to_string()
        .len()
        .max(3);
    for spk in &speakers {
        let y = if spk.label == Label::Depressed {
            1.0
        } else {
            0.0
        };
        for k in 0..config.segments_per_speaker {
            let segment_id = format!("{}_{k:0seg_width$}", spk.speaker_id);
            for view in views.iter_mut() {
                let mut values = Vec::with_capacity(config.frames_per_segment * config.dim);
                for _ in 0..config.frames_per_segment {
                    for (d, mu) in spk.centroid.iter().enumerate() {
                        let shift = if d == 0 { y * config.delta_label } else { 0.0 };
                        values.push(mu + shift + config.sigma_noise * rng.normal());
                    }
                }
                view.insert(
                    segment_id.clone(),
                    Frames::new(config.frames_per_segment, config.dim, values)?,
                )?;
            }
            segments.push(Segment {
                segment_id,
                speaker_id: spk.speaker_id.clone(),
                segment_index: k as u32,
                label: DepressionLabel::new(spk.label),
                feature_refs: names.clone(),
            });
        }
    }

    let manifest = Manifest::new(segments)?;
    let data = Dataset::new(manifest, FeatureViews::new(views)?)?;
    Ok(SynthCorpus {
        data,
        truth: GroundTruth {
            config: *config,
            speakers,
        },
    })
}

pub const TRUTH_FILE: &str = "truth.txt";

/// Writes the data directory plus the ground-truth sidecar.
pub fn write_corpus(corpus: &SynthCorpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    corpus.data.write_dir(dir)?;
    corpus.truth.write(dir.join(TRUTH_FILE))
}
