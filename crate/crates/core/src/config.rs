//! Experiment config files: `key = value` lines under `[data]`, `[split]`,
//! `[model]`, `[train]` and `[dann]`. `#` starts a comment line.
//!
//! Any seed left out is derived from `master_seed` (in `[train]`, or the
//! `--seed` flag) with [`derive_seed`]; the resolved config always lists
//! every seed explicitly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::SgdConfig;
use crate::rng::derive_seed;
use crate::splitter::{HalvingRule, SplitConfig};
use crate::synth::SynthConfig;
use crate::trainer::{LambdaSchedule, ModelSpec};

/// Stage tags for seed derivation.
pub mod stage {
    pub const SYNTH: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const PROBE_INIT: u64 = 5;
    pub const PROBE_SHUFFLE: u64 = 6;
}

const SECTIONS: [&str; 5] = ["data", "split", "model", "train", "dann"];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth(SynthConfig),
    Dir(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub data: DataSource,
    pub split: SplitConfig,
    pub arms: Vec<ModelSpec>,
    pub sgd: SgdConfig,
    pub init_seed: u64,
    pub probe_sgd: SgdConfig,
    pub probe_init_seed: u64,
}

struct Section<'a> {
    name: &'static str,
    entries: BTreeMap<&'a str, (usize, &'a str)>,
    path: &'a Path,
}

impl<'a> Section<'a> {
    fn raw(&self, key: &str) -> Option<(usize, &'a str)> {
        self.entries.get(key).copied()
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|_| {
                Error::parse(
                    self.path,
                    line,
                    format!("[{}] {key}: cannot parse `{v}`", self.name),
                )
            }),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !allowed.contains(k) {
                return Err(Error::parse(
                    self.path,
                    *line,
                    format!("unknown key `{k}` in [{}]", self.name),
                ));
            }
        }
        Ok(())
    }
}

fn sections<'a>(text: &'a str, path: &'a Path) -> Result<Vec<Section<'a>>> {
    let mut out: Vec<Section<'a>> = SECTIONS
        .iter()
        .map(|&name| Section {
            name,
            entries: BTreeMap::new(),
            path,
        })
        .collect();
    let mut current: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(
                SECTIONS
                    .iter()
                    .position(|s| *s == name.trim())
                    .ok_or_else(|| {
                        Error::parse(path, line_no, format!("unknown section [{name}]"))
                    })?,
            );
            continue;
        }
        let idx = current.ok_or_else(|| Error::parse(path, line_no, "key outside of a section"))?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line_no, "expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        if out[idx].entries.insert(k, (line_no, v)).is_some() {
            return Err(Error::parse(path, line_no, format!("duplicate key `{k}`")));
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let s = sections(text, path)?;
        let [data, split, model, train, dann] = <[Section; 5]>::try_from(s).ok().unwrap();

        train.check_keys(&[
            "master_seed",
            "learning_rate",
            "batch_size",
            "epochs",
            "shuffle_seed",
            "init_seed",
            "probe_learning_rate",
            "probe_batch_size",
            "probe_epochs",
            "probe_shuffle_seed",
            "probe_init_seed",
        ])?;
        let master_seed = match seed_override {
            Some(s) => s,
            None => train.or("master_seed", 0u64)?,
        };
        let seed = |sec: &Section, key: &str, tag: u64| -> Result<u64> {
            Ok(sec
                .get(key)?
                .unwrap_or_else(|| derive_seed(master_seed, tag)))
        };

        data.check_keys(&[
            "source",
            "dir",
            "seed",
            "n_speakers",
            "segments_per_speaker",
            "dim",
            "sigma_identity",
            "delta_label",
            "sigma_noise",
            "prevalence",
            "n_views",
            "frames_per_segment",
        ])?;
        let source: String = data.or("source", "synth".to_string())?;
        let data_source = match source.as_str() {
            "synth" => {
                let d = SynthConfig::default();
                let cfg = SynthConfig {
                    seed: seed(&data, "seed", stage::SYNTH)?,
                    n_speakers: data.or("n_speakers", d.n_speakers)?,
                    segments_per_speaker: data
                        .or("segments_per_speaker", d.segments_per_speaker)?,
                    dim: data.or("dim", d.dim)?,
                    sigma_identity: data.or("sigma_identity", d.sigma_identity)?,
                    delta_label: data.or("delta_label", d.delta_label)?,
                    sigma_noise: data.or("sigma_noise", d.sigma_noise)?,
                    prevalence: data.or("prevalence", d.prevalence)?,
                    n_views: data.or("n_views", d.n_views)?,
                    frames_per_segment: data.or("frames_per_segment", d.frames_per_segment)?,
                };
                cfg.validate()?;
                DataSource::Synth(cfg)
            }
            "dir" => DataSource::Dir(
                data.get::<String>("dir")?
                    .ok_or_else(|| Error::Config("[data] source = dir needs `dir`".into()))?
                    .into(),
            ),
            other => return Err(Error::Config(format!("unknown data source `{other}`"))),
        };

        split.check_keys(&["seed", "n_target_speakers", "halving_rule"])?;
        let split_cfg = SplitConfig {
            seed: seed(&split, "seed", stage::SPLIT)?,
            n_target_speakers: split
                .get("n_target_speakers")?
                .ok_or_else(|| Error::Config("[split] needs n_target_speakers".into()))?,
            halving_rule: split.or("halving_rule", HalvingRule::default())?,
        };

        dann.check_keys(&[
            "schedule",
            "gamma",
            "lambda_max",
            "lambda",
            "adversary_lr_scale",
        ])?;
        let adversary_lr_scale = dann.or("adversary_lr_scale", 1.0)?;
        let schedule = match dann.or("schedule", "ganin".to_string())?.as_str() {
            "ganin" => LambdaSchedule::Ganin {
                gamma: dann.or("gamma", 10.0)?,
                lambda_max: dann.or("lambda_max", 1.0)?,
            },
            "constant" => LambdaSchedule::Constant(dann.or("lambda", 1.0)?),
            other => return Err(Error::Config(format!("unknown dann schedule `{other}`"))),
        };
        schedule.validate()?;

        model.check_keys(&[
            "arms",
            "projection_dim",
            "projection_relu",
            "standardize",
            "views",
        ])?;
        let arms_text: String = model
            .get("arms")?
            .ok_or_else(|| Error::Config("[model] needs `arms`".into()))?;
        let views: Vec<String> = model
            .get::<String>("views")?
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().to_owned())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default();
        let projection_dim = model.or("projection_dim", 16usize)?;
        let projection_relu = model.or("projection_relu", false)?;
        let standardize = model.or("standardize", false)?;
        let mut arms = Vec::new();
        for name in arms_text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            let mut spec = ModelSpec::parse_arm(name)?;
            spec.projection_dim = projection_dim;
            spec.projection_relu = projection_relu;
            spec.standardize = standardize;
            spec.schedule = schedule;
            spec.adversary_lr_scale = adversary_lr_scale;
            spec.views = views.clone();
            if arms
                .iter()
                .any(|a: &ModelSpec| a.arm_name() == spec.arm_name())
            {
                return Err(Error::Config(format!("arm {name} listed twice")));
            }
            arms.push(spec);
        }
        if arms.is_empty() {
            return Err(Error::Config("[model] arms is empty".into()));
        }

        let sgd = SgdConfig {
            learning_rate: train.or("learning_rate", 0.01)?,
            batch_size: train.or("batch_size", 32)?,
            epochs: train.or("epochs", 30)?,
            seed: seed(&train, "shuffle_seed", stage::SHUFFLE)?,
        };
        sgd.validate()?;
        let probe_sgd = SgdConfig {
            learning_rate: train.or("probe_learning_rate", sgd.learning_rate)?,
            batch_size: train.or("probe_batch_size", sgd.batch_size)?,
            epochs: train.or("probe_epochs", sgd.epochs)?,
            seed: seed(&train, "probe_shuffle_seed", stage::PROBE_SHUFFLE)?,
        };
        probe_sgd.validate()?;

        Ok(Self {
            master_seed,
            data: data_source,
            split: split_cfg,
            arms,
            sgd,
            init_seed: seed(&train, "init_seed", stage::INIT)?,
            probe_sgd,
            probe_init_seed: seed(&train, "probe_init_seed", stage::PROBE_INIT)?,
        })
    }

    pub fn load(path: impl AsRef<Path>, seed_override: Option<u64>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path, seed_override)
    }

    /// Canonical text with every value and seed resolved. Parsing it gives
    /// back the same config.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[data]");
        match &self.data {
            DataSource::Synth(c) => {
                let _ = writeln!(s, "source = synth");
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
            }
            DataSource::Dir(d) => {
                let _ = writeln!(s, "source = dir");
                let _ = writeln!(s, "dir = {}", d.display());
            }
        }
        let _ = writeln!(s, "\n[split]");
        let _ = writeln!(s, "seed = {}", self.split.seed);
        let _ = writeln!(s, "n_target_speakers = {}", self.split.n_target_speakers);
        let _ = writeln!(s, "halving_rule = {}", self.split.halving_rule.as_str());
        let first = &self.arms[0];
        let _ = writeln!(s, "\n[model]");
        let names: Vec<String> = self.arms.iter().map(ModelSpec::arm_name).collect();
        let _ = writeln!(s, "arms = {}", names.join(", "));
        let _ = writeln!(s, "projection_dim = {}", first.projection_dim);
        let _ = writeln!(s, "projection_relu = {}", first.projection_relu);
        let _ = writeln!(s, "standardize = {}", first.standardize);
        if !first.views.is_empty() {
            let _ = writeln!(s, "views = {}", first.views.join(", "));
        }
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "learning_rate = {:?}", self.sgd.learning_rate);
        let _ = writeln!(s, "batch_size = {}", self.sgd.batch_size);
        let _ = writeln!(s, "epochs = {}", self.sgd.epochs);
        let _ = writeln!(s, "shuffle_seed = {}", self.sgd.seed);
        let _ = writeln!(s, "init_seed = {}", self.init_seed);
        let _ = writeln!(
            s,
            "probe_learning_rate = {:?}",
            self.probe_sgd.learning_rate
        );
        let _ = writeln!(s, "probe_batch_size = {}", self.probe_sgd.batch_size);
        let _ = writeln!(s, "probe_epochs = {}", self.probe_sgd.epochs);
        let _ = writeln!(s, "probe_shuffle_seed = {}", self.probe_sgd.seed);
        let _ = writeln!(s, "probe_init_seed = {}", self.probe_init_seed);
        let _ = writeln!(s, "\n[dann]");
        match first.schedule {
            LambdaSchedule::Ganin { gamma, lambda_max } => {
                let _ = writeln!(s, "schedule = ganin");
                let _ = writeln!(s, "gamma = {gamma:?}");
                let _ = writeln!(s, "lambda_max = {lambda_max:?}");
            }
            LambdaSchedule::Constant(l) => {
                let _ = writeln!(s, "schedule = constant");
                let _ = writeln!(s, "lambda = {l:?}");
            }
        }
        let _ = writeln!(s, "adversary_lr_scale = {:?}", first.adversary_lr_scale);
        s
    }
}
