//! Head architectures, Original and DANN training, prediction, and the
//! post-hoc speaker-identification probe.
//!
//! Every head maps pooled feature views to a representation `h` and feeds it
//! to a linear depression classifier:
//!
//! * `single_view_probe`: one view.
//! * `concat_views`: views concatenated side by side.
//! * `weighted_views`: softmax-weighted sum of equally sized views, with the
//!   weights learned.
//!
//! With `frozen` featurization `h` is the combined input itself; with
//! `trainable_projection` a dense projection (optionally followed by ReLU) is
//! trained end to end. The `dann` variant adds a speaker classifier on `h`
//! behind a gradient reversal layer: feature parameters then receive
//! `dL_dep - lambda * dL_spk` while the speaker head descends `L_spk`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::corpus::Label;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    read_checkpoint, relu, relu_backward, sgd_step, softmax_rows, softmax_xent, write_checkpoint,
    Dense, GradientReversal, Matrix, NamedTensor, SgdConfig, ViewAggregator,
};
use crate::rng::SplitMix64;
use crate::splitter::IdSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeadFamily {
    SingleViewProbe,
    ConcatViews,
    WeightedViews,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeaturizerMode {
    Frozen,
    TrainableProjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Original,
    Dann,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $text),+
                }
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"),
                        s
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

text_enum!(HeadFamily {
    SingleViewProbe => "single_view_probe",
    ConcatViews => "concat_views",
    WeightedViews => "weighted_views",
});

text_enum!(FeaturizerMode {
    Frozen => "frozen",
    TrainableProjection => "trainable_projection",
});

text_enum!(Variant {
    Original => "original",
    Dann => "dann",
});

/// Adversarial strength over training progress `p` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSchedule {
    Constant(f64),
    /// `lambda_max * (2 / (1 + exp(-gamma * p)) - 1)`.
    Ganin {
        gamma: f64,
        lambda_max: f64,
    },
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule::Ganin {
            gamma: 10.0,
            lambda_max: 1.0,
        }
    }
}

impl LambdaSchedule {
    pub fn at(&self, progress: f64) -> f64 {
        match *self {
            LambdaSchedule::Constant(l) => l,
            LambdaSchedule::Ganin { gamma, lambda_max } => {
                let p = progress.clamp(0.0, 1.0);
                lambda_max * (2.0 / (1.0 + (-gamma * p).exp()) - 1.0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LambdaSchedule::Constant(l) => l >= 0.0 && l.is_finite(),
            LambdaSchedule::Ganin { gamma, lambda_max } => {
                gamma >= 0.0 && gamma.is_finite() && lambda_max >= 0.0 && lambda_max.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid lambda schedule {self}")))
        }
    }
}

impl fmt::Display for LambdaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaSchedule::Constant(l) => write!(f, "constant({l})"),
            LambdaSchedule::Ganin { gamma, lambda_max } => write!(f, "ganin({gamma},{lambda_max})"),
        }
    }
}

impl FromStr for LambdaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad lambda schedule `{s}`"));
        let (kind, rest) = s.split_once('(').ok_or_else(bad)?;
        let args: Vec<f64> = rest
            .strip_suffix(')')
            .ok_or_else(bad)?
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let sched = match (kind.trim(), args.as_slice()) {
            ("constant", [l]) => LambdaSchedule::Constant(*l),
            ("ganin", [gamma, lambda_max]) => LambdaSchedule::Ganin {
                gamma: *gamma,
                lambda_max: *lambda_max,
            },
            _ => return Err(bad()),
        };
        sched.validate()?;
        Ok(sched)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: HeadFamily,
    pub featurizer: FeaturizerMode,
    pub variant: Variant,
    pub projection_dim: usize,
    pub projection_relu: bool,
    pub schedule: LambdaSchedule,
    /// Learning-rate multiplier for the adversarial speaker head.
    pub adversary_lr_scale: f64,
    /// Per-dimension standardization fitted on the training set.
    pub standardize: bool,
    /// Views the head reads. Empty means the first view for
    /// `single_view_probe` and every view otherwise.
    pub views: Vec<String>,
}

impl ModelSpec {
    pub fn new(family: HeadFamily, featurizer: FeaturizerMode, variant: Variant) -> Self {
        Self {
            family,
            featurizer,
            variant,
            projection_dim: 16,
            projection_relu: false,
            schedule: LambdaSchedule::default(),
            adversary_lr_scale: 1.0,
            standardize: false,
            views: Vec::new(),
        }
    }

    /// `family/featurizer/variant`, e.g. `single_view_probe/frozen/dann`.
    pub fn arm_name(&self) -> String {
        format!("{}/{}/{}", self.family, self.featurizer, self.variant)
    }

    /// Parses an arm name into a spec with default hyperparameters.
    pub fn parse_arm(name: &str) -> Result<Self> {
        let parts: Vec<&str> = name.trim().split('/').collect();
        match parts.as_slice() {
            [f, m, v] => Ok(Self::new(f.parse()?, m.parse()?, v.parse()?)),
            _ => Err(Error::Config(format!(
                "arm `{name}` must look like family/featurizer/variant"
            ))),
        }
    }

    pub fn has_projection(&self) -> bool {
        self.featurizer == FeaturizerMode::TrainableProjection
    }

    fn resolve_views(&self, data: &Dataset) -> Result<Vec<String>> {
        let available = data.views.names();
        let views = if self.views.is_empty() {
            match self.family {
                HeadFamily::SingleViewProbe => available.into_iter().take(1).collect(),
                _ => available,
            }
        } else {
            for v in &self.views {
                if data.views.get(v).is_none() {
                    return Err(Error::Validation(format!("model needs unknown view {v}")));
                }
            }
            self.views.clone()
        };
        match self.family {
            HeadFamily::SingleViewProbe if views.len() != 1 => Err(Error::Config(format!(
                "single_view_probe reads exactly one view, got {}",
                views.len()
            ))),
            HeadFamily::ConcatViews if views.len() < 2 => {
                Err(Error::Config("concat_views needs at least 2 views".into()))
            }
            _ if views.is_empty() => Err(Error::Config("no feature views available".into())),
            _ => Ok(views),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub depression: f64,
    pub speaker: Option<f64>,
}

/// Named parameter gradients, in the order produced by the backward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients(pub Vec<(&'static str, Vec<f64>)>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, g)| g.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub representation: Matrix,
    pub depression_logits: Matrix,
    pub speaker_logits: Option<Matrix>,
}

/// The trainable part of a model: optional view aggregator, optional
/// projection, depression head and (for DANN) the adversarial speaker head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadNetwork {
    pub family: HeadFamily,
    pub aggregator: Option<ViewAggregator>,
    pub projection: Option<Dense>,
    pub projection_relu: bool,
    pub depression: Dense,
    pub speaker: Option<Dense>,
    pub grl: GradientReversal,
    projection_pre: Option<Matrix>,
}

impl HeadNetwork {
    /// Initialization order: projection, depression head, speaker head, all
    /// from one generator, so adding a speaker head leaves the other
    /// parameters' initial values unchanged.
    pub fn new(
        spec: &ModelSpec,
        view_dims: &[usize],
        n_speakers: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let input_dim = match spec.family {
            HeadFamily::SingleViewProbe => view_dims[0],
            HeadFamily::ConcatViews => view_dims.iter().sum(),
            HeadFamily::WeightedViews => {
                if view_dims.iter().any(|&d| d != view_dims[0]) {
                    return Err(Error::Shape(format!(
                        "weighted_views needs equal view dimensions, got {view_dims:?}"
                    )));
                }
                view_dims[0]
            }
        };
        let aggregator = (spec.family == HeadFamily::WeightedViews)
            .then(|| ViewAggregator::new(view_dims.len()));
        let projection = if spec.has_projection() {
            if spec.projection_dim == 0 {
                return Err(Error::Config("projection_dim must be positive".into()));
            }
            Some(Dense::new(input_dim, spec.projection_dim, rng))
        } else {
            None
        };
        let rep_dim = projection.as_ref().map_or(input_dim, Dense::outputs);
        let depression = Dense::new(rep_dim, Label::COUNT, rng);
        let speaker = match spec.variant {
            Variant::Dann => Some(Dense::new(rep_dim, n_speakers, rng)),
            Variant::Original => None,
        };
        Ok(Self {
            family: spec.family,
            aggregator,
            projection,
            projection_relu: spec.projection_relu,
            depression,
            speaker,
            grl: GradientReversal::new(spec.schedule.at(0.0))?,
            projection_pre: None,
        })
    }

    pub fn representation_dim(&self) -> usize {
        self.depression.inputs()
    }

    fn combine_infer(&self, inputs: &[Matrix]) -> Result<Matrix> {
        match self.family {
            HeadFamily::SingleViewProbe => single(inputs),
            HeadFamily::ConcatViews => Matrix::hconcat(inputs),
            HeadFamily::WeightedViews => self.aggregator.as_ref().unwrap().infer(inputs),
        }
    }

    /// Representation `h` without caching anything.
    pub fn represent(&self, inputs: &[Matrix]) -> Result<Matrix> {
        let x = self.combine_infer(inputs)?;
        match &self.projection {
            Some(p) => {
                let pre = p.infer(&x)?;
                Ok(if self.projection_relu {
                    relu(&pre)
                } else {
                    pre
                })
            }
            None => Ok(x),
        }
    }

    pub fn depression_logits(&self, inputs: &[Matrix]) -> Result<Matrix> {
        self.depression.infer(&self.represent(inputs)?)
    }

    pub fn forward(&mut self, inputs: &[Matrix]) -> Result<ForwardOutput> {
        let x = match self.family {
            HeadFamily::SingleViewProbe => single(inputs)?,
            HeadFamily::ConcatViews => Matrix::hconcat(inputs)?,
            HeadFamily::WeightedViews => self.aggregator.as_mut().unwrap().forward(inputs)?,
        };
        let h = match &mut self.projection {
            Some(p) => {
                let pre = p.forward(&x)?;
                let h = if self.projection_relu {
                    relu(&pre)
                } else {
                    pre.clone()
                };
                self.projection_pre = Some(pre);
                h
            }
            None => x,
        };
        let depression_logits = self.depression.forward(&h)?;
        let speaker_logits = match &mut self.speaker {
            Some(s) => Some(s.forward(&self.grl.forward(&h))?),
            None => None,
        };
        Ok(ForwardOutput {
            representation: h,
            depression_logits,
            speaker_logits,
        })
    }

    /// Losses and parameter gradients for the last `forward`.
    pub fn backward(
        &self,
        out: &ForwardOutput,
        depression_targets: &[usize],
        speaker_targets: Option<&[usize]>,
    ) -> Result<(StepLosses, Gradients)> {
        let mut grads = Vec::new();
        let (dep_loss, d_dep) = softmax_xent(&out.depression_logits, depression_targets)?;
        let g = self.depression.backward(&d_dep)?;
        let mut dh = g.input;
        grads.push(("depression.weight", g.weight.into_vec()));
        grads.push(("depression.bias", g.bias));

        let mut spk_loss = None;
        if let (Some(head), Some(logits)) = (&self.speaker, &out.speaker_logits) {
            let targets = speaker_targets
                .ok_or_else(|| Error::Training("DANN step without speaker targets".into()))?;
            let (loss, d_spk) = softmax_xent(logits, targets)?;
            let g = head.backward(&d_spk)?;
            dh.add_scaled_in_place(&self.grl.backward(&g.input), 1.0)?;
            grads.push(("speaker.weight", g.weight.into_vec()));
            grads.push(("speaker.bias", g.bias));
            spk_loss = Some(loss);
        }

        let dx = match &self.projection {
            Some(p) => {
                let d_pre = if self.projection_relu {
                    relu_backward(self.projection_pre.as_ref().unwrap(), &dh)?
                } else {
                    dh
                };
                let g = p.backward(&d_pre)?;
                grads.push(("projection.weight", g.weight.into_vec()));
                grads.push(("projection.bias", g.bias));
                g.input
            }
            None => dh,
        };
        if let Some(agg) = &self.aggregator {
            let g = agg.backward(&dx)?;
            grads.push(("aggregator.logits", g.logits));
        }
        Ok((
            StepLosses {
                depression: dep_loss,
                speaker: spk_loss,
            },
            Gradients(grads),
        ))
    }

    fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        match name {
            "depression.weight" => Some(self.depression.weight.as_mut_slice()),
            "depression.bias" => Some(&mut self.depression.bias),
            "speaker.weight" => self.speaker.as_mut().map(|s| s.weight.as_mut_slice()),
            "speaker.bias" => self.speaker.as_mut().map(|s| s.bias.as_mut_slice()),
            "projection.weight" => self.projection.as_mut().map(|p| p.weight.as_mut_slice()),
            "projection.bias" => self.projection.as_mut().map(|p| p.bias.as_mut_slice()),
            "aggregator.logits" => self.aggregator.as_mut().map(|a| a.logits.as_mut_slice()),
            _ => None,
        }
    }

    /// One SGD update. All gradients are checked before anything moves.
    pub fn apply(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        self.apply_scaled(grads, learning_rate, 1.0)
    }

    /// Like [`apply`](Self::apply) with the speaker head's step multiplied by
    /// `speaker_scale`.
    pub fn apply_scaled(
        &mut self,
        grads: &Gradients,
        learning_rate: f64,
        speaker_scale: f64,
    ) -> Result<()> {
        for (name, g) in &grads.0 {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter {name} at index {i}"
                )));
            }
        }
        for (name, g) in &grads.0 {
            let p = self
                .param_mut(name)
                .ok_or_else(|| Error::Training(format!("no parameter named {name}")))?;
            let lr = if name.starts_with("speaker.") {
                learning_rate * speaker_scale
            } else {
                learning_rate
            };
            sgd_step(name, p, g, lr)?;
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        if let Some(a) = &self.aggregator {
            out.push(NamedTensor::vector("aggregator.logits", &a.logits));
        }
        if let Some(p) = &self.projection {
            out.push(NamedTensor::new("projection.weight", p.weight.clone()));
            out.push(NamedTensor::vector("projection.bias", &p.bias));
        }
        out.push(NamedTensor::new(
            "depression.weight",
            self.depression.weight.clone(),
        ));
        out.push(NamedTensor::vector(
            "depression.bias",
            &self.depression.bias,
        ));
        if let Some(s) = &self.speaker {
            out.push(NamedTensor::new("speaker.weight", s.weight.clone()));
            out.push(NamedTensor::vector("speaker.bias", &s.bias));
        }
        out
    }

    fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let expected = self.tensors();
        if expected.len()
            != tensors
                .iter()
                .filter(|t| !t.name.starts_with("standardize."))
                .count()
        {
            return Err(Error::Validation(format!(
                "checkpoint has {} network tensors, model needs {}",
                tensors.len(),
                expected.len()
            )));
        }
        for e in expected {
            let t = tensors
                .iter()
                .find(|t| t.name == e.name)
                .ok_or_else(|| Error::Validation(format!("checkpoint lacks tensor {}", e.name)))?;
            if t.value.shape() != e.value.shape() {
                return Err(Error::Validation(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name,
                    t.value.shape(),
                    e.value.shape()
                )));
            }
            self.param_mut(&e.name)
                .unwrap()
                .copy_from_slice(t.value.as_slice());
        }
        Ok(())
    }
}

fn single(inputs: &[Matrix]) -> Result<Matrix> {
    match inputs {
        [x] => Ok(x.clone()),
        _ => Err(Error::Shape(format!(
            "single_view_probe takes one view, got {}",
            inputs.len()
        ))),
    }
}

/// Per-dimension shift and scale for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows().max(1) as f64;
        let mean: Vec<f64> = x.column_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for ((v, m), a) in var.iter_mut().zip(&mean).zip(x.row(r)) {
                *v += (a - m) * (a - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Sorted ids hashed with SHA-256, first 16 hex digits.
pub fn fingerprint<'a>(ids: impl IntoIterator<Item = &'a String>) -> String {
    let mut sorted: Vec<&String> = ids.into_iter().collect();
    sorted.sort();
    let mut h = Sha256::new();
    for id in sorted {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    h.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub views: Vec<String>,
    pub network: HeadNetwork,
    pub standardizers: Option<Vec<Standardizer>>,
    pub sgd: SgdConfig,
    pub init_seed: u64,
    pub training_fingerprint: String,
    pub training_size: usize,
    /// Training-set speakers, sorted; the speaker head's class order.
    pub speaker_vocab: Vec<String>,
    pub final_losses: StepLosses,
    /// Training accuracy of the adversarial head (DANN only).
    pub speaker_head_accuracy: Option<f64>,
}

impl TrainedModel {
    pub fn inputs<S: AsRef<str>>(&self, data: &Dataset, ids: &[S]) -> Result<Vec<Matrix>> {
        gather_inputs(data, &self.views, ids, self.standardizers.as_deref())
    }

    pub fn represent<S: AsRef<str>>(&self, data: &Dataset, ids: &[S]) -> Result<Matrix> {
        self.network.represent(&self.inputs(data, ids)?)
    }

    pub fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = self.network.tensors();
        if let Some(st) = &self.standardizers {
            for (v, s) in self.views.iter().zip(st) {
                out.push(NamedTensor::vector(
                    format!("standardize.{v}.mean"),
                    &s.mean,
                ));
                out.push(NamedTensor::vector(
                    format!("standardize.{v}.scale"),
                    &s.scale,
                ));
            }
        }
        out
    }

    pub fn sidecar(&self) -> String {
        let spec = &self.spec;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("arm", spec.arm_name());
        kv("projection_dim", spec.projection_dim.to_string());
        kv("projection_relu", spec.projection_relu.to_string());
        kv("lambda_schedule", spec.schedule.to_string());
        kv(
            "adversary_lr_scale",
            format!("{:?}", spec.adversary_lr_scale),
        );
        kv("standardize", spec.standardize.to_string());
        kv("views", self.views.join(";"));
        kv("learning_rate", format!("{:?}", self.sgd.learning_rate));
        kv("batch_size", self.sgd.batch_size.to_string());
        kv("epochs", self.sgd.epochs.to_string());
        kv("shuffle_seed", self.sgd.seed.to_string());
        kv("init_seed", self.init_seed.to_string());
        kv("training_fingerprint", self.training_fingerprint.clone());
        kv("training_size", self.training_size.to_string());
        kv("speaker_vocab", self.speaker_vocab.join(";"));
        kv(
            "final_depression_loss",
            format!("{:?}", self.final_losses.depression),
        );
        if let Some(l) = self.final_losses.speaker {
            kv("final_speaker_loss", format!("{l:?}"));
        }
        if let Some(a) = self.speaker_head_accuracy {
            kv("speaker_head_accuracy", format!("{a:?}"));
        }
        s
    }

    pub fn save(&self, checkpoint: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(&self.tensors(), checkpoint)?;
        let sidecar = sidecar.as_ref();
        std::fs::write(sidecar, self.sidecar()).map_err(|e| Error::io(sidecar, e))
    }

    pub fn load(checkpoint: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<Self> {
        let sidecar = sidecar.as_ref();
        let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::parse(sidecar, i + 1, "expected `key = value`"))?;
            kv.insert(k.trim().to_owned(), v.to_owned());
        }
        let get = |k: &str| {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::parse(sidecar, 0, format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::parse(sidecar, 0, format!("bad number for {k}")))
        };
        let list = |k: &str| -> Result<Vec<String>> {
            let v = get(k)?;
            Ok(if v.is_empty() {
                Vec::new()
            } else {
                v.split(';').map(str::to_owned).collect()
            })
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|_| Error::parse(sidecar, 0, format!("bad flag for {k}")))
        };
        let mut spec = ModelSpec::parse_arm(get("arm")?)?;
        spec.projection_dim = num("projection_dim")? as usize;
        spec.projection_relu = flag("projection_relu")?;
        spec.schedule = get("lambda_schedule")?.parse()?;
        spec.adversary_lr_scale = num("adversary_lr_scale")?;
        spec.standardize = flag("standardize")?;
        let views = list("views")?;
        spec.views = views.clone();
        let sgd = SgdConfig {
            learning_rate: num("learning_rate")?,
            batch_size: num("batch_size")? as usize,
            epochs: num("epochs")? as usize,
            seed: get("shuffle_seed")?
                .parse()
                .map_err(|_| Error::parse(sidecar, 0, "bad shuffle_seed"))?,
        };
        let speaker_vocab = list("speaker_vocab")?;

        let tensors = read_checkpoint(checkpoint)?;
        let dims: Vec<usize> = match spec.family {
            HeadFamily::ConcatViews => {
                // widths are not stored; recover the total from the first layer
                let total = tensors
                    .iter()
                    .find(|t| t.name == "projection.weight" || t.name == "depression.weight")
                    .map(|t| t.value.cols())
                    .ok_or_else(|| Error::Validation("checkpoint lacks input layer".into()))?;
                let mut d = vec![0; views.len()];
                d[0] = total;
                d
            }
            _ => {
                let first = tensors
                    .iter()
                    .find(|t| t.name == "projection.weight" || t.name == "depression.weight")
                    .map(|t| t.value.cols())
                    .ok_or_else(|| Error::Validation("checkpoint lacks input layer".into()))?;
                vec![first; views.len()]
            }
        };
        let mut network =
            HeadNetwork::new(&spec, &dims, speaker_vocab.len(), &mut SplitMix64::new(0))?;
        network.load_tensors(&tensors)?;
        let standardizers = if spec.standardize {
            let mut out = Vec::new();
            for v in &views {
                let find = |suffix: &str| {
                    tensors
                        .iter()
                        .find(|t| t.name == format!("standardize.{v}.{suffix}"))
                        .map(|t| t.value.as_slice().to_vec())
                        .ok_or_else(|| {
                            Error::Validation(format!("checkpoint lacks standardize.{v}.{suffix}"))
                        })
                };
                out.push(Standardizer {
                    mean: find("mean")?,
                    scale: find("scale")?,
                });
            }
            Some(out)
        } else {
            None
        };
        Ok(Self {
            spec,
            views,
            network,
            standardizers,
            sgd,
            init_seed: get("init_seed")?
                .parse()
                .map_err(|_| Error::parse(sidecar, 0, "bad init_seed"))?,
            training_fingerprint: get("training_fingerprint")?.to_owned(),
            training_size: num("training_size")? as usize,
            speaker_vocab,
            final_losses: StepLosses {
                depression: num("final_depression_loss")?,
                speaker: kv.get("final_speaker_loss").and_then(|v| v.parse().ok()),
            },
            speaker_head_accuracy: kv.get("speaker_head_accuracy").and_then(|v| v.parse().ok()),
        })
    }
}

fn gather_inputs<S: AsRef<str>>(
    data: &Dataset,
    views: &[String],
    ids: &[S],
    standardizers: Option<&[Standardizer]>,
) -> Result<Vec<Matrix>> {
    views
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let x = data.pooled_matrix(v, ids)?;
            Ok(match standardizers {
                Some(st) => st[k].apply(&x),
                None => x,
            })
        })
        .collect()
}

fn batch_inputs(inputs: &[Matrix], idx: &[usize]) -> Vec<Matrix> {
    inputs.iter().map(|m| m.select_rows(idx)).collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains a model on the given segments.
pub fn train(
    spec: &ModelSpec,
    data: &Dataset,
    train_ids: &IdSet,
    sgd: &SgdConfig,
    init_seed: u64,
) -> Result<TrainedModel> {
    train_with(spec, data, train_ids, sgd, init_seed, |_, _| {})
}

/// Like [`train`], calling `observe(step, network)` after every update.
pub fn train_with(
    spec: &ModelSpec,
    data: &Dataset,
    train_ids: &IdSet,
    sgd: &SgdConfig,
    init_seed: u64,
    mut observe: impl FnMut(usize, &HeadNetwork),
) -> Result<TrainedModel> {
    sgd.validate()?;
    spec.schedule.validate()?;
    if !(spec.adversary_lr_scale > 0.0 && spec.adversary_lr_scale.is_finite()) {
        return Err(Error::Config(format!(
            "adversary_lr_scale must be positive, got {}",
            spec.adversary_lr_scale
        )));
    }
    if train_ids.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let views = spec.resolve_views(data)?;
    let ids: Vec<&String> = train_ids.iter().collect();
    let mut dep_targets = Vec::with_capacity(ids.len());
    let mut speakers = Vec::with_capacity(ids.len());
    for id in &ids {
        let seg = data
            .manifest
            .get(id)
            .ok_or_else(|| Error::Validation(format!("training segment {id} not in manifest")))?;
        dep_targets.push(seg.label.value.index());
        speakers.push(seg.speaker_id.as_str());
    }
    if dep_targets.iter().all(|&t| t == dep_targets[0]) {
        return Err(Error::Training(format!(
            "training labels are all {}",
            Label::from_index(dep_targets[0]).unwrap()
        )));
    }
    let mut speaker_vocab: Vec<String> = speakers.iter().map(|s| s.to_string()).collect();
    speaker_vocab.sort();
    speaker_vocab.dedup();
    if spec.variant == Variant::Dann && speaker_vocab.len() < 2 {
        return Err(Error::Training(
            "DANN needs at least 2 distinct training speakers".into(),
        ));
    }
    let spk_targets: Vec<usize> = speakers
        .iter()
        .map(|s| {
            speaker_vocab
                .binary_search_by(|v| v.as_str().cmp(s))
                .unwrap()
        })
        .collect();

    let raw = gather_inputs(data, &views, &ids, None)?;
    let standardizers = spec
        .standardize
        .then(|| raw.iter().map(Standardizer::fit).collect::<Vec<_>>());
    let inputs = match &standardizers {
        Some(st) => raw.iter().zip(st).map(|(x, s)| s.apply(x)).collect(),
        None => raw,
    };
    let dims: Vec<usize> = inputs.iter().map(Matrix::cols).collect();

    let mut init_rng = SplitMix64::new(init_seed);
    let mut net = HeadNetwork::new(spec, &dims, speaker_vocab.len(), &mut init_rng)?;
    let mut shuffle_rng = SplitMix64::new(sgd.seed);
    let n = ids.len();
    let batches_per_epoch = n.div_ceil(sgd.batch_size);
    let total_steps = (batches_per_epoch * sgd.epochs) as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    let mut last = StepLosses {
        depression: f64::NAN,
        speaker: None,
    };
    for epoch in 0..sgd.epochs {
        shuffle_rng.shuffle(&mut order);
        for (b, idx) in order.chunks(sgd.batch_size).enumerate() {
            if net.speaker.is_some() {
                net.grl
                    .set_lambda(spec.schedule.at(step as f64 / total_steps))?;
            }
            let batch = batch_inputs(&inputs, idx);
            let dep: Vec<usize> = idx.iter().map(|&i| dep_targets[i]).collect();
            let spk: Vec<usize> = idx.iter().map(|&i| spk_targets[i]).collect();
            let out = net.forward(&batch)?;
            let (losses, grads) = net.backward(&out, &dep, Some(&spk))?;
            if !losses.depression.is_finite() || losses.speaker.is_some_and(|l| !l.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {b}"
                )));
            }
            net.apply_scaled(&grads, sgd.learning_rate, spec.adversary_lr_scale)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
            last = losses;
            step += 1;
            observe(step, &net);
        }
    }

    let speaker_head_accuracy = match &net.speaker {
        Some(head) => {
            let logits = head.infer(&net.represent(&inputs)?)?;
            let hits = (0..n)
                .filter(|&i| argmax(logits.row(i)) == spk_targets[i])
                .count();
            Some(hits as f64 / n as f64)
        }
        None => None,
    };

    Ok(TrainedModel {
        spec: ModelSpec {
            views: views.clone(),
            ..spec.clone()
        },
        views,
        network: net,
        standardizers,
        sgd: *sgd,
        init_seed,
        training_fingerprint: fingerprint(train_ids),
        training_size: n,
        speaker_vocab,
        final_losses: last,
        speaker_head_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepressionPrediction {
    pub segment_id: String,
    /// Softmax over `[not_depressed, depressed]`.
    pub probabilities: [f64; 2],
    pub label: Label,
}

pub fn predict<S: AsRef<str>>(
    model: &TrainedModel,
    data: &Dataset,
    ids: &[S],
) -> Result<Vec<DepressionPrediction>> {
    let logits = model.network.depression_logits(&model.inputs(data, ids)?)?;
    let probs = softmax_rows(&logits);
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let p = probs.row(i);
            DepressionPrediction {
                segment_id: id.as_ref().to_owned(),
                probabilities: [p[0], p[1]],
                label: Label::from_index(argmax(p)).unwrap(),
            }
        })
        .collect())
}

/// Linear softmax classifier from a model's frozen representation to the
/// training-set speakers. The representation is standardized first, so the
/// probe's fixed training budget does not depend on the feature scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProbe {
    pub vocab: Vec<String>,
    pub standardizer: Standardizer,
    pub head: Dense,
}

impl SpeakerProbe {
    pub fn predict<S: AsRef<str>>(
        &self,
        model: &TrainedModel,
        data: &Dataset,
        ids: &[S],
    ) -> Result<Vec<String>> {
        let rep = self.standardizer.apply(&model.represent(data, ids)?);
        let logits = self.head.infer(&rep)?;
        Ok((0..logits.rows())
            .map(|i| self.vocab[argmax(logits.row(i))].clone())
            .collect())
    }
}

/// Fits a dense softmax classifier with minibatch SGD.
pub fn fit_softmax_classifier(
    x: &Matrix,
    targets: &[usize],
    classes: usize,
    sgd: &SgdConfig,
    init_seed: u64,
) -> Result<Dense> {
    sgd.validate()?;
    if x.rows() == 0 {
        return Err(Error::Training("empty training set".into()));
    }
    let mut head = Dense::new(x.cols(), classes, &mut SplitMix64::new(init_seed));
    let mut rng = SplitMix64::new(sgd.seed);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    for epoch in 0..sgd.epochs {
        rng.shuffle(&mut order);
        for (b, idx) in order.chunks(sgd.batch_size).enumerate() {
            let xb = x.select_rows(idx);
            let tb: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let logits = head.forward(&xb)?;
            let (loss, d) = softmax_xent(&logits, &tb)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite probe loss at epoch {epoch}, batch {b}"
                )));
            }
            let g = head.backward(&d)?;
            let ctx = |e: Error| Error::Training(format!("epoch {epoch}, batch {b}: {e}"));
            sgd_step(
                "probe.weight",
                head.weight.as_mut_slice(),
                g.weight.as_slice(),
                sgd.learning_rate,
            )
            .map_err(ctx)?;
            sgd_step("probe.bias", &mut head.bias, &g.bias, sgd.learning_rate).map_err(ctx)?;
        }
    }
    Ok(head)
}

pub fn train_speaker_probe(
    model: &TrainedModel,
    data: &Dataset,
    train_ids: &IdSet,
    sgd: &SgdConfig,
    init_seed: u64,
) -> Result<SpeakerProbe> {
    if train_ids.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let ids: Vec<&String> = train_ids.iter().collect();
    let speakers: Vec<&str> = ids
        .iter()
        .map(|id| {
            data.manifest
                .get(id)
                .map(|s| s.speaker_id.as_str())
                .ok_or_else(|| Error::Validation(format!("segment {id} not in manifest")))
        })
        .collect::<Result<_>>()?;
    let mut vocab: Vec<String> = speakers.iter().map(|s| s.to_string()).collect();
    vocab.sort();
    vocab.dedup();
    let targets: Vec<usize> = speakers
        .iter()
        .map(|s| vocab.binary_search_by(|v| v.as_str().cmp(s)).unwrap())
        .collect();
    let rep = model.represent(data, &ids)?;
    let standardizer = Standardizer::fit(&rep);
    let head = fit_softmax_classifier(
        &standardizer.apply(&rep),
        &targets,
        vocab.len(),
        sgd,
        init_seed,
    )?;
    Ok(SpeakerProbe {
        vocab,
        standardizer,
        head,
    })
}
