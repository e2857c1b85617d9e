//! The two-scenario protocol: every arm is trained on Training Set A
//! (speaker-independent) and Training Set B (speaker-overlapped) and scored
//! on the one shared test set.
//!
//! [`run_experiment`] and the individual subcommand steps share the same
//! functions and file formats, so running `synth`, `split`, `train`,
//! `evaluate` and `report` by hand produces the same `report.txt`.
//!
//! Output directory layout:
//!
//! ```text
//! data/                       synthetic corpus (synth source only)
//! split.txt  audit.txt
//! models/<arm>__<set>.nnc     checkpoint, plus <arm>__<set>.txt sidecar
//! predictions/<arm>__<set>.csv
//! metrics/<arm>__<set>.txt
//! report.txt                  machine-readable report
//! table.txt                   aligned table for people
//! timing.txt                  wall-clock, kept out of report.txt
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::config::{DataSource, ExperimentConfig};
use crate::corpus::Label;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{
    read_predictions, write_predictions, ClassScores, ConfusionMatrix, MetricsReport,
    PredictionRecord,
};
use crate::splitter::{audit_split, build_split, AuditReport, SplitPlan, TrainingSet};
use crate::synth::{generate, write_corpus};
use crate::trainer::{fingerprint, predict, train, train_speaker_probe, ModelSpec, TrainedModel};

pub const SPLIT_FILE: &str = "split.txt";
pub const AUDIT_FILE: &str = "audit.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const TABLE_FILE: &str = "table.txt";
pub const TIMING_FILE: &str = "timing.txt";
pub const DATA_DIR: &str = "data";

/// Speaker ID is measured with a linear probe fitted post hoc on the frozen
/// representation, for every variant.
pub const SPK_PROTOCOL: &str = "post_hoc_linear_probe";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
}

/// One arm trained on one training set and scored on the test set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub arm: String,
    pub training_set: TrainingSet,
    pub training_size: usize,
    pub training_fingerprint: String,
    pub test_fingerprint: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config_echo: String,
    pub audit: AuditReport,
    pub rows: Vec<ReportRow>,
    pub tool_version: String,
    /// Not part of the rendered report, which must be reproducible.
    pub wall_clock: Option<Duration>,
}

impl ExperimentReport {
    pub fn row(&self, arm: &str, set: TrainingSet) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.training_set == set)
    }

    /// Checks the pairing invariants: two rows per arm, one shared test
    /// set, equal training sizes.
    pub fn check(&self) -> Result<()> {
        let mut by_arm: BTreeMap<&str, Vec<&ReportRow>> = BTreeMap::new();
        for r in &self.rows {
            by_arm.entry(&r.arm).or_default().push(r);
        }
        let test_fp = self.rows.first().map(|r| r.test_fingerprint.as_str());
        for (arm, rows) in by_arm {
            let sets: Vec<TrainingSet> = rows.iter().map(|r| r.training_set).collect();
            if sets.len() != 2 || !sets.contains(&TrainingSet::A) || !sets.contains(&TrainingSet::B)
            {
                return Err(Error::Validation(format!(
                    "arm {arm} needs exactly one row per training set"
                )));
            }
            if rows[0].training_size != rows[1].training_size {
                return Err(Error::Validation(format!(
                    "arm {arm}: training sizes differ ({} vs {})",
                    rows[0].training_size, rows[1].training_size
                )));
            }
            if rows
                .iter()
                .any(|r| Some(r.test_fingerprint.as_str()) != test_fp)
            {
                return Err(Error::Validation(format!(
                    "arm {arm} was scored on a different test set"
                )));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# experiment report");
        let _ = writeln!(s, "tool_version = {}", self.tool_version);
        let _ = writeln!(s, "spk_id_protocol = {SPK_PROTOCOL}");
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.config_echo);
        let a = &self.audit;
        let _ = writeln!(s, "\n[split_audit]");
        let _ = writeln!(s, "violations = {}", a.violations.len());
        let _ = writeln!(s, "set_a_size = {}", a.set_a_size);
        let _ = writeln!(s, "set_b_size = {}", a.set_b_size);
        let _ = writeln!(s, "size_match = {}", a.set_a_size == a.set_b_size);
        let _ = writeln!(s, "test_size = {}", a.test_size);
        let _ = writeln!(s, "test_speakers = {}", a.test_speakers);
        let _ = writeln!(s, "overlap_a = {}", a.overlap_a);
        let _ = writeln!(s, "overlap_b = {}", a.overlap_b);
        for r in &self.rows {
            let _ = writeln!(s, "\n[row]");
            s.push_str(&render_row(r));
        }
        s
    }

    /// Aligned text table, one line per row.
    pub fn table(&self) -> String {
        let header = [
            "Head",
            "Featurizer",
            "Variant",
            "Training Set",
            "Dep Macro F1 ↑",
            "Dep Cls Acc ↑",
            "Spk ID Acc ↓",
        ];
        let mut lines: Vec<[String; 7]> = vec![header.map(String::from)];
        for r in &self.rows {
            let parts: Vec<&str> = r.arm.split('/').collect();
            let set = match r.training_set {
                TrainingSet::A => "A (No Speaker Overlap)",
                TrainingSet::B => "B (Speaker Overlap)",
            };
            lines.push([
                parts.first().copied().unwrap_or("").to_string(),
                parts.get(1).copied().unwrap_or("").to_string(),
                parts.get(2).copied().unwrap_or("").to_string(),
                set.to_string(),
                format!("{:.4}", r.metrics.dep_macro_f1),
                format!("{:.2}%", 100.0 * r.metrics.dep_accuracy),
                format!("{:.2}%", 100.0 * r.metrics.spk_id_accuracy),
            ]);
        }
        let mut widths = [0usize; 7];
        for l in &lines {
            for (w, c) in widths.iter_mut().zip(l) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut s = String::new();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(s, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(s, "{}", "-".repeat(widths.iter().sum::<usize>() + 12));
            }
        }
        if let Some(r) = self.rows.first() {
            let _ = writeln!(
                s,
                "\nSpeaker ID chance level: {:.2}% (1/{} test speakers); |Set A| = |Set B| = {}",
                100.0 * r.metrics.chance_level,
                r.metrics.n_speakers,
                r.training_size
            );
        }
        s
    }
}

fn render_row(r: &ReportRow) -> String {
    let m = &r.metrics;
    let mut s = String::new();
    let _ = writeln!(s, "arm = {}", r.arm);
    let _ = writeln!(s, "training_set = {}", r.training_set);
    let _ = writeln!(s, "training_size = {}", r.training_size);
    let _ = writeln!(s, "training_fingerprint = {}", r.training_fingerprint);
    let _ = writeln!(s, "test_fingerprint = {}", r.test_fingerprint);
    let _ = writeln!(s, "dep_macro_f1 = {:?}", m.dep_macro_f1);
    let _ = writeln!(s, "dep_accuracy = {:?}", m.dep_accuracy);
    let _ = writeln!(s, "spk_id_accuracy = {:?}", m.spk_id_accuracy);
    let _ = writeln!(s, "chance_level = {:?}", m.chance_level);
    let _ = writeln!(s, "n_speakers = {}", m.n_speakers);
    let _ = writeln!(s, "n_segments = {}", m.n_segments);
    for (c, sc) in m.per_class.iter().enumerate() {
        let name = Label::from_index(c).unwrap();
        let _ = writeln!(s, "precision_{name} = {:?}", sc.precision);
        let _ = writeln!(s, "recall_{name} = {:?}", sc.recall);
        let _ = writeln!(s, "f1_{name} = {:?}", sc.f1);
        let _ = writeln!(s, "support_{name} = {}", sc.support);
    }
    let cm: Vec<String> = (0..m.confusion.classes())
        .map(|i| {
            (0..m.confusion.classes())
                .map(|j| m.confusion.get(i, j).to_string())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let _ = writeln!(s, "confusion = {}", cm.join(" | "));
    s
}

fn parse_row(text: &str, path: &Path) -> Result<ReportRow> {
    let mut kv = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::parse(path, i + 1, "expected `key = value`"))?;
        kv.insert(k, v);
    }
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| Error::parse(path, 0, format!("missing key {k}")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::parse(path, 0, format!("bad number for {k}")))
    };
    let int = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::parse(path, 0, format!("bad integer for {k}")))
    };
    let rows: Vec<Vec<u64>> = get("confusion")?
        .split(" | ")
        .map(|r| {
            r.split(' ')
                .map(|v| {
                    v.parse::<u64>()
                        .map_err(|_| Error::parse(path, 0, "bad confusion"))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let confusion = ConfusionMatrix::from_rows(&rows)?;
    let per_class = (0..Label::COUNT)
        .map(|c| {
            let name = Label::from_index(c).unwrap();
            Ok(ClassScores {
                precision: num(&format!("precision_{name}"))?,
                recall: num(&format!("recall_{name}"))?,
                f1: num(&format!("f1_{name}"))?,
                support: int(&format!("support_{name}"))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ReportRow {
        arm: get("arm")?.to_owned(),
        training_set: get("training_set")?.parse()?,
        training_size: int("training_size")? as usize,
        training_fingerprint: get("training_fingerprint")?.to_owned(),
        test_fingerprint: get("test_fingerprint")?.to_owned(),
        metrics: MetricsReport {
            dep_macro_f1: num("dep_macro_f1")?,
            dep_accuracy: num("dep_accuracy")?,
            spk_id_accuracy: num("spk_id_accuracy")?,
            chance_level: num("chance_level")?,
            n_speakers: int("n_speakers")? as usize,
            n_segments: int("n_segments")? as usize,
            per_class,
            confusion,
        },
    })
}

/// File stem for an arm on a training set, e.g. `single_view_probe-frozen-dann__B`.
pub fn run_stem(arm: &str, set: TrainingSet) -> String {
    format!("{}__{}", arm.replace('/', "-"), set)
}

pub fn model_paths(out: &Path, arm: &str, set: TrainingSet) -> (PathBuf, PathBuf) {
    let stem = run_stem(arm, set);
    let dir = out.join("models");
    (
        dir.join(format!("{stem}.nnc")),
        dir.join(format!("{stem}.txt")),
    )
}

pub fn metrics_path(out: &Path, arm: &str, set: TrainingSet) -> PathBuf {
    out.join("metrics")
        .join(format!("{}.txt", run_stem(arm, set)))
}

pub fn predictions_path(out: &Path, arm: &str, set: TrainingSet) -> PathBuf {
    out.join("predictions")
        .join(format!("{}.csv", run_stem(arm, set)))
}

/// Loads or generates the dataset named by the config.
pub fn load_data(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.data {
        DataSource::Synth(c) => Ok(generate(c)?.data),
        DataSource::Dir(d) => Dataset::load_dir(d),
    }
}

/// Builds and audits the split; a plan that fails its own audit is an error.
pub fn make_split(config: &ExperimentConfig, data: &Dataset) -> Result<(SplitPlan, AuditReport)> {
    let plan = build_split(&data.manifest, &config.split)?;
    let audit = checked_audit(data, &plan)?;
    Ok((plan, audit))
}

/// Audits a plan and refuses it if any invariant is violated.
pub fn checked_audit(data: &Dataset, plan: &SplitPlan) -> Result<AuditReport> {
    let audit = audit_split(&data.manifest, plan)?;
    if audit.is_clean() {
        Ok(audit)
    } else {
        Err(Error::Validation(format!("split audit failed:\n{audit}")))
    }
}

pub fn train_arm(
    config: &ExperimentConfig,
    spec: &ModelSpec,
    data: &Dataset,
    plan: &SplitPlan,
    set: TrainingSet,
) -> Result<TrainedModel> {
    train(
        spec,
        data,
        &plan.training_set(set),
        &config.sgd,
        config.init_seed,
    )
}

/// Scores a trained model on the test set. The speaker probe is fitted on
/// the model's own training set.
pub fn evaluate_arm(
    config: &ExperimentConfig,
    model: &TrainedModel,
    data: &Dataset,
    plan: &SplitPlan,
    set: TrainingSet,
) -> Result<(ReportRow, Vec<PredictionRecord>)> {
    let training = plan.training_set(set);
    if fingerprint(&training) != model.training_fingerprint {
        return Err(Error::Validation(format!(
            "model was not trained on Training Set {set} of this split"
        )));
    }
    let test: Vec<&String> = plan.test.iter().collect();
    let preds = predict(model, data, &test)?;
    let probe = train_speaker_probe(
        model,
        data,
        &training,
        &config.probe_sgd,
        config.probe_init_seed,
    )?;
    let speakers = probe.predict(model, data, &test)?;
    let records: Vec<PredictionRecord> = preds
        .into_iter()
        .zip(speakers)
        .map(|(p, spk)| {
            let seg = data.manifest.get(&p.segment_id).unwrap();
            PredictionRecord {
                segment_id: p.segment_id,
                true_label: seg.label.value,
                pred_label: p.label,
                true_speaker: seg.speaker_id.clone(),
                pred_speaker: Some(spk),
            }
        })
        .collect();
    let row = ReportRow {
        arm: model.spec.arm_name(),
        training_set: set,
        training_size: model.training_size,
        training_fingerprint: model.training_fingerprint.clone(),
        test_fingerprint: fingerprint(&plan.test),
        metrics: MetricsReport::from_records(&records)?,
    };
    Ok((row, records))
}

pub fn assemble_report(
    config: &ExperimentConfig,
    audit: AuditReport,
    mut rows: Vec<ReportRow>,
) -> Result<ExperimentReport> {
    let order: Vec<String> = config.arms.iter().map(ModelSpec::arm_name).collect();
    rows.sort_by_key(|r| {
        (
            order.iter().position(|a| *a == r.arm).unwrap_or(usize::MAX),
            r.training_set,
        )
    });
    let report = ExperimentReport {
        config_echo: config.render(),
        audit,
        rows,
        tool_version: crate::VERSION.to_string(),
        wall_clock: None,
    };
    report.check()?;
    for arm in &order {
        if report.row(arm, TrainingSet::A).is_none() {
            return Err(Error::Validation(format!("no results for arm {arm}")));
        }
    }
    Ok(report)
}

/// Tracks files written during a run so a failed run leaves nothing behind.
#[derive(Default)]
struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

impl Outputs {
    fn mkdir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut d = Some(dir);
        while let Some(p) = d {
            if p.as_os_str().is_empty() || p.exists() {
                break;
            }
            missing.push(p.to_path_buf());
            d = p.parent();
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.dirs.extend(missing.into_iter().rev());
        Ok(())
    }

    fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(parent) = path.parent() {
            self.mkdir(parent)?;
        }
        std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
        self.files.push(path.to_path_buf());
        Ok(())
    }

    fn track(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    fn remove_all(self) {
        for f in self.files.iter().rev() {
            let _ = std::fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = std::fs::remove_dir_all(d);
        }
    }
}

/// Runs every stage end to end and writes the output directory.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    let mut outputs = Outputs::default();
    match run_inner(plan, &mut outputs) {
        Ok(r) => Ok(r),
        Err(e) => {
            outputs.remove_all();
            Err(e)
        }
    }
}

fn run_inner(plan: &ExperimentPlan, outputs: &mut Outputs) -> Result<ExperimentReport> {
    let started = Instant::now();
    let config = &plan.config;
    let out = &plan.out_dir;
    outputs.mkdir(out)?;

    let data = match &config.data {
        DataSource::Synth(c) => {
            let corpus = generate(c).map_err(|e| e.in_stage("synth"))?;
            let dir = out.join(DATA_DIR);
            outputs.mkdir(&dir)?;
            write_corpus(&corpus, &dir).map_err(|e| e.in_stage("synth"))?;
            corpus.data
        }
        DataSource::Dir(d) => Dataset::load_dir(d).map_err(|e| e.in_stage("data"))?,
    };

    let split = build_split(&data.manifest, &config.split).map_err(|e| e.in_stage("split"))?;
    outputs.write(&out.join(SPLIT_FILE), crate::splitter::render_split(&split))?;
    let audit = audit_split(&data.manifest, &split).map_err(|e| e.in_stage("audit"))?;
    outputs.write(&out.join(AUDIT_FILE), audit.to_string())?;
    if !audit.is_clean() {
        return Err(Error::Validation(format!("split audit failed:\n{audit}")).in_stage("audit"));
    }

    let jobs: Vec<(&ModelSpec, TrainingSet)> = config
        .arms
        .iter()
        .flat_map(|a| TrainingSet::BOTH.map(|s| (a, s)))
        .collect();
    let results: Vec<Result<(TrainedModel, ReportRow, Vec<PredictionRecord>)>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|&(spec, set)| {
                    let (data, split) = (&data, &split);
                    scope.spawn(move || {
                        let model = train_arm(config, spec, data, split, set)
                            .map_err(|e| e.in_stage("train"))?;
                        let (row, records) = evaluate_arm(config, &model, data, split, set)
                            .map_err(|e| e.in_stage("evaluate"))?;
                        Ok((model, row, records))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect()
        });

    let mut rows = Vec::new();
    for r in results {
        let (model, row, records) = r?;
        let (ckpt, sidecar) = model_paths(out, &row.arm, row.training_set);
        outputs.mkdir(ckpt.parent().unwrap())?;
        model
            .save(&ckpt, &sidecar)
            .map_err(|e| e.in_stage("train"))?;
        outputs.track(ckpt);
        outputs.track(sidecar);
        let pp = predictions_path(out, &row.arm, row.training_set);
        outputs.mkdir(pp.parent().unwrap())?;
        write_predictions(&records, &pp)?;
        outputs.track(pp);
        outputs.write(
            &metrics_path(out, &row.arm, row.training_set),
            render_row(&row),
        )?;
        rows.push(row);
    }

    let mut report = assemble_report(config, audit, rows).map_err(|e| e.in_stage("report"))?;
    outputs.write(&out.join(REPORT_FILE), report.render())?;
    outputs.write(&out.join(TABLE_FILE), report.table())?;
    let elapsed = started.elapsed();
    outputs.write(
        &out.join(TIMING_FILE),
        format!("wall_clock_seconds = {:.3}\n", elapsed.as_secs_f64()),
    )?;
    report.wall_clock = Some(elapsed);
    Ok(report)
}

/// Step-by-step pieces used by the command-line subcommands.
pub mod steps {
    use super::*;
    use crate::splitter::{read_split, write_split};

    fn mkdir(dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }

    pub fn synth(config: &ExperimentConfig, data_dir: &Path) -> Result<()> {
        let DataSource::Synth(c) = &config.data else {
            return Err(Error::Config("`synth` needs [data] source = synth".into()));
        };
        mkdir(data_dir)?;
        write_corpus(&generate(c)?, data_dir)
    }

    pub fn data(config: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Dataset> {
        match data_dir {
            Some(d) => Dataset::load_dir(d),
            None => load_data(config),
        }
    }

    pub fn split(config: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<AuditReport> {
        let (plan, audit) = make_split(config, data)?;
        mkdir(out)?;
        write_split(&plan, out.join(SPLIT_FILE))?;
        let p = out.join(AUDIT_FILE);
        std::fs::write(&p, audit.to_string()).map_err(|e| Error::io(&p, e))?;
        Ok(audit)
    }

    pub fn audit(data: &Dataset, plan_path: &Path) -> Result<AuditReport> {
        audit_split(&data.manifest, &read_split(plan_path)?)
    }

    pub fn train(
        config: &ExperimentConfig,
        data: &Dataset,
        plan_path: &Path,
        arm: &str,
        set: TrainingSet,
        out: &Path,
    ) -> Result<TrainedModel> {
        let spec = config
            .arms
            .iter()
            .find(|a| a.arm_name() == arm)
            .ok_or_else(|| Error::Config(format!("arm {arm} is not listed in the config")))?;
        let plan = read_split(plan_path)?;
        checked_audit(data, &plan)?;
        let model = train_arm(config, spec, data, &plan, set)?;
        let (ckpt, sidecar) = model_paths(out, arm, set);
        mkdir(ckpt.parent().unwrap())?;
        model.save(ckpt, sidecar)?;
        Ok(model)
    }

    pub fn evaluate(
        config: &ExperimentConfig,
        data: &Dataset,
        plan_path: &Path,
        arm: &str,
        set: TrainingSet,
        out: &Path,
    ) -> Result<ReportRow> {
        let plan = read_split(plan_path)?;
        checked_audit(data, &plan)?;
        let (ckpt, sidecar) = model_paths(out, arm, set);
        let model = TrainedModel::load(ckpt, sidecar)?;
        let (row, records) = evaluate_arm(config, &model, data, &plan, set)?;
        let pp = predictions_path(out, arm, set);
        mkdir(pp.parent().unwrap())?;
        write_predictions(&records, &pp)?;
        let mp = metrics_path(out, arm, set);
        mkdir(mp.parent().unwrap())?;
        std::fs::write(&mp, render_row(&row)).map_err(|e| Error::io(&mp, e))?;
        Ok(row)
    }

    /// Rebuilds a row's metrics from a prediction record file.
    pub fn rescore(predictions: &Path) -> Result<MetricsReport> {
        MetricsReport::from_records(&read_predictions(predictions)?)
    }

    pub fn report(
        config: &ExperimentConfig,
        data: &Dataset,
        plan_path: &Path,
        out: &Path,
    ) -> Result<ExperimentReport> {
        let plan = read_split(plan_path)?;
        let audit = checked_audit(data, &plan)?;
        let mut rows = Vec::new();
        for spec in &config.arms {
            for set in TrainingSet::BOTH {
                let p = metrics_path(out, &spec.arm_name(), set);
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                rows.push(parse_row(&text, &p)?);
            }
        }
        let report = assemble_report(config, audit, rows)?;
        for (name, body) in [(REPORT_FILE, report.render()), (TABLE_FILE, report.table())] {
            let p = out.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(report)
    }
}
