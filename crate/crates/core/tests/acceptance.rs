//! Acceptance suite. Runs each criterion in order, prints one line per
//! criterion and exits non-zero if any of them fails.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use leakbench::config::ExperimentConfig;
use leakbench::corpus::Label;
use leakbench::dataset::Dataset;
use leakbench::experiment::{
    load_data, make_split, run_experiment, ExperimentPlan, ExperimentReport,
};
use leakbench::metrics::{accuracy, macro_f1, speaker_id_accuracy, ConfusionMatrix, OOV};
use leakbench::nn::{GradientReversal, NamedTensor, SgdConfig};
use leakbench::rng::SplitMix64;
use leakbench::splitter::{
    audit_split, build_split, select_target_speakers, speaker_overlap, HalvingRule, IdSet,
    SplitConfig, SplitPlan, TrainingSet,
};
use leakbench::synth::{generate, SynthConfig};
use leakbench::trainer::{train_with, LambdaSchedule, ModelSpec};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

// 1. Split exactness on a full-scale manifest.

fn full_scale_manifest() -> (leakbench::corpus::Manifest, SplitConfig) {
    let cfg = SplitConfig::new(0, 38);
    let placeholder = manifest_from_counts(&[2; 189]);
    let targets = select_target_speakers(&placeholder, &cfg).unwrap();
    let (mut t, mut c) = (0, 0);
    let counts: Vec<usize> = placeholder
        .speakers()
        .map(|spk| {
            if targets.contains(spk) {
                t += 1;
                // 30 × 38 + 8 × 36 = 1,428, all even.
                if t <= 30 {
                    38
                } else {
                    36
                }
            } else {
                c += 1;
                // 134 × 34 + 17 × 33 = 5,117.
                if c <= 134 {
                    34
                } else {
                    33
                }
            }
        })
        .collect();
    (manifest_from_counts(&counts), cfg)
}

fn split_exactness() -> Outcome {
    let (m, cfg) = full_scale_manifest();
    ensure(m.len() == 6545, || {
        format!("manifest has {} segments", m.len())
    })?;
    let plan = build_split(&m, &cfg).map_err(|e| e.to_string())?;
    let target_total: usize = plan
        .target_speakers
        .iter()
        .map(|s| m.speaker_segments(s).count())
        .sum();
    ensure(target_total == 1428, || {
        format!("targets hold {target_total}")
    })?;
    let got = [
        plan.test.len(),
        plan.subtarget.len(),
        plan.subcontrol_a.len(),
        plan.subcontrol_b.len(),
        plan.training_set_a().len(),
        plan.training_set_b().len(),
    ];
    let want = [714, 714, 4403, 714, 5117, 5117];
    ensure(got == want, || format!("sizes {got:?}, expected {want:?}"))?;
    let overlap =
        speaker_overlap(&m, &plan.training_set_a(), &plan.test).map_err(|e| e.to_string())?;
    ensure(overlap.is_empty(), || {
        format!("{} speakers overlap", overlap.len())
    })?;
    Ok(format!(
        "test {} subtarget {} subcontrol_a {} subcontrol_b {} |A| {} |B| {}",
        got[0], got[1], got[2], got[3], got[4], got[5]
    ))
}

// 2. Split property suite.

fn check_plan(m: &leakbench::corpus::Manifest, plan: &SplitPlan, nt: usize) -> Result<(), String> {
    let report = audit_split(m, plan).map_err(|e| e.to_string())?;
    ensure(report.is_clean(), || report.to_string())?;
    let (a, b) = (plan.training_set_a(), plan.training_set_b());
    ensure(a.len() == b.len(), || "training sets differ in size".into())?;
    ensure(plan.target_speakers.len() == nt, || {
        "wrong target count".into()
    })?;
    ensure(plan.test.is_disjoint(&plan.subtarget), || {
        "test meets subtarget".into()
    })?;
    ensure(plan.subcontrol_a.is_disjoint(&plan.subcontrol_b), || {
        "subcontrols meet".into()
    })?;
    ensure(plan.subcontrol_b.len() == plan.subtarget.len(), || {
        "subcontrol_b not size-matched".into()
    })?;
    let overlap = speaker_overlap(m, &a, &plan.test).map_err(|e| e.to_string())?;
    ensure(overlap.is_empty(), || {
        "Set A shares speakers with test".into()
    })?;
    for spk in &plan.target_speakers {
        let n = m.speaker_segments(spk).count();
        let t = m
            .speaker_segments(spk)
            .filter(|s| plan.test.contains(&s.segment_id))
            .count();
        ensure(t == n.div_ceil(2), || format!("{spk}: {t} of {n} in test"))?;
    }
    let all: BTreeSet<&String> = m.segments().iter().map(|s| &s.segment_id).collect();
    let covered: BTreeSet<&String> = plan
        .test
        .iter()
        .chain(&plan.subtarget)
        .chain(&plan.subcontrol_a)
        .chain(&plan.subcontrol_b)
        .collect();
    ensure(covered == all, || "pools do not cover the manifest".into())
}

fn split_properties() -> Outcome {
    let mut rng = SplitMix64::new(2024);
    let (mut built, mut rejected) = (0, 0);
    for case in 0..200 {
        let n = 5 + rng.below(56) as usize;
        let counts: Vec<usize> = (0..n).map(|_| 2 + rng.below(39) as usize).collect();
        let nt = 1 + rng.below((n / 3) as u64) as usize;
        let cfg = SplitConfig {
            halving_rule: if rng.below(2) == 0 {
                HalvingRule::RandomWithinSpeaker
            } else {
                HalvingRule::FirstHalfTemporal
            },
            ..SplitConfig::new(rng.next_u64(), nt)
        };
        let m = manifest_from_counts(&counts);
        let plan = match build_split(&m, &cfg) {
            Ok(p) => p,
            Err(e) if e.is_validation() => {
                rejected += 1;
                continue;
            }
            Err(e) => return Err(format!("case {case}: {e}")),
        };
        check_plan(&m, &plan, nt).map_err(|e| format!("case {case}: {e}"))?;
        let again = build_split(&m, &cfg).map_err(|e| e.to_string())?;
        ensure(again == plan, || format!("case {case}: second run differs"))?;
        built += 1;
    }
    Ok(format!(
        "{built} plans audited clean, {rejected} rejected as too small"
    ))
}

// 3. Gradient correctness.

type Check = fn(u64) -> f64;

fn gradient_checks() -> Outcome {
    let ops: [(&str, Check); 5] = [
        ("dense", check_dense),
        ("softmax_xent", check_softmax_xent),
        ("aggregator", check_aggregator),
        ("grl_composite", check_grl_composite),
        ("projection_stack", check_projection_stack),
    ];
    let mut worst = Vec::new();
    for (name, check) in ops {
        let mut max = 0.0f64;
        for seed in 0..50 {
            let e = check(1000 + seed);
            ensure(e <= REL_TOL, || {
                format!("{name} seed {seed}: relative error {e:e}")
            })?;
            max = max.max(e);
        }
        worst.push(format!("{name} {max:.1e}"));
    }
    Ok(format!("50 checks per op, worst: {}", worst.join(", ")))
}

// 4. GRL contract.

fn trajectory(
    spec: &ModelSpec,
    data: &Dataset,
    ids: &IdSet,
) -> Result<Vec<Vec<NamedTensor>>, String> {
    let sgd = SgdConfig {
        learning_rate: 0.05,
        batch_size: 10,
        epochs: 4,
        seed: 5,
    };
    let mut steps = Vec::new();
    train_with(spec, data, ids, &sgd, 8, |_, net| steps.push(net.tensors()))
        .map_err(|e| e.to_string())?;
    Ok(steps)
}

fn grl_contract() -> Outcome {
    let mut rng = SplitMix64::new(77);
    for case in 0..100 {
        let x = random_matrix(
            1 + rng.below(8) as usize,
            1 + rng.below(8) as usize,
            &mut rng,
        );
        let lambda = rng.uniform(0.0, 5.0);
        let grl = GradientReversal::new(lambda).map_err(|e| e.to_string())?;
        let y = grl.forward(&x);
        let same = x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("case {case}: forward is not the identity"))?;
        let dy = random_matrix(x.rows(), x.cols(), &mut rng);
        let dx = grl.backward(&dy);
        let exact = dx
            .as_slice()
            .iter()
            .zip(dy.as_slice())
            .all(|(g, u)| *g == -lambda * u);
        ensure(exact, || {
            format!("case {case}: backward is not -lambda * dy")
        })?;
    }

    let data = generate(&SynthConfig {
        seed: 6,
        n_speakers: 10,
        segments_per_speaker: 6,
        dim: 5,
        n_views: 2,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?
    .data;
    let ids: IdSet = data
        .manifest
        .segments()
        .iter()
        .map(|s| s.segment_id.clone())
        .collect();
    let mut worst = 0.0f64;
    for family in ["single_view_probe", "concat_views", "weighted_views"] {
        let arm =
            |v: &str| ModelSpec::parse_arm(&format!("{family}/trainable_projection/{v}")).unwrap();
        let (mut orig, mut dann) = (arm("original"), arm("dann"));
        orig.projection_relu = true;
        dann.projection_relu = true;
        dann.schedule = LambdaSchedule::Constant(0.0);
        let a = trajectory(&orig, &data, &ids)?;
        let b = trajectory(&dann, &data, &ids)?;
        ensure(a.len() >= 20 && b.len() >= 20, || {
            "fewer than 20 steps".into()
        })?;
        for (ta, tb) in a.iter().zip(&b).take(20) {
            for t in ta {
                let u = tb
                    .iter()
                    .find(|u| u.name == t.name)
                    .ok_or("missing tensor")?;
                for (x, y) in t.value.as_slice().iter().zip(u.value.as_slice()) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-12, || {
        format!("trajectories differ by {worst:e}")
    })?;
    Ok(format!(
        "100 matrices exact; lambda=0 trajectories differ by at most {worst:e}"
    ))
}

// 5. Metric oracle.

fn reference(rows: &[Vec<u64>]) -> (f64, f64) {
    let k = rows.len();
    let mut pairs = Vec::new();
    for (t, row) in rows.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((t, p), n as usize));
        }
    }
    let mut f1 = 0.0;
    for c in 0..k {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
        let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
        f1 += if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
    }
    let correct = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    (f1 / k as f64, correct / pairs.len() as f64)
}

fn metric_oracle() -> Outcome {
    let mut rng = SplitMix64::new(5);
    let mut done = 0;
    while done < 1000 {
        let k = 2 + rng.below(4) as usize;
        let rows: Vec<Vec<u64>> = (0..k)
            .map(|_| (0..k).map(|_| rng.below(30)).collect())
            .collect();
        if rows.iter().flatten().sum::<u64>() == 0 {
            continue;
        }
        let cm = ConfusionMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
        let (f1, acc) = reference(&rows);
        let got_f1 = macro_f1(&cm).map_err(|e| e.to_string())?;
        let got_acc = accuracy(&cm).map_err(|e| e.to_string())?;
        ensure((got_f1 - f1).abs() <= 1e-12, || {
            format!("macro F1 {got_f1} vs {f1}")
        })?;
        ensure((got_acc - acc).abs() <= 1e-12, || {
            format!("accuracy {got_acc} vs {acc}")
        })?;
        done += 1;
    }
    let truths: Vec<String> = (0..38).map(|s| format!("s{s}")).collect();
    let preds = vec![Some(OOV); truths.len()];
    let score = speaker_id_accuracy(&preds, &truths).map_err(|e| e.to_string())?;
    ensure(score.chance_level == 1.0 / 38.0, || {
        format!("chance {}", score.chance_level)
    })?;
    let shown = format!("{:.2}%", pct(score.chance_level));
    ensure(shown == "2.63%", || format!("chance shown as {shown}"))?;
    Ok(format!(
        "1000 matrices within 1e-12; chance for 38 speakers {shown}"
    ))
}

// 6 and 7 share one run of the frozen leakage experiment.

const ORIGINAL: &str = "single_view_probe/trainable_projection/original";
const DANN: &str = "single_view_probe/trainable_projection/dann";

// Recorded by the pre-registered run at master_seed 0, in percent.
const RECORDED_A_DEP_ACC: f64 = 40.0;
const RECORDED_B_DEP_ACC: f64 = 98.125;
const RECORDED_B_SPK_ID: f64 = 100.0;
const TOLERANCE: f64 = 5.0;

fn leakage_report() -> Result<ExperimentReport, String> {
    let config =
        ExperimentConfig::load(config_path("leakage.ini"), None).map_err(|e| e.to_string())?;
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_experiment(&ExperimentPlan {
        config,
        out_dir: out.path().to_path_buf(),
    })
    .map_err(|e| e.to_string())
}

fn metrics(report: &ExperimentReport, arm: &str, set: TrainingSet) -> Result<(f64, f64), String> {
    let row = report
        .row(arm, set)
        .ok_or_else(|| format!("no row for {arm} set {set}"))?;
    Ok((
        pct(row.metrics.dep_accuracy),
        pct(row.metrics.spk_id_accuracy),
    ))
}

fn near(name: &str, got: f64, recorded: f64) -> Result<(), String> {
    ensure((got - recorded).abs() <= TOLERANCE, || {
        format!("{name} {got:.2} is outside {recorded:.2} ± {TOLERANCE}")
    })
}

fn leakage_gap(report: &ExperimentReport) -> Outcome {
    let (a_dep, a_spk) = metrics(report, ORIGINAL, TrainingSet::A)?;
    let (b_dep, b_spk) = metrics(report, ORIGINAL, TrainingSet::B)?;
    ensure(b_dep >= a_dep + 20.0, || {
        format!("Set B {b_dep:.2} is not 20 points above Set A {a_dep:.2}")
    })?;
    ensure(b_spk >= 80.0, || format!("Set B speaker probe {b_spk:.2}"))?;
    ensure(a_spk == 0.0, || format!("Set A speaker ID {a_spk:.2}"))?;
    near("Set A depression accuracy", a_dep, RECORDED_A_DEP_ACC)?;
    near("Set B depression accuracy", b_dep, RECORDED_B_DEP_ACC)?;
    near("Set B speaker ID", b_spk, RECORDED_B_SPK_ID)?;
    Ok(format!(
        "dep acc A {a_dep:.2} B {b_dep:.2}; spk id A {a_spk:.2} B {b_spk:.2}"
    ))
}

fn dann_direction(report: &ExperimentReport) -> Outcome {
    let (o_dep, o_spk) = metrics(report, ORIGINAL, TrainingSet::B)?;
    let (d_dep, d_spk) = metrics(report, DANN, TrainingSet::B)?;
    ensure(d_spk < o_spk, || {
        format!("dann speaker ID {d_spk:.2} is not below original {o_spk:.2}")
    })?;
    ensure((d_dep - o_dep).abs() <= 10.0, || {
        format!("dann depression accuracy {d_dep:.2} is more than 10 points from {o_dep:.2}")
    })?;
    Ok(format!(
        "Set B spk id {o_spk:.2} -> {d_spk:.2}; dep acc {o_dep:.2} -> {d_dep:.2}"
    ))
}

// 8. Null signal.

/// Test accuracy of always predicting the training set's majority label.
fn majority_rate(data: &Dataset, plan: &SplitPlan, set: TrainingSet) -> f64 {
    let label = |id: &String| data.manifest.get(id).unwrap().label.value;
    let train = plan.training_set(set);
    let depressed = train
        .iter()
        .filter(|id| label(id) == Label::Depressed)
        .count();
    let majority = if 2 * depressed > train.len() {
        Label::Depressed
    } else {
        Label::NotDepressed
    };
    let hits = plan.test.iter().filter(|id| label(id) == majority).count();
    hits as f64 / plan.test.len() as f64
}

fn null_signal() -> Outcome {
    let config =
        ExperimentConfig::load(config_path("null.ini"), None).map_err(|e| e.to_string())?;
    let data = load_data(&config).map_err(|e| e.to_string())?;
    let (plan, _) = make_split(&config, &data).map_err(|e| e.to_string())?;
    let arms: Vec<String> = config.arms.iter().map(|a| a.arm_name()).collect();
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = run_experiment(&ExperimentPlan {
        config,
        out_dir: out.path().to_path_buf(),
    })
    .map_err(|e| e.to_string())?;
    let (mut dep_gap, mut spk_gap) = (0.0f64, 0.0f64);
    for arm in &arms {
        for set in TrainingSet::BOTH {
            let row = report
                .row(arm, set)
                .ok_or_else(|| format!("no row for {arm} set {set}"))?;
            let major = pct(majority_rate(&data, &plan, set));
            let dep = pct(row.metrics.dep_accuracy);
            let spk = pct(row.metrics.spk_id_accuracy);
            let chance = pct(row.metrics.chance_level);
            ensure((dep - major).abs() <= 5.0, || {
                format!("{arm} set {set}: depression accuracy {dep:.2} vs majority {major:.2}")
            })?;
            ensure((spk - chance).abs() <= 3.0, || {
                format!("{arm} set {set}: speaker ID {spk:.2} vs chance {chance:.2}")
            })?;
            dep_gap = dep_gap.max((dep - major).abs());
            spk_gap = spk_gap.max((spk - chance).abs());
        }
    }
    Ok(format!(
        "{} runs; max |dep - majority| {dep_gap:.2}, max |spk - chance| {spk_gap:.2}",
        2 * arms.len()
    ))
}

// 9. Determinism.

fn determinism() -> Outcome {
    let config =
        ExperimentConfig::load(config_path("leakage.ini"), None).map_err(|e| e.to_string())?;
    let mut rendered = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        run_experiment(&ExperimentPlan {
            config: config.clone(),
            out_dir: out.path().to_path_buf(),
        })
        .map_err(|e| e.to_string())?;
        let bytes = std::fs::read(out.path().join(leakbench::experiment::REPORT_FILE))
            .map_err(|e| e.to_string())?;
        rendered.push(bytes);
    }
    ensure(rendered[0] == rendered[1], || {
        "report.txt differs between runs".into()
    })?;
    Ok(format!(
        "report.txt identical across two runs ({} bytes)",
        rendered[0].len()
    ))
}

fn main() -> ExitCode {
    let mut failed = 0;
    // `spent` is time already used on shared work the criterion depends on.
    let mut record =
        |id: u32, name: &str, bound: Duration, spent: Duration, f: &mut dyn FnMut() -> Outcome| {
            let start = Instant::now();
            let outcome = f();
            let took = spent + start.elapsed();
            let outcome = outcome.and_then(|detail| {
                if took <= bound {
                    Ok(detail)
                } else {
                    Err(format!("{detail}; took {took:.2?}"))
                }
            });
            let (status, detail) = match outcome {
                Ok(d) => ("PASS", d),
                Err(d) => {
                    failed += 1;
                    ("FAIL", d)
                }
            };
            println!("criterion {id} {status} {name} [{took:.2?} / {bound:.0?}]: {detail}");
        };
    let secs = Duration::from_secs;
    let none = Duration::ZERO;

    record(1, "split exactness", secs(1), none, &mut split_exactness);
    record(2, "split properties", secs(10), none, &mut split_properties);
    record(
        3,
        "gradient correctness",
        secs(30),
        none,
        &mut gradient_checks,
    );
    record(
        4,
        "gradient reversal contract",
        secs(10),
        none,
        &mut grl_contract,
    );
    record(5, "metric oracle", secs(5), none, &mut metric_oracle);

    // Criteria 6 and 7 read the same run; each is charged its full cost.
    let start = Instant::now();
    let leakage = leakage_report();
    let shared = start.elapsed();
    let on_run = |f: fn(&ExperimentReport) -> Outcome| leakage.clone().and_then(|r| f(&r));
    record(6, "leakage gap", secs(120), shared, &mut || {
        on_run(leakage_gap)
    });
    record(7, "dann direction", secs(120), shared, &mut || {
        on_run(dann_direction)
    });

    record(8, "null signal", secs(60), none, &mut null_signal);
    record(
        9,
        "end-to-end determinism",
        secs(180),
        none,
        &mut determinism,
    );

    if failed == 0 {
        println!("acceptance: all 9 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 9 criteria fail");
        ExitCode::FAILURE
    }
}
