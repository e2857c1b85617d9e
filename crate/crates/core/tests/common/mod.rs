#![allow(dead_code)]

use leakbench::corpus::{DepressionLabel, Label, Manifest, Segment};
use leakbench::nn::{softmax_xent, Dense, GradientReversal, Matrix, ViewAggregator};
use leakbench::rng::SplitMix64;
use leakbench::trainer::{FeaturizerMode, HeadFamily, HeadNetwork, ModelSpec, Variant};

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// Relative error with a small floor so two near-zero values compare equal.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    let v = (0..rows * cols).map(|_| rng.normal()).collect();
    Matrix::from_vec(rows, cols, v).unwrap()
}

fn dims(rng: &mut SplitMix64, lo: u64, hi: u64) -> usize {
    (lo + rng.below(hi - lo + 1)) as usize
}

/// Largest relative error between `analytic` and central differences of
/// `f` over every coordinate of `params`.
pub fn fd_check(params: &mut [f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + H;
        let up = f(params);
        params[i] = orig - H;
        let down = f(params);
        params[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * H)));
    }
    worst
}

fn weighted_sum(y: &Matrix, g: &Matrix) -> f64 {
    y.as_slice()
        .iter()
        .zip(g.as_slice())
        .map(|(a, b)| a * b)
        .sum()
}

/// Dense layer under `L = sum(G * Y)`: checks dX, dW and db.
pub fn check_dense(seed: u64) -> f64 {
    let mut rng = SplitMix64::new(seed);
    let (n, i, o) = (
        dims(&mut rng, 1, 5),
        dims(&mut rng, 1, 6),
        dims(&mut rng, 1, 4),
    );
    let mut layer = Dense::new(i, o, &mut rng);
    let mut x = random_matrix(n, i, &mut rng);
    let g = random_matrix(n, o, &mut rng);
    layer.forward(&x).unwrap();
    let grads = layer.backward(&g).unwrap();

    let w = layer.weight.clone();
    let b = layer.bias.clone();
    let mut worst = fd_check(x.as_mut_slice(), grads.input.as_slice(), |xs| {
        let xm = Matrix::from_vec(n, i, xs.to_vec()).unwrap();
        weighted_sum(
            &Dense::from_parts(w.clone(), b.clone())
                .unwrap()
                .infer(&xm)
                .unwrap(),
            &g,
        )
    });
    let mut wv = w.as_slice().to_vec();
    worst = worst.max(fd_check(&mut wv, grads.weight.as_slice(), |ws| {
        let wm = Matrix::from_vec(o, i, ws.to_vec()).unwrap();
        weighted_sum(
            &Dense::from_parts(wm, b.clone()).unwrap().infer(&x).unwrap(),
            &g,
        )
    }));
    let mut bv = b.clone();
    worst.max(fd_check(&mut bv, &grads.bias, |bs| {
        weighted_sum(
            &Dense::from_parts(w.clone(), bs.to_vec())
                .unwrap()
                .infer(&x)
                .unwrap(),
            &g,
        )
    }))
}

/// Mean softmax cross-entropy: checks dLogits.
pub fn check_softmax_xent(seed: u64) -> f64 {
    let mut rng = SplitMix64::new(seed);
    let (n, c) = (dims(&mut rng, 1, 6), dims(&mut rng, 2, 6));
    let mut logits = random_matrix(n, c, &mut rng).scale(2.0);
    let targets: Vec<usize> = (0..n).map(|_| rng.below(c as u64) as usize).collect();
    let (_, d) = softmax_xent(&logits, &targets).unwrap();
    fd_check(logits.as_mut_slice(), d.as_slice(), |ls| {
        softmax_xent(&Matrix::from_vec(n, c, ls.to_vec()).unwrap(), &targets)
            .unwrap()
            .0
    })
}

/// Softmax-weighted view sum under `L = sum(G * Y)`: checks the logits and
/// every view.
pub fn check_aggregator(seed: u64) -> f64 {
    let mut rng = SplitMix64::new(seed);
    let (k, n, d) = (
        dims(&mut rng, 1, 4),
        dims(&mut rng, 1, 4),
        dims(&mut rng, 1, 5),
    );
    let logits: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
    let mut views: Vec<Matrix> = (0..k).map(|_| random_matrix(n, d, &mut rng)).collect();
    let g = random_matrix(n, d, &mut rng);
    let mut agg = ViewAggregator::from_logits(logits.clone());
    agg.forward(&views).unwrap();
    let grads = agg.backward(&g).unwrap();

    let mut lv = logits.clone();
    let mut worst = fd_check(&mut lv, &grads.logits, |ls| {
        weighted_sum(
            &ViewAggregator::from_logits(ls.to_vec())
                .infer(&views)
                .unwrap(),
            &g,
        )
    });
    for j in 0..k {
        let mut vj = views[j].as_slice().to_vec();
        let analytic = grads.views[j].as_slice().to_vec();
        let others = views.clone();
        worst = worst.max(fd_check(&mut vj, &analytic, |vs| {
            let mut vv = others.clone();
            vv[j] = Matrix::from_vec(n, d, vs.to_vec()).unwrap();
            weighted_sum(
                &ViewAggregator::from_logits(logits.clone())
                    .infer(&vv)
                    .unwrap(),
                &g,
            )
        }));
    }
    views.clear();
    worst
}

pub struct Instance {
    pub net: HeadNetwork,
    pub inputs: Vec<Matrix>,
    pub dep: Vec<usize>,
    pub spk: Vec<usize>,
}

/// A random head network and batch. Pre-activations are kept away from the
/// ReLU kink so central differences stay valid.
pub fn random_instance(
    seed: u64,
    family: HeadFamily,
    featurizer: FeaturizerMode,
    variant: Variant,
    relu: bool,
    lambda: f64,
) -> Instance {
    let mut rng = SplitMix64::new(seed);
    loop {
        let n = dims(&mut rng, 2, 6);
        let k = match family {
            HeadFamily::SingleViewProbe => 1,
            _ => dims(&mut rng, 2, 3),
        };
        let d = dims(&mut rng, 1, 5);
        let view_dims: Vec<usize> = match family {
            HeadFamily::ConcatViews => (0..k).map(|_| dims(&mut rng, 1, 4)).collect(),
            _ => vec![d; k],
        };
        let n_spk = dims(&mut rng, 2, 5);
        let mut spec = ModelSpec::new(family, featurizer, variant);
        spec.projection_dim = dims(&mut rng, 1, 5);
        spec.projection_relu = relu;
        let mut net = HeadNetwork::new(&spec, &view_dims, n_spk, &mut rng).unwrap();
        net.grl = GradientReversal::new(lambda).unwrap();
        if let Some(agg) = net.aggregator.as_mut() {
            for l in agg.logits.iter_mut() {
                *l = rng.normal();
            }
        }
        for b in net.depression.bias.iter_mut() {
            *b = 0.1 * rng.normal();
        }
        let inputs: Vec<Matrix> = view_dims
            .iter()
            .map(|&c| random_matrix(n, c, &mut rng))
            .collect();
        let dep = (0..n).map(|_| rng.below(2) as usize).collect();
        let spk = (0..n).map(|_| rng.below(n_spk as u64) as usize).collect();
        if relu {
            if let Some(p) = &net.projection {
                let x = match family {
                    HeadFamily::ConcatViews => Matrix::hconcat(&inputs).unwrap(),
                    HeadFamily::WeightedViews => {
                        net.aggregator.as_ref().unwrap().infer(&inputs).unwrap()
                    }
                    HeadFamily::SingleViewProbe => inputs[0].clone(),
                };
                if p.infer(&x)
                    .unwrap()
                    .as_slice()
                    .iter()
                    .any(|v| v.abs() < 1e-3)
                {
                    continue;
                }
            }
        }
        return Instance {
            net,
            inputs,
            dep,
            spk,
        };
    }
}

/// Depression loss and speaker loss for the network as it stands.
pub fn losses(inst: &Instance, net: &HeadNetwork) -> (f64, f64) {
    let mut net = net.clone();
    let out = net.forward(&inst.inputs).unwrap();
    let dep = softmax_xent(&out.depression_logits, &inst.dep).unwrap().0;
    let spk = out
        .speaker_logits
        .map(|l| softmax_xent(&l, &inst.spk).unwrap().0)
        .unwrap_or(0.0);
    (dep, spk)
}

type Accessor = fn(&mut HeadNetwork) -> Option<&mut [f64]>;

pub fn parameters() -> Vec<(&'static str, Accessor)> {
    vec![
        ("depression.weight", |n| {
            Some(n.depression.weight.as_mut_slice())
        }),
        ("depression.bias", |n| Some(&mut n.depression.bias)),
        ("speaker.weight", |n| {
            n.speaker.as_mut().map(|s| s.weight.as_mut_slice())
        }),
        ("speaker.bias", |n| {
            n.speaker.as_mut().map(|s| s.bias.as_mut_slice())
        }),
        ("projection.weight", |n| {
            n.projection.as_mut().map(|p| p.weight.as_mut_slice())
        }),
        ("projection.bias", |n| {
            n.projection.as_mut().map(|p| p.bias.as_mut_slice())
        }),
        ("aggregator.logits", |n| {
            n.aggregator.as_mut().map(|a| a.logits.as_mut_slice())
        }),
    ]
}

/// Checks every parameter gradient of a head network against central
/// differences of the objective each parameter group is meant to follow:
/// the speaker head descends `L_spk`, everything else descends
/// `L_dep - lambda * L_spk`.
pub fn check_network(inst: &Instance) -> f64 {
    let mut net = inst.net.clone();
    let out = net.forward(&inst.inputs).unwrap();
    let spk_targets = net.speaker.is_some().then_some(inst.spk.as_slice());
    let (_, grads) = net.backward(&out, &inst.dep, spk_targets).unwrap();
    let lambda = net.grl.lambda();
    let mut worst: f64 = 0.0;
    for (name, access) in parameters() {
        let Some(analytic) = grads.get(name) else {
            continue;
        };
        let analytic = analytic.to_vec();
        let speaker_param = name.starts_with("speaker.");
        let mut probe = net.clone();
        let mut params = access(&mut probe).unwrap().to_vec();
        worst = worst.max(fd_check(&mut params, &analytic, |ps| {
            let mut trial = net.clone();
            access(&mut trial).unwrap().copy_from_slice(ps);
            let (dep, spk) = losses(inst, &trial);
            if speaker_param {
                spk
            } else {
                dep - lambda * spk
            }
        }));
    }
    worst
}

pub fn check_grl_composite(seed: u64) -> f64 {
    let mut rng = SplitMix64::new(seed ^ 0x9e37);
    let lambda = rng.uniform(0.0, 2.0);
    let family = [
        HeadFamily::SingleViewProbe,
        HeadFamily::ConcatViews,
        HeadFamily::WeightedViews,
    ][rng.below(3) as usize];
    let relu = rng.below(2) == 1;
    check_network(&random_instance(
        seed,
        family,
        FeaturizerMode::TrainableProjection,
        Variant::Dann,
        relu,
        lambda,
    ))
}

pub fn check_projection_stack(seed: u64) -> f64 {
    let mut rng = SplitMix64::new(seed ^ 0x51ed);
    let family = [
        HeadFamily::SingleViewProbe,
        HeadFamily::ConcatViews,
        HeadFamily::WeightedViews,
    ][rng.below(3) as usize];
    let relu = rng.below(2) == 1;
    check_network(&random_instance(
        seed,
        family,
        FeaturizerMode::TrainableProjection,
        Variant::Original,
        relu,
        0.0,
    ))
}

/// Builds a manifest from per-speaker segment counts. Every third speaker
/// is depressed.
pub fn manifest_from_counts(counts: &[usize]) -> Manifest {
    let width = counts.len().saturating_sub(1).to_string().len().max(3);
    let mut segs = Vec::new();
    for (s, &n) in counts.iter().enumerate() {
        let speaker = format!("spk{s:0width$}");
        let label = if s % 3 == 0 {
            Label::Depressed
        } else {
            Label::NotDepressed
        };
        for k in 0..n {
            segs.push(Segment {
                segment_id: format!("{speaker}_{k:04}"),
                speaker_id: speaker.clone(),
                segment_index: k as u32,
                label: DepressionLabel::new(label),
                feature_refs: vec!["view0".into()],
            });
        }
    }
    Manifest::new(segs).unwrap()
}

/// Config path inside this crate.
pub fn config_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}
