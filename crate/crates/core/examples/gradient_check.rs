//! Compares the analytic gradients of a DANN head with central finite
//! differences, parameter group by parameter group.
//!
//! ```text
//! cargo run --example gradient_check -- [seed]
//! ```

use leakbench::nn::{softmax_xent, GradientReversal, Matrix};
use leakbench::rng::SplitMix64;
use leakbench::trainer::{HeadNetwork, ModelSpec};

const H: f64 = 1e-5;

fn params<'a>(net: &'a mut HeadNetwork, name: &str) -> &'a mut [f64] {
    match name {
        "depression.weight" => net.depression.weight.as_mut_slice(),
        "depression.bias" => &mut net.depression.bias,
        "speaker.weight" => net.speaker.as_mut().unwrap().weight.as_mut_slice(),
        "speaker.bias" => &mut net.speaker.as_mut().unwrap().bias,
        "projection.weight" => net.projection.as_mut().unwrap().weight.as_mut_slice(),
        "projection.bias" => &mut net.projection.as_mut().unwrap().bias,
        "aggregator.logits" => &mut net.aggregator.as_mut().unwrap().logits,
        other => panic!("unknown parameter {other}"),
    }
}

fn losses(net: &HeadNetwork, x: &[Matrix], dep: &[usize], spk: &[usize]) -> (f64, f64) {
    let out = net.clone().forward(x).unwrap();
    let l_dep = softmax_xent(&out.depression_logits, dep).unwrap().0;
    let l_spk = softmax_xent(out.speaker_logits.as_ref().unwrap(), spk)
        .unwrap()
        .0;
    (l_dep, l_spk)
}

fn main() -> leakbench::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .map_or(3, |s| s.parse().expect("seed must be an integer"));
    let lambda = 0.7;
    let mut spec = ModelSpec::parse_arm("weighted_views/trainable_projection/dann")?;
    spec.projection_dim = 3;

    let mut rng = SplitMix64::new(seed);
    let mut net = HeadNetwork::new(&spec, &[4, 4], 3, &mut rng)?;
    net.grl = GradientReversal::new(lambda)?;
    let x: Vec<Matrix> = (0..2)
        .map(|_| Matrix::random_uniform(6, 4, 1.0, &mut rng))
        .collect();
    let dep: Vec<usize> = (0..6).map(|i| i % 2).collect();
    let spk: Vec<usize> = (0..6).map(|i| i % 3).collect();

    let out = net.forward(&x)?;
    let (_, grads) = net.backward(&out, &dep, Some(&spk))?;
    for (name, analytic) in &grads.0 {
        // The speaker head descends its own loss; everything upstream of the
        // reversal layer descends L_dep - lambda * L_spk.
        let objective = |n: &HeadNetwork| {
            let (d, s) = losses(n, &x, &dep, &spk);
            if name.starts_with("speaker.") {
                s
            } else {
                d - lambda * s
            }
        };
        let mut worst = 0.0f64;
        for (i, a) in analytic.iter().enumerate() {
            let mut up = net.clone();
            params(&mut up, name)[i] += H;
            let mut down = net.clone();
            params(&mut down, name)[i] -= H;
            let numeric = (objective(&up) - objective(&down)) / (2.0 * H);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(err);
        }
        println!(
            "{name:<18} {:>3} entries  worst relative error {worst:.2e}",
            analytic.len()
        );
    }
    Ok(())
}
