mod common;

use common::*;
use leakbench::nn::{softmax_xent, GradientReversal, Matrix};
use leakbench::rng::SplitMix64;
use leakbench::trainer::{FeaturizerMode, HeadFamily, Variant};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_matches_finite_differences(seed in any::<u64>()) {
        let e = check_dense(seed);
        prop_assert!(e <= REL_TOL, "relative error {e}");
    }

    #[test]
    fn softmax_xent_matches_finite_differences(seed in any::<u64>()) {
        let e = check_softmax_xent(seed);
        prop_assert!(e <= REL_TOL, "relative error {e}");
    }

    #[test]
    fn aggregator_matches_finite_differences(seed in any::<u64>()) {
        let e = check_aggregator(seed);
        prop_assert!(e <= REL_TOL, "relative error {e}");
    }

    #[test]
    fn grl_composite_matches_finite_differences(seed in any::<u64>()) {
        let e = check_grl_composite(seed);
        prop_assert!(e <= REL_TOL, "relative error {e}");
    }

    #[test]
    fn projection_stack_matches_finite_differences(seed in any::<u64>()) {
        let e = check_projection_stack(seed);
        prop_assert!(e <= REL_TOL, "relative error {e}");
    }

    #[test]
    fn grl_forward_is_bit_exact(seed in any::<u64>(), lambda in 0.0f64..5.0) {
        let mut rng = SplitMix64::new(seed);
        let x = random_matrix(1 + rng.below(6) as usize, 1 + rng.below(6) as usize, &mut rng);
        let grl = GradientReversal::new(lambda).unwrap();
        let y = grl.forward(&x);
        prop_assert!(x.as_slice().iter().zip(y.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let dy = random_matrix(x.rows(), x.cols(), &mut rng);
        let dx = grl.backward(&dy);
        prop_assert!(dx.as_slice().iter().zip(dy.as_slice()).all(|(g, u)| *g == -lambda * u));
    }
}

#[test]
fn bias_gradient_is_column_sum() {
    let mut rng = SplitMix64::new(4);
    let mut layer = leakbench::nn::Dense::new(3, 4, &mut rng);
    let x = random_matrix(5, 3, &mut rng);
    let dy = random_matrix(5, 4, &mut rng);
    layer.forward(&x).unwrap();
    let g = layer.backward(&dy).unwrap();
    for (b, s) in g.bias.iter().zip(dy.column_sums()) {
        assert!((b - s).abs() <= 1e-12);
    }
}

/// The DANN gradient on the projection equals the depression gradient minus
/// lambda times the speaker gradient, each computed in its own pass.
#[test]
fn dann_gradient_decomposes_into_two_passes() {
    for seed in 0..40u64 {
        let lambda = 0.25 + (seed % 7) as f64 * 0.3;
        let inst = random_instance(
            seed,
            HeadFamily::SingleViewProbe,
            FeaturizerMode::TrainableProjection,
            Variant::Dann,
            seed % 2 == 0,
            lambda,
        );
        let mut net = inst.net.clone();
        let out = net.forward(&inst.inputs).unwrap();
        let (_, grads) = net.backward(&out, &inst.dep, Some(&inst.spk)).unwrap();

        // Pass 1: depression path only.
        let proj = net.projection.as_ref().unwrap();
        let h = out.representation.clone();
        let (_, d_dep) = softmax_xent(&out.depression_logits, &inst.dep).unwrap();
        let dh_dep = net.depression.backward(&d_dep).unwrap().input;
        // Pass 2: speaker path only, without reversal.
        let (_, d_spk) = softmax_xent(out.speaker_logits.as_ref().unwrap(), &inst.spk).unwrap();
        let dh_spk = net
            .speaker
            .as_ref()
            .unwrap()
            .backward(&d_spk)
            .unwrap()
            .input;

        let through = |dh: &Matrix| {
            let pre = proj.infer(&inst.inputs[0]).unwrap();
            let d_pre = if net.projection_relu {
                leakbench::nn::relu_backward(&pre, dh).unwrap()
            } else {
                dh.clone()
            };
            proj.backward(&d_pre).unwrap()
        };
        let g_dep = through(&dh_dep);
        let g_spk = through(&dh_spk);
        let combined = grads.get("projection.weight").unwrap();
        for ((c, a), b) in combined
            .iter()
            .zip(g_dep.weight.as_slice())
            .zip(g_spk.weight.as_slice())
        {
            assert!(
                (c - (a - lambda * b)).abs() <= 1e-10,
                "seed {seed}: {c} vs {}",
                a - lambda * b
            );
        }
        assert!(h.is_finite());
    }
}
