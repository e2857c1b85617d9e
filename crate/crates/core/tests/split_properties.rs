mod common;

use std::collections::BTreeSet;

use common::manifest_from_counts;
use leakbench::splitter::{
    audit_split, build_split, parse_split, render_split, speaker_overlap, HalvingRule, SplitConfig,
};
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (Vec<usize>, usize, u64, bool)> {
    (5usize..=60)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(2usize..=40, n),
                1..=(n / 3).max(1),
            )
        })
        .prop_flat_map(|(counts, nt)| (Just(counts), Just(nt), any::<u64>(), any::<bool>()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn plans_satisfy_every_invariant((counts, nt, seed, temporal) in instance()) {
        let m = manifest_from_counts(&counts);
        let cfg = SplitConfig {
            halving_rule: if temporal { HalvingRule::FirstHalfTemporal } else { HalvingRule::RandomWithinSpeaker },
            ..SplitConfig::new(seed, nt)
        };
        let plan = match build_split(&m, &cfg) {
            Ok(p) => p,
            // Too few control segments for this draw of targets.
            Err(e) => {
                prop_assert!(e.is_validation());
                return Ok(());
            }
        };
        let report = audit_split(&m, &plan).unwrap();
        prop_assert!(report.is_clean(), "{report}");

        // Independent restatement of the invariants.
        let a = plan.training_set_a();
        let b = plan.training_set_b();
        prop_assert_eq!(a.len(), b.len());
        prop_assert_eq!(plan.target_speakers.len(), nt);
        prop_assert!(plan.test.is_disjoint(&plan.subtarget));
        prop_assert!(plan.subcontrol_a.is_disjoint(&plan.subcontrol_b));
        prop_assert_eq!(plan.subcontrol_b.len(), plan.subtarget.len());
        prop_assert!(speaker_overlap(&m, &a, &plan.test).unwrap().is_empty());
        for spk in &plan.target_speakers {
            let n = m.speaker_segments(spk).count();
            let t = m.speaker_segments(spk).filter(|s| plan.test.contains(&s.segment_id)).count();
            prop_assert_eq!(t, n.div_ceil(2));
        }
        let all: BTreeSet<String> = m.segments().iter().map(|s| s.segment_id.clone()).collect();
        let covered: BTreeSet<String> = plan.test.iter()
            .chain(&plan.subtarget).chain(&plan.subcontrol_a).chain(&plan.subcontrol_b)
            .cloned().collect();
        prop_assert_eq!(covered, all);

        let again = build_split(&m, &cfg).unwrap();
        prop_assert_eq!(&again, &plan);
        let text = render_split(&plan);
        prop_assert_eq!(parse_split(&text, "p".as_ref()).unwrap(), plan);
    }

    #[test]
    fn moving_one_segment_is_caught((counts, nt, seed, _t) in instance()) {
        let m = manifest_from_counts(&counts);
        let Ok(mut plan) = build_split(&m, &SplitConfig::new(seed, nt)) else {
            return Ok(());
        };
        let moved = plan.test.iter().next().unwrap().clone();
        plan.test.remove(&moved);
        plan.subcontrol_a.insert(moved);
        prop_assert!(!audit_split(&m, &plan).unwrap().is_clean());
    }
}
