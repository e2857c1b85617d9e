//! Groups interview utterances into fixed-size segments and builds a
//! validated manifest from them.
//!
//! ```text
//! cargo run --example group_utterances -- [group_size]
//! ```

use leakbench::corpus::{
    group_utterances, render_manifest, validate_manifest, DepressionLabel, Manifest,
    SpeakerUtterances, UtteranceRecord,
};

fn interview(speaker: &str, phq8: u8, n: u32) -> SpeakerUtterances {
    SpeakerUtterances {
        speaker_id: speaker.into(),
        label: DepressionLabel::from_phq8(phq8),
        utterances: (0..n)
            .map(|i| UtteranceRecord {
                start_time: Some(4.0 * i as f64),
                end_time: Some(4.0 * i as f64 + 3.5),
                ..UtteranceRecord::new(speaker, i)
            })
            .collect(),
    }
}

fn main() -> leakbench::Result<()> {
    let group_size = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("group_size must be an integer"))
        .unwrap_or(10);
    let speakers = [
        interview("300", 2, 47),
        interview("301", 15, 62),
        interview("302", 9, 31),
    ];
    let views = vec!["wavlm_l12".to_string(), "egemaps".to_string()];
    let groups = group_utterances(&speakers, group_size, &views)?;
    for g in &groups {
        println!(
            "{:<10} utterances {:>3}..={:<3} {}",
            g.segment.segment_id, g.first_utterance, g.last_utterance, g.segment.label.value
        );
    }

    let manifest = Manifest::new(groups.into_iter().map(|g| g.segment).collect())?;
    let report = validate_manifest(&manifest, Some(&views));
    assert!(report.is_empty(), "{report}");
    let c = manifest.counts();
    println!(
        "\n{} segments from {} speakers ({} depressed)\n",
        c.segments, c.speakers, c.depressed_speakers
    );
    print!("{}", render_manifest(&manifest));
    Ok(())
}
