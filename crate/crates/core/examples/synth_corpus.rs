//! Generates a synthetic corpus with a known identity/label structure and
//! writes it as a data directory.
//!
//! ```text
//! cargo run --example synth_corpus -- [out_dir] [seed]
//! ```

use leakbench::dataset::Dataset;
use leakbench::synth::{generate, write_corpus, SynthConfig};

fn main() -> leakbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("leakbench-synth"));
    let seed = args
        .next()
        .map_or(0, |s| s.parse().expect("seed must be an integer"));

    let config = SynthConfig {
        seed,
        n_speakers: 40,
        segments_per_speaker: 20,
        dim: 8,
        sigma_identity: 5.0,
        delta_label: 0.5,
        sigma_noise: 1.0,
        n_views: 2,
        ..Default::default()
    };
    let corpus = generate(&config)?;
    std::fs::create_dir_all(&out).expect("output directory is writable");
    write_corpus(&corpus, &out)?;

    let back = Dataset::load_dir(&out)?;
    assert_eq!(back, corpus.data);
    let c = back.manifest.counts();
    println!("wrote {}", out.display());
    println!(
        "{} segments, {} speakers, {} depressed speakers, views {:?}",
        c.segments,
        c.speakers,
        c.depressed_speakers,
        config.view_names()
    );
    for spk in corpus.truth.speakers.iter().take(3) {
        let mean = corpus.truth.expected_mean(spk);
        println!(
            "{} {:<13} expected mean[0] {:+.3}",
            spk.speaker_id,
            spk.label.to_string(),
            mean[0]
        );
    }
    Ok(())
}
