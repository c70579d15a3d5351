//! Trains one small model on a synthetic corpus for a few epochs and writes
//! the attention heatmap of a test pair as HTML and JSON.
//!
//! ```text
//! cargo run --release --example attention_heatmap -- [out_dir] [epochs]
//! ```

use std::path::PathBuf;

use bayes_av::corpus::write_atomic;
use bayes_av::encoder::EncoderConfig;
use bayes_av::heatmap::{pair_heat, render_html};
use bayes_av::preprocess::PreprocessConfig;
use bayes_av::synth::{SynthConfig, generate_corpus};
use bayes_av::train::{TrainConfig, build_vocabulary, init_model, prepare_training_set, train_model};

fn main() -> bayes_av::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "heatmap-out".into()));
    let epochs: usize = args.next().map_or(3, |a| a.parse().expect("epoch count"));

    let corpus = generate_corpus(&SynthConfig {
        authors: 30,
        ..SynthConfig::default()
    })?;
    let pcfg = PreprocessConfig::default();
    let vocab = build_vocabulary(&corpus.train.pairs, &pcfg)?;
    let set = prepare_training_set(&corpus.train.pairs, &corpus.train.truth, &vocab, &pcfg)?;
    let init = init_model(pcfg, vocab, EncoderConfig::default(), 0)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: 2,
        learning_rate: 1e-2,
        tau_s: 4.0,
        tau_d: 28.0,
        ..TrainConfig::default()
    };
    let model = train_model(&init, &set, &[], &cfg, 0)?.model;

    let pair = &corpus.test.pairs[0];
    let report = pair_heat(&model, &pair.id, [&pair.texts[0], &pair.texts[1]], [&pair.fandoms[0], &pair.fandoms[1]])?;
    for (k, d) in report.documents.iter().enumerate() {
        if let Some((u, t)) = d.hottest_token() {
            println!("document {k}: {} units, most attended token `{}` in unit {u}", d.units.len(), d.units[u].tokens[t]);
        }
    }
    std::fs::create_dir_all(&out).expect("output directory");
    let html = out.join(format!("{}.html", pair.id));
    write_atomic(&html, render_html(&report).as_bytes())?;
    let json = serde_json::to_string_pretty(&report).expect("serializable");
    write_atomic(&out.join(format!("{}.json", pair.id)), json.as_bytes())?;
    println!("wrote {}", html.display());
    Ok(())
}
