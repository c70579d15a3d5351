//! Trains a small ensemble on a generated corpus, calibrates the non-answer
//! band on dev pairs and evaluates on test pairs.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [epochs] [members] [batch] [lr] [tau_s] [tau_d]
//! ```

use std::time::Instant;

use bayes_av::encoder::EncoderConfig;
use bayes_av::evaluate::evaluate_answers;
use bayes_av::infer::{default_grid, ensemble_probabilities, grid_search_delta, predict};
use bayes_av::preprocess::PreprocessConfig;
use bayes_av::synth::{SynthConfig, generate_corpus};
use bayes_av::train::{TrainConfig, build_vocabulary, init_model, prepare_pairs, prepare_training_set, train_ensemble};

fn main() -> bayes_av::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let arg = |i: usize, default: f64| args.get(i).copied().unwrap_or(default);
    let epochs = arg(0, 20.0) as usize;
    let members = arg(1, 3.0) as usize;
    let t0 = Instant::now();

    let corpus = generate_corpus(&SynthConfig::default())?;
    let pcfg = PreprocessConfig::default();
    let vocab = build_vocabulary(&corpus.train.pairs, &pcfg)?;
    println!("vocabulary: {} tokens, {} chars, {} fandoms", vocab.num_tokens(), vocab.num_chars(), vocab.num_prefixes());
    let set = prepare_training_set(&corpus.train.pairs, &corpus.train.truth, &vocab, &pcfg)?;
    let dev = prepare_pairs(&corpus.dev.pairs, &corpus.dev.truth, &vocab, &pcfg)?;
    let init = init_model(pcfg, vocab, EncoderConfig::default(), 0)?;

    let cfg = TrainConfig {
        epochs,
        ensemble_size: members,
        batch_size: arg(2, 2.0) as usize,
        learning_rate: arg(3, 1e-2),
        tau_s: arg(4, 4.0),
        tau_d: arg(5, 28.0),
        ..TrainConfig::default()
    };
    let outcomes = train_ensemble(&init, &set, &dev, &cfg)?;
    for (i, o) in outcomes.iter().enumerate() {
        println!("member {i}");
        for e in &o.report.epochs {
            println!(
                "  epoch {:2}  L_theta {:.4}  L_phi {:.4}  logdet B^-1 {:+.3}  logdet W^-1 {:+.3}  dev {:.3}",
                e.epoch,
                e.loss_theta,
                e.loss_phi,
                e.log_det_b_inv,
                e.log_det_w_inv,
                e.dev_overall.unwrap_or(f64::NAN)
            );
        }
    }
    println!("training took {:.1?}", t0.elapsed());

    let models: Vec<_> = outcomes.into_iter().map(|o| o.model).collect();
    let dev_probs = ensemble_probabilities(&models, &corpus.dev.pairs)?;
    let labels: Vec<bool> = corpus.dev.pairs.iter().map(|p| corpus.dev.truth[&p.id].same).collect();
    let (delta, dev_result) = grid_search_delta(&dev_probs, &labels, &default_grid())?;
    println!("delta {delta:.2} (dev overall {:.3})", dev_result.overall);

    let answers = predict(&corpus.test.pairs, &models, delta)?;
    let r = evaluate_answers(answers.iter().map(|a| (a.id.as_str(), a.value)), &corpus.test.truth)?.rounded();
    println!(
        "test: auc {:.3}  c@1 {:.3}  f_05_u {:.3}  F1 {:.3}  overall {:.3}",
        r.auc, r.c_at_1, r.f_05_u, r.f1, r.overall
    );
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}
