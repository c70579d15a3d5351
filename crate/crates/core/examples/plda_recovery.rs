//! Fits the scoring layer alone on embeddings drawn from a known
//! two-covariance model and reports held-out AUC and the learned entropies.

use std::collections::HashMap;
use std::time::Instant;

use bayes_av::corpus::AuthorRecord;
use bayes_av::evaluate::auc;
use bayes_av::plda::{Matrix, TwoCovarianceModel, Vector, same_author_probability, score_quadratic};
use bayes_av::resample::AuthorPool;
use bayes_av::seed;
use bayes_av::synth::sample_levs;
use bayes_av::train::{TrainConfig, train_scoring_layer};

fn main() -> bayes_av::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let arg = |i: usize, default: f64| args.get(i).copied().unwrap_or(default);
    let d = 8;
    let mu = Vector::zeros(d);
    let b_inv = Matrix::identity(d, d);
    let w_inv = Matrix::identity(d, d) * 0.1;
    let mut rng = seed::rng(7, "levs", 0);
    let train = sample_levs(&mu, &b_inv, &w_inv, 500, 4, &mut rng)?;
    let test = sample_levs(&mu, &b_inv, &w_inv, 500, 2, &mut rng)?;

    let mut levs = HashMap::new();
    let mut records = Vec::new();
    for (k, (a, y)) in train.into_iter().enumerate() {
        let doc_id = format!("d{k}");
        records.push(AuthorRecord {
            author_id: format!("a{a}"),
            fandom: String::new(),
            doc_id: doc_id.clone(),
        });
        levs.insert(doc_id, y);
    }
    let pool = AuthorPool::from_records(records)?;
    let cfg = TrainConfig {
        epochs: arg(0, 50.0) as usize,
        batch_size: arg(1, 32.0) as usize,
        learning_rate: arg(2, 1e-2),
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let mut plda = TwoCovarianceModel::identity(d);
    let losses = train_scoring_layer(&mut plda, &pool, &levs, &cfg)?;
    let (hb, hw) = plda.entropy_diagnostics();
    println!("epochs {}  final loss {:.4}  time {:.1?}", losses.len(), losses.last().unwrap(), t0.elapsed());
    println!("log det B^-1 {hb:+.3} (true 0)  log det W^-1 {hw:+.3} (true {:+.3})", d as f64 * 0.1f64.ln());

    // held-out pairs: consecutive docs of an author, and docs of neighbouring authors
    let params = plda.precompute_score_params()?;
    let (mut values, mut labels) = (Vec::new(), Vec::new());
    for a in 0..500 {
        let same = (&test[2 * a].1, &test[2 * a + 1].1);
        let diff = (&test[2 * a].1, &test[(2 * a + 2) % test.len()].1);
        for ((y1, y2), l) in [(same, true), (diff, false)] {
            values.push(same_author_probability(score_quadratic(&params, y1, y2)?));
            labels.push(l);
        }
    }
    println!("held-out AUC {:.4}", auc(&values, &labels)?);
    Ok(())
}
