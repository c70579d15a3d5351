//! Computes AUC, c@1, f_05_u, F1 and their mean for a small answer set with
//! non-answers, before and after applying a non-answer band.
//!
//! ```text
//! cargo run --example evaluate_answers
//! ```

use bayes_av::evaluate::evaluate;
use bayes_av::infer::{apply_non_answer, grid_search_delta};

fn main() -> bayes_av::Result<()> {
    let labels = [true, true, true, true, false, false, false, false, true, false];
    let probs = [0.92, 0.81, 0.55, 0.47, 0.12, 0.30, 0.52, 0.66, 0.71, 0.08];
    let show = |name: &str, v: &[f64]| -> bayes_av::Result<()> {
        let r = evaluate(v, &labels)?.rounded();
        println!(
            "{name:<12} auc {:.3}  c@1 {:.3}  f_05_u {:.3}  F1 {:.3}  overall {:.3}",
            r.auc, r.c_at_1, r.f_05_u, r.f1, r.overall
        );
        Ok(())
    };
    show("raw", &probs)?;
    let banded: Vec<f64> = probs.iter().map(|&p| apply_non_answer(p, 0.1)).collect::<bayes_av::Result<_>>()?;
    show("delta 0.10", &banded)?;
    let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 100.0).collect();
    let (delta, best) = grid_search_delta(&probs, &labels, &grid)?;
    println!("best delta {delta:.2} gives overall {:.3}", best.overall);
    Ok(())
}
