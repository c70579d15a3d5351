//! Scores LEV pairs under a hand-set two-covariance model: direct and
//! precomputed quadratic forms, the same-author probability, and the
//! posterior over the latent author vector.
//!
//! ```text
//! cargo run --example score_pair
//! ```

use bayes_av::plda::{Matrix, TwoCovarianceModel, Vector, same_author_probability, score_quadratic};

fn main() -> bayes_av::Result<()> {
    // scalar model with unit between- and within-author precision
    let scalar = TwoCovarianceModel::identity(1);
    let params = scalar.precompute_score_params()?;
    for (a, b) in [(0.0, 0.0), (1.0, 1.0), (1.0, -1.0)] {
        let (y1, y2) = (Vector::from_element(1, a), Vector::from_element(1, b));
        let direct = scalar.score_direct(&y1, &y2)?;
        let quad = score_quadratic(&params, &y1, &y2)?;
        println!("score({a:+}, {b:+}) = {direct:+.5}  quadratic {quad:+.5}  p(same) {:.4}", same_author_probability(direct));
    }

    // two dimensions: authors spread widely, documents of one author tightly
    let b = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.5]));
    let w = Matrix::from_diagonal(&Vector::from_vec(vec![20.0, 5.0]));
    let model = TwoCovarianceModel::from_precisions(Vector::zeros(2), &b, &w)?;
    let params = model.precompute_score_params()?;
    let anchor = Vector::from_vec(vec![1.0, -0.5]);
    for (name, other) in [
        ("near", Vector::from_vec(vec![1.1, -0.4])),
        ("far", Vector::from_vec(vec![-1.5, 1.0])),
    ] {
        let s = score_quadratic(&params, &anchor, &other)?;
        println!("{name:>4}: score {s:+.3}  p(same) {:.3}", same_author_probability(s));
    }

    let post = model.posterior(&[anchor.clone(), Vector::from_vec(vec![1.2, -0.6])])?;
    let mean = post.mean()?;
    let cov = post.covariance()?;
    println!("posterior mean ({:.3}, {:.3}), variances ({:.4}, {:.4})", mean[0], mean[1], cov[(0, 0)], cov[(1, 1)]);
    let (hb, hw) = model.entropy_diagnostics();
    println!("log det B^-1 {hb:+.3}  log det W^-1 {hw:+.3}");
    Ok(())
}
