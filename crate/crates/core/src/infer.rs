//! Ensemble prediction, the non-answer band and its calibration.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Model;
use crate::corpus::{PairRecord, write_jsonl};
use crate::error::{Error, Result};
use crate::evaluate::{EvalResult, NON_ANSWER, evaluate};
use crate::plda::{Vector, same_author_probability, score_quadratic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub id: String,
    pub value: f64,
}

pub fn ensemble_probability(ps: &[f64]) -> Result<f64> {
    if ps.is_empty() {
        return Err(Error::InvalidArgument("ensemble needs at least one probability".to_owned()));
    }
    Ok(ps.iter().sum::<f64>() / ps.len() as f64)
}

/// Maps `p` strictly inside `(0.5 - delta, 0.5 + delta)` to exactly 0.5.
pub fn apply_non_answer(p: f64, delta: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&delta) {
        return Err(Error::InvalidArgument(format!("delta must be in [0, 0.5], got {delta}")));
    }
    // evaluated literally so decimal boundaries such as 0.55 with delta
    // 0.05 stay outside the band
    Ok(if NON_ANSWER - delta < p && p < NON_ANSWER + delta { NON_ANSWER } else { p })
}

/// `0.00, 0.01, .., 0.25`.
pub fn default_grid() -> Vec<f64> {
    (0..=25).map(|k| k as f64 / 100.0).collect()
}

/// The grid point whose banded answers maximize the overall metric; ties go
/// to the smallest delta.
pub fn grid_search_delta(probabilities: &[f64], labels: &[bool], grid: &[f64]) -> Result<(f64, EvalResult)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty delta grid".to_owned()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut best: Option<(f64, EvalResult)> = None;
    for &d in &grid {
        let banded = probabilities.iter().map(|&p| apply_non_answer(p, d)).collect::<Result<Vec<_>>>()?;
        // a delta that abstains on everything has no defined F1
        let r = match evaluate(&banded, labels) {
            Ok(r) => r,
            Err(_) if banded.iter().all(|&v| v == NON_ANSWER) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|(_, b)| r.overall > b.overall) {
            best = Some((d, r));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("every grid point abstains on all items".to_owned()))
}

/// A document identity for caching: prefixing depends on the fandom, so the
/// same text under two fandoms is encoded twice.
type DocKey<'a> = (&'a str, &'a str);

/// Same-author probabilities of one model, encoding each distinct document
/// once.
pub fn model_probabilities(model: &Model, pairs: &[PairRecord]) -> Result<Vec<f64>> {
    let mut index: HashMap<DocKey, usize> = HashMap::new();
    let mut docs: Vec<DocKey> = Vec::new();
    for p in pairs {
        for k in 0..2 {
            let key = (p.texts[k].as_str(), p.fandoms[k].as_str());
            index.entry(key).or_insert_with(|| {
                docs.push(key);
                docs.len() - 1
            });
        }
    }
    let levs: Vec<Vector> = docs
        .par_iter()
        .map(|(text, fandom)| Ok(model.encoder.encode(&model.prepare(text, fandom))?.0))
        .collect::<Result<_>>()?;
    let params = model.plda.precompute_score_params()?;
    pairs
        .iter()
        .map(|p| {
            let a = &levs[index[&(p.texts[0].as_str(), p.fandoms[0].as_str())]];
            let b = &levs[index[&(p.texts[1].as_str(), p.fandoms[1].as_str())]];
            let s = score_quadratic(&params, a, b)?;
            if !s.is_finite() {
                return Err(Error::Numerical(format!("non-finite score for pair {}", p.id)));
            }
            Ok(same_author_probability(s))
        })
        .collect()
}

/// Ensemble-averaged probabilities before banding, in input order.
pub fn ensemble_probabilities(models: &[Model], pairs: &[PairRecord]) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("prediction needs at least one checkpoint".to_owned()));
    }
    let per_model: Vec<Vec<f64>> = models.par_iter().map(|m| model_probabilities(m, pairs)).collect::<Result<_>>()?;
    (0..pairs.len())
        .map(|i| ensemble_probability(&per_model.iter().map(|v| v[i]).collect::<Vec<_>>()))
        .collect()
}

pub fn predict(pairs: &[PairRecord], models: &[Model], delta: f64) -> Result<Vec<Answer>> {
    let probs = ensemble_probabilities(models, pairs)?;
    pairs
        .iter()
        .zip(probs)
        .map(|(p, v)| {
            Ok(Answer {
                id: p.id.clone(),
                value: apply_non_answer(v, delta)?,
            })
        })
        .collect()
}

pub fn save_answers(path: &Path, answers: &[Answer]) -> Result<()> {
    write_jsonl(path, answers)
}

pub fn load_answers(path: &Path) -> Result<Vec<Answer>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: Answer = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&a.value) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!("value {} outside [0, 1]", a.value),
            });
        }
        if !seen.insert(a.id.clone()) {
            return Err(Error::DuplicateId(a.id));
        }
        out.push(a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ensemble_examples() {
        assert_eq!(ensemble_probability(&[0.7]).unwrap(), 0.7);
        assert!((ensemble_probability(&[0.6, 0.8]).unwrap() - 0.7).abs() < 1e-15);
        assert!(ensemble_probability(&[]).is_err());
    }

    #[test]
    fn band_examples() {
        assert_eq!(apply_non_answer(0.52, 0.05).unwrap(), 0.5);
        assert_eq!(apply_non_answer(0.55, 0.05).unwrap(), 0.55);
        assert_eq!(apply_non_answer(0.45, 0.05).unwrap(), 0.45);
        assert_eq!(apply_non_answer(0.4999, 0.0).unwrap(), 0.4999);
        assert!(apply_non_answer(0.5, 0.6).is_err());
        assert!(apply_non_answer(0.5, -0.1).is_err());
    }

    #[test]
    fn grid_search_examples() {
        let p = [0.01, 0.99, 0.99, 0.01];
        let l = [false, true, true, false];
        assert_eq!(grid_search_delta(&p, &l, &default_grid()).unwrap().0, 0.0);
        assert_eq!(grid_search_delta(&p, &l, &[0.2]).unwrap().0, 0.2);
        assert!(grid_search_delta(&p, &l, &[]).is_err());

        // six confident correct answers, four wrong ones near the middle
        let p = [0.95, 0.9, 0.85, 0.1, 0.15, 0.05, 0.52, 0.47, 0.54, 0.46];
        let l = [true, true, true, false, false, false, false, true, false, true];
        let (d, best) = grid_search_delta(&p, &l, &default_grid()).unwrap();
        assert!(d >= 0.05, "delta {d}");
        let banded0: Vec<f64> = p.iter().map(|&x| apply_non_answer(x, 0.0).unwrap()).collect();
        assert!(best.overall > evaluate(&banded0, &l).unwrap().overall);
    }

    #[test]
    fn answers_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("answers.jsonl");
        let a = vec![
            Answer { id: "x".into(), value: 0.25 },
            Answer { id: "y".into(), value: 0.5 },
        ];
        save_answers(&path, &a).unwrap();
        assert_eq!(load_answers(&path).unwrap(), a);
        std::fs::write(&path, "{\"id\":\"x\",\"value\":1.5}\n").unwrap();
        assert!(load_answers(&path).is_err());
    }

    proptest! {
        #[test]
        fn band_is_idempotent(p in 0.0f64..=1.0, d in 0.0f64..=0.5) {
            let once = apply_non_answer(p, d).unwrap();
            prop_assert_eq!(apply_non_answer(once, d).unwrap(), once);
        }

        #[test]
        fn mean_within_range(ps in prop::collection::vec(0.0f64..=1.0, 1..10)) {
            let m = ensemble_probability(&ps).unwrap();
            let lo = ps.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
            let mut rev = ps.clone();
            rev.reverse();
            prop_assert!((ensemble_probability(&rev).unwrap() - m).abs() < 1e-12);
        }
    }
}
