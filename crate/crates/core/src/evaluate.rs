//! Verification metrics with non-answer handling. A value of exactly 0.5 is a
//! non-answer; values above 0.5 answer "same author".

use serde::{Deserialize, Serialize};

use crate::corpus::TruthMap;
use crate::error::{Error, Result};

pub const NON_ANSWER: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auc: f64,
    pub c_at_1: f64,
    pub f_05_u: f64,
    pub f1: f64,
    pub overall: f64,
}

impl EvalResult {
    pub fn new(auc: f64, c_at_1: f64, f_05_u: f64, f1: f64) -> Self {
        Self {
            auc,
            c_at_1,
            f_05_u,
            f1,
            overall: overall(auc, c_at_1, f_05_u, f1),
        }
    }

    /// Every field rounded to three decimals.
    pub fn rounded(&self) -> Self {
        let r = |x: f64| (x * 1000.0).round() / 1000.0;
        Self {
            auc: r(self.auc),
            c_at_1: r(self.c_at_1),
            f_05_u: r(self.f_05_u),
            f1: r(self.f1),
            overall: r(self.overall),
        }
    }
}

fn check(values: &[f64], labels: &[bool]) -> Result<()> {
    if values.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} values but {} labels",
            values.len(),
            labels.len()
        )));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("no items to evaluate".to_owned()));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("value {v} outside [0, 1]")));
    }
    Ok(())
}

/// Area under the ROC curve via average ranks (ties count one half).
pub fn auc(values: &[f64], labels: &[bool]) -> Result<f64> {
    check(values, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUC needs both classes".to_owned()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
    unanswered: usize,
}

fn counts(values: &[f64], labels: &[bool]) -> Counts {
    let mut c = Counts::default();
    for (&v, &l) in values.iter().zip(labels) {
        match (v.partial_cmp(&NON_ANSWER), l) {
            (Some(std::cmp::Ordering::Equal), _) => c.unanswered += 1,
            (Some(std::cmp::Ordering::Greater), true) => c.tp += 1,
            (Some(std::cmp::Ordering::Greater), false) => c.fp += 1,
            (_, true) => c.fn_ += 1,
            (_, false) => c.tn += 1,
        }
    }
    c
}

/// Accuracy that credits each non-answer with the accuracy rate.
pub fn c_at_1(values: &[f64], labels: &[bool]) -> Result<f64> {
    check(values, labels)?;
    let c = counts(values, labels);
    let n = values.len() as f64;
    let nc = (c.tp + c.tn) as f64;
    Ok((nc + c.unanswered as f64 * nc / n) / n)
}

/// F-0.5 with same-author as the positive class and non-answers counted as
/// false negatives.
pub fn f_05_u(values: &[f64], labels: &[bool]) -> Result<f64> {
    check(values, labels)?;
    let c = counts(values, labels);
    let tp = 1.25 * c.tp as f64;
    let den = tp + 0.25 * (c.fn_ + c.unanswered) as f64 + c.fp as f64;
    Ok(if den == 0.0 { 0.0 } else { tp / den })
}

/// F1 over answered items only.
pub fn f1_answered(values: &[f64], labels: &[bool]) -> Result<f64> {
    check(values, labels)?;
    let c = counts(values, labels);
    if c.unanswered == values.len() {
        return Err(Error::InvalidArgument("F1 needs at least one answered item".to_owned()));
    }
    let den = 2 * c.tp + c.fp + c.fn_;
    Ok(if den == 0 { 0.0 } else { 2.0 * c.tp as f64 / den as f64 })
}

pub fn overall(auc: f64, c_at_1: f64, f_05_u: f64, f1: f64) -> f64 {
    (auc + c_at_1 + f_05_u + f1) / 4.0
}

pub fn evaluate(values: &[f64], labels: &[bool]) -> Result<EvalResult> {
    Ok(EvalResult::new(
        auc(values, labels)?,
        c_at_1(values, labels)?,
        f_05_u(values, labels)?,
        f1_answered(values, labels)?,
    ))
}

/// Scores `(id, value)` answers against `truth`. Every truth id must be
/// answered; answers without truth are ignored.
pub fn evaluate_answers<'a, I>(answers: I, truth: &TruthMap) -> Result<EvalResult>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let given: std::collections::HashMap<&str, f64> = answers.into_iter().collect();
    let missing: Vec<String> = truth.keys().filter(|id| !given.contains_key(id.as_str())).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    let (values, labels): (Vec<f64>, Vec<bool>) = truth.iter().map(|(id, t)| (given[id.as_str()], t.same)).unzip();
    evaluate(&values, &labels)
}
