//! Joint training of the encoder and the scoring layer on pairs resampled
//! every epoch.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointMeta, Model, checkpoint_path};
use crate::corpus::{PairRecord, TruthMap, author_records, nfc, write_atomic};
use crate::encoder::{Encoder, EncoderConfig, Mode, contrastive_loss_grad, decision_threshold};
use crate::error::{Error, Result};
use crate::evaluate::evaluate;
use crate::graph::ParamGrads;
use crate::optim::{Adam, clip_factor};
use crate::plda::{PldaGrad, ScoringContext, TwoCovarianceModel, Vector, is_spd, same_author_probability, score_quadratic};
use crate::preprocess::{PreparedDocument, PreprocessConfig, Vocabulary, build_vocab, prepare_text, tokenize};
use crate::resample::{AuthorPool, PairExample, sample_pairs};
use crate::seed;

pub use crate::graph::{GroupCheck, finite_difference_check};

/// Documents used to standardize the output layer.
const STANDARDIZE_DOCS: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the contrastive loss.
    pub alpha: f64,
    /// Weight of the scoring-layer cross-entropy.
    pub beta: f64,
    pub tau_s: f64,
    pub tau_d: f64,
    pub seed: u64,
    pub ensemble_size: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Whether fandom prefix rows keep training after initialization.
    pub trainable_prefix: bool,
    pub clip_norm: f64,
    /// Rescale the output layer before training so random pairs start near
    /// the decision threshold.
    pub standardize_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            alpha: 1.0,
            beta: 1.0,
            tau_s: 0.2,
            tau_d: 2.0,
            seed: 0,
            ensemble_size: 5,
            checkpoint_dir: None,
            trainable_prefix: true,
            clip_norm: 1.0,
            standardize_output: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, problems: &mut Vec<String>) {
        if self.epochs == 0 {
            problems.push("train.epochs must be >= 1".to_owned());
        }
        if self.batch_size == 0 {
            problems.push("train.batch_size must be >= 1".to_owned());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("train.learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.alpha + self.beta <= 0.0 {
            problems.push(format!(
                "train.alpha and train.beta must be >= 0 with a positive sum, got {} and {}",
                self.alpha, self.beta
            ));
        }
        if self.tau_s >= self.tau_d {
            problems.push(format!("train.tau_s ({}) must be below train.tau_d ({})", self.tau_s, self.tau_d));
        }
        if self.ensemble_size == 0 {
            problems.push("train.ensemble_size must be >= 1".to_owned());
        }
        if self.clip_norm <= 0.0 {
            problems.push("train.clip_norm must be positive".to_owned());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss_theta: f64,
    pub loss_phi: f64,
    pub log_det_b_inv: f64,
    pub log_det_w_inv: f64,
    pub dev_overall: Option<f64>,
}

impl EpochReport {
    pub fn total_loss(&self, cfg: &TrainConfig) -> f64 {
        cfg.alpha * self.loss_theta + cfg.beta * self.loss_phi
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss_theta,loss_phi,logdetBinv,logdetWinv,dev_overall\n");
        for e in &self.epochs {
            let dev = e.dev_overall.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.epoch, e.loss_theta, e.loss_phi, e.log_det_b_inv, e.log_det_w_inv, dev
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Training documents keyed by document id, plus their author grouping.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub pool: AuthorPool,
    pub docs: HashMap<String, PreparedDocument>,
}

#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub id: String,
    pub docs: [PreparedDocument; 2],
    pub same: bool,
}

/// Vocabulary over the distinct texts of `pairs`, with one prefix slot per
/// fandom.
pub fn build_vocabulary(pairs: &[PairRecord], cfg: &PreprocessConfig) -> Result<Vocabulary> {
    let mut seen = HashSet::new();
    let mut tokens = Vec::new();
    let mut fandoms = BTreeSet::new();
    for p in pairs {
        for k in 0..2 {
            let n = nfc(&p.texts[k]);
            fandoms.insert(p.fandoms[k].as_str());
            if seen.insert(n.clone()) {
                tokens.extend(tokenize(&n));
            }
        }
    }
    let mut v = build_vocab(tokens.iter().map(String::as_str), cfg.max_tokens, cfg.max_chars, cfg.min_freq)?;
    v.add_prefixes(fandoms);
    Ok(v)
}

pub fn prepare_training_set(pairs: &[PairRecord], truth: &TruthMap, vocab: &Vocabulary, cfg: &PreprocessConfig) -> Result<TrainingSet> {
    let (records, store) = author_records(pairs, truth)?;
    let docs = records
        .iter()
        .map(|r| {
            let text = store.get(&r.doc_id).expect("interned document");
            (r.doc_id.clone(), prepare_text(text, &r.fandom, vocab, cfg))
        })
        .collect();
    Ok(TrainingSet {
        pool: AuthorPool::from_records(records)?,
        docs,
    })
}

pub fn prepare_pairs(pairs: &[PairRecord], truth: &TruthMap, vocab: &Vocabulary, cfg: &PreprocessConfig) -> Result<Vec<PreparedPair>> {
    let missing: Vec<String> = pairs.iter().filter(|p| !truth.contains_key(&p.id)).map(|p| p.id.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    Ok(pairs
        .iter()
        .map(|p| PreparedPair {
            id: p.id.clone(),
            docs: [
                prepare_text(&p.texts[0], &p.fandoms[0], vocab, cfg),
                prepare_text(&p.texts[1], &p.fandoms[1], vocab, cfg),
            ],
            same: truth[&p.id].same,
        })
        .collect())
}

/// Untrained model: seeded encoder, identity scoring layer.
pub fn init_model(preprocess: PreprocessConfig, vocab: Vocabulary, encoder: EncoderConfig, seed: u64) -> Result<Model> {
    let dim = encoder.lev_dim;
    let enc = Encoder::for_vocabulary(encoder, &vocab, seed::derive(seed, "init", 0))?;
    Model::new(preprocess, vocab, enc, TwoCovarianceModel::identity(dim))
}

/// Loss terms and gradients of one pair.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub loss_theta: f64,
    pub loss_phi: f64,
    pub encoder: ParamGrads,
    pub plda: PldaGrad,
}

/// `alpha * contrastive + beta * cross-entropy` for one pair, with the
/// gradients of both parts.
pub fn pair_objective(
    encoder: &Encoder,
    ctx: &ScoringContext,
    docs: [&PreparedDocument; 2],
    same: bool,
    cfg: &TrainConfig,
    mode: Mode,
    dropout_seed: u64,
) -> Result<PairOutcome> {
    let mut r1 = seed::rng(dropout_seed, "dropout", 0);
    let mut r2 = seed::rng(dropout_seed, "dropout", 1);
    let f1 = encoder.forward(docs[0], mode, Some(&mut r1))?;
    let f2 = encoder.forward(docs[1], mode, Some(&mut r2))?;
    let (y1, y2) = (f1.lev(), f2.lev());
    let (loss_theta, g) = contrastive_loss_grad(&y1, &y2, same, cfg.tau_s, cfg.tau_d)?;
    let pg = ctx.pair_loss_grad(&y1, &y2, same);
    let gy1 = &g * cfg.alpha + &pg.y1 * cfg.beta;
    let gy2 = -&g * cfg.alpha + &pg.y2 * cfg.beta;
    let mut grads = ParamGrads::zeros_like(&encoder.params);
    f1.backward(&gy1, &mut grads);
    f2.backward(&gy2, &mut grads);
    let mut plda = pg.model;
    plda.scale(cfg.beta);
    Ok(PairOutcome {
        loss_theta,
        loss_phi: pg.loss,
        encoder: grads,
        plda,
    })
}

fn check_finite_grads(encoder: &Encoder, grads: &ParamGrads, plda: &PldaGrad) -> Result<()> {
    for id in encoder.params.ids() {
        if grads.get(id).iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient in {}", encoder.params.name(id))));
        }
    }
    for (name, ok) in [
        ("plda.mu", plda.mu.iter().all(|v| v.is_finite())),
        ("plda.lb_raw", plda.lb_raw.iter().all(|v| v.is_finite())),
        ("plda.lw_raw", plda.lw_raw.iter().all(|v| v.is_finite())),
    ] {
        if !ok {
            return Err(Error::Numerical(format!("non-finite gradient in {name}")));
        }
    }
    Ok(())
}

fn check_finite_params(encoder: &Encoder, plda: &TwoCovarianceModel) -> Result<()> {
    for id in encoder.params.ids() {
        if encoder.params.get(id).iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite parameter in {}", encoder.params.name(id))));
        }
    }
    if !plda.is_finite() {
        return Err(Error::Numerical("non-finite parameter in the scoring layer".to_owned()));
    }
    assert!(is_spd(&plda.precision_b()) && is_spd(&plda.precision_w()), "precisions lost definiteness");
    Ok(())
}

fn plda_adam(dim: usize, lr: f64) -> Adam {
    Adam::new([dim, dim * dim, dim * dim], lr)
}

fn plda_step(opt: &mut Adam, plda: &mut TwoCovarianceModel, g: &PldaGrad) {
    opt.tick();
    opt.update(0, plda.mu.as_mut_slice(), g.mu.as_slice());
    opt.update(1, plda.lb_raw.as_mut_slice(), g.lb_raw.as_slice());
    opt.update(2, plda.lw_raw.as_mut_slice(), g.lw_raw.as_slice());
}

/// Eval-mode same-author probabilities of prepared pairs.
pub fn pair_probabilities(encoder: &Encoder, plda: &TwoCovarianceModel, pairs: &[PreparedPair]) -> Result<Vec<f64>> {
    let params = plda.precompute_score_params()?;
    pairs
        .par_iter()
        .map(|p| {
            let a = encoder.encode(&p.docs[0])?.0;
            let b = encoder.encode(&p.docs[1])?.0;
            Ok(same_author_probability(score_quadratic(&params, &a, &b)?))
        })
        .collect()
}

/// Overall metric without abstentions.
pub fn dev_overall(encoder: &Encoder, plda: &TwoCovarianceModel, dev: &[PreparedPair]) -> Result<f64> {
    let probs = pair_probabilities(encoder, plda, dev)?;
    let labels: Vec<bool> = dev.iter().map(|p| p.same).collect();
    Ok(evaluate(&probs, &labels)?.overall)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
}

/// Trains ensemble member `index` starting from `init`. With dev pairs the
/// best-scoring epoch is kept; otherwise the last one.
pub fn train_model(init: &Model, set: &TrainingSet, dev: &[PreparedPair], cfg: &TrainConfig, index: usize) -> Result<TrainOutcome> {
    let mut problems = Vec::new();
    cfg.validate(&mut problems);
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if set.pool.documents() < 2 {
        return Err(Error::InvalidArgument("training needs at least two documents".to_owned()));
    }
    let member_seed = seed::derive(cfg.seed, "member", index as u64);
    let mut model = init.clone();
    model.encoder = Encoder::for_vocabulary(init.encoder.config.clone(), &init.vocab, seed::derive(member_seed, "init", 0))?;
    if cfg.standardize_output {
        // a random pair of D-dimensional embeddings with per-coordinate
        // spread s sits at squared distance 2 D s^2 on average
        let mut ids: Vec<&String> = set.docs.keys().collect();
        ids.sort();
        let step = (ids.len() / STANDARDIZE_DOCS).max(1);
        let docs: Vec<&PreparedDocument> = ids.iter().step_by(step).take(STANDARDIZE_DOCS).map(|id| &set.docs[*id]).collect();
        let dim = model.encoder.config.lev_dim as f64;
        let target = (decision_threshold(cfg.tau_s, cfg.tau_d) / (2.0 * dim)).sqrt();
        model.encoder.standardize_output(&docs, target)?;
    }
    let prefix_rows = init.vocab.num_tokens()..init.vocab.embedding_rows();
    let token_table = model.encoder.token_table();
    let mut enc_opt = Adam::new(model.encoder.params.ids().map(|id| model.encoder.params.get(id).len()), cfg.learning_rate);
    let mut plda_opt = plda_adam(model.plda.dim(), cfg.learning_rate);

    let mut report = TrainReport::default();
    let mut best: Option<(f64, Model)> = None;
    for epoch in 0..cfg.epochs {
        let pairs = sample_pairs(&set.pool, seed::derive(member_seed, "epoch", epoch as u64));
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("resampling produced no training pairs".to_owned()));
        }
        let (mut sum_theta, mut sum_phi) = (0.0, 0.0);
        for (b, batch) in pairs.chunks(cfg.batch_size).enumerate() {
            let ctx = ScoringContext::new(&model.plda)?;
            let base = (epoch as u64) << 32 | (b * cfg.batch_size) as u64;
            let outcomes: Vec<PairOutcome> = batch
                .par_iter()
                .enumerate()
                .map(|(k, p): (usize, &PairExample)| {
                    pair_objective(
                        &model.encoder,
                        &ctx,
                        [&set.docs[&p.first.doc_id], &set.docs[&p.second.doc_id]],
                        p.same,
                        cfg,
                        Mode::Train,
                        seed::derive(member_seed, "pair", base + k as u64),
                    )
                })
                .collect::<Result<_>>()?;
            let mut grads = ParamGrads::zeros_like(&model.encoder.params);
            let mut pgrad = PldaGrad::zeros(model.plda.dim());
            for o in &outcomes {
                if !(o.loss_theta.is_finite() && o.loss_phi.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite loss in epoch {epoch}, batch {b}")));
                }
                sum_theta += o.loss_theta;
                sum_phi += o.loss_phi;
                grads.add_assign(&o.encoder);
                pgrad.add_assign(&o.plda);
            }
            let n = 1.0 / batch.len() as f64;
            grads.scale(n);
            pgrad.scale(n);
            if !cfg.trainable_prefix {
                let g = &mut grads.grads[token_table.0];
                for r in prefix_rows.clone() {
                    g.row_mut(r).fill(0.0);
                }
            }
            check_finite_grads(&model.encoder, &grads, &pgrad)?;
            let update_plda = cfg.beta > 0.0;
            let sq = grads.sum_squares() + if update_plda { pgrad.sum_squares() } else { 0.0 };
            let k = clip_factor(sq, cfg.clip_norm);
            grads.scale(k);
            pgrad.scale(k);
            enc_opt.tick();
            for id in model.encoder.params.ids().collect::<Vec<_>>() {
                enc_opt.update(id.0, model.encoder.params.get_mut(id).as_mut_slice(), grads.get(id).as_slice());
            }
            if update_plda {
                plda_step(&mut plda_opt, &mut model.plda, &pgrad);
            }
            check_finite_params(&model.encoder, &model.plda)?;
        }
        let n = pairs.len() as f64;
        let (hb, hw) = model.plda.entropy_diagnostics();
        let dev_score = if dev.is_empty() {
            None
        } else {
            Some(dev_overall(&model.encoder, &model.plda, dev)?)
        };
        report.epochs.push(EpochReport {
            epoch,
            loss_theta: sum_theta / n,
            loss_phi: sum_phi / n,
            log_det_b_inv: hb,
            log_det_w_inv: hw,
            dev_overall: dev_score,
        });
        let score = dev_score.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _)| dev_score.is_none() || score > *s) {
            let mut snapshot = model.clone();
            snapshot.meta = CheckpointMeta {
                model_index: index,
                seed: member_seed,
                epoch,
                dev_overall: dev_score,
            };
            best = Some((score, snapshot));
        }
    }
    let (_, best) = best.expect("at least one epoch");
    if let Some(dir) = &cfg.checkpoint_dir {
        best.save(&checkpoint_path(dir, index))?;
    }
    Ok(TrainOutcome { model: best, report })
}

/// `cfg.ensemble_size` independent members differing only in seed.
pub fn train_ensemble(init: &Model, set: &TrainingSet, dev: &[PreparedPair], cfg: &TrainConfig) -> Result<Vec<TrainOutcome>> {
    (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|i| train_model(init, set, dev, cfg, i))
        .collect()
}

/// Trains only the scoring layer on fixed embeddings keyed by document id.
/// Returns the mean cross-entropy of every epoch.
pub fn train_scoring_layer(
    plda: &mut TwoCovarianceModel,
    pool: &AuthorPool,
    levs: &HashMap<String, Vector>,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let mut opt = plda_adam(plda.dim(), cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let pairs = sample_pairs(pool, seed::derive(cfg.seed, "epoch", epoch as u64));
        let mut total = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let ctx = ScoringContext::new(plda)?;
            let mut g = PldaGrad::zeros(plda.dim());
            for p in batch {
                let out = ctx.pair_loss_grad(&levs[&p.first.doc_id], &levs[&p.second.doc_id], p.same);
                total += out.loss;
                g.add_assign(&out.model);
            }
            g.scale(1.0 / batch.len() as f64);
            g.scale(clip_factor(g.sum_squares(), cfg.clip_norm));
            plda_step(&mut opt, plda, &g);
            if !plda.is_finite() {
                return Err(Error::Numerical("non-finite parameter in the scoring layer".to_owned()));
            }
        }
        losses.push(total / pairs.len().max(1) as f64);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TruthRecord;

    fn toy_encoder() -> EncoderConfig {
        EncoderConfig {
            char_emb_dim: 3,
            char_rnn_dim: 3,
            token_emb_dim: 4,
            word_rnn_dim: 3,
            sent_rnn_dim: 3,
            lev_dim: 3,
            dropout: 0.1,
            max_word_chars: 6,
        }
    }

    fn corpus() -> (Vec<PairRecord>, TruthMap) {
        let styles = [
            ["alpha beta gamma", "beta beta delta"],
            ["one two three", "two three four"],
            ["red green blue", "green blue red"],
            ["cold warm hot", "warm hot cold"],
        ];
        let mut pairs = Vec::new();
        let mut truth = TruthMap::new();
        let mut k = 0;
        for (a, s) in styles.iter().enumerate() {
            for (b, t) in styles.iter().enumerate() {
                if b < a {
                    continue;
                }
                let id = format!("p{k}");
                k += 1;
                let text = |st: &[&str; 2], i: usize| format!("{} {} {}", st[i % 2], st[(i + 1) % 2], i);
                pairs.push(PairRecord {
                    id: id.clone(),
                    fandoms: ["F".into(), "G".into()],
                    texts: [text(s, k), text(t, k + 100)],
                });
                truth.insert(
                    id.clone(),
                    TruthRecord {
                        id,
                        same: a == b,
                        author_ids: [format!("a{a}"), format!("a{b}")],
                    },
                );
            }
        }
        (pairs, truth)
    }

    fn setup() -> (Model, TrainingSet, Vec<PreparedPair>) {
        let (pairs, truth) = corpus();
        let pcfg = PreprocessConfig {
            hop_length: 3,
            overlapping_length: 1,
            min_freq: 1,
            ..PreprocessConfig::default()
        };
        let vocab = build_vocabulary(&pairs, &pcfg).unwrap();
        let set = prepare_training_set(&pairs, &truth, &vocab, &pcfg).unwrap();
        let dev = prepare_pairs(&pairs, &truth, &vocab, &pcfg).unwrap();
        let init = init_model(pcfg, vocab, toy_encoder(), 0).unwrap();
        (init, set, dev)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 1e-2,
            ensemble_size: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn deterministic_reports_and_distinct_members() {
        let (init, set, dev) = setup();
        let a = train_model(&init, &set, &dev, &cfg(), 0).unwrap();
        let b = train_model(&init, &set, &dev, &cfg(), 0).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.model.encoder.params, b.model.encoder.params);
        assert_eq!(a.report.epochs.len(), 3);
        let ens = train_ensemble(&init, &set, &dev, &cfg()).unwrap();
        assert_eq!(ens.len(), 2);
        assert_eq!(ens[0].model.encoder.params, a.model.encoder.params);
        assert_ne!(ens[0].model.encoder.params, ens[1].model.encoder.params);
        let csv = a.report.to_csv();
        assert!(csv.starts_with("epoch,loss_theta,loss_phi,logdetBinv,logdetWinv,dev_overall\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn zero_beta_leaves_scoring_layer_untouched() {
        let (init, set, dev) = setup();
        let c = TrainConfig { beta: 0.0, ..cfg() };
        let out = train_model(&init, &set, &dev, &c, 0).unwrap();
        assert_eq!(out.model.plda, init.plda);
        let c = TrainConfig { alpha: 0.0, ..cfg() };
        let out = train_model(&init, &set, &dev, &c, 0).unwrap();
        assert_ne!(out.model.plda, init.plda);
    }

    #[test]
    fn frozen_prefix_rows_do_not_move() {
        let (init, set, dev) = setup();
        let c = TrainConfig {
            trainable_prefix: false,
            epochs: 1,
            ..cfg()
        };
        let out = train_model(&init, &set, &dev, &c, 0).unwrap();
        let fresh = Encoder::for_vocabulary(
            init.encoder.config.clone(),
            &init.vocab,
            seed::derive(seed::derive(c.seed, "member", 0), "init", 0),
        )
        .unwrap();
        let t = out.model.encoder.token_table();
        for r in init.vocab.num_tokens()..init.vocab.embedding_rows() {
            assert_eq!(out.model.encoder.params.get(t).row(r), fresh.params.get(t).row(r));
        }
        assert_ne!(out.model.encoder.params.get(t).row(2), fresh.params.get(t).row(2));
    }

    #[test]
    fn checkpoint_written_and_reloads_dev_score() {
        let (init, set, dev) = setup();
        let dir = tempfile::tempdir().unwrap();
        let c = TrainConfig {
            checkpoint_dir: Some(dir.path().to_owned()),
            ..cfg()
        };
        let out = train_model(&init, &set, &dev, &c, 1).unwrap();
        let back = Model::load(&checkpoint_path(dir.path(), 1)).unwrap();
        let a = dev_overall(&out.model.encoder, &out.model.plda, &dev).unwrap();
        let b = dev_overall(&back.encoder, &back.plda, &dev).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(back.meta.dev_overall, Some(a));
    }

    #[test]
    fn config_problems_reported_together() {
        let c = TrainConfig {
            epochs: 0,
            alpha: 0.0,
            beta: 0.0,
            tau_s: 3.0,
            ..TrainConfig::default()
        };
        let mut p = Vec::new();
        c.validate(&mut p);
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let (init, set, _) = setup();
        let mut rng = seed::rng(5, "test", 0);
        let mut plda = crate::plda::TwoCovarianceModel::identity(3);
        use rand::Rng;
        for i in 0..3 {
            plda.mu[i] = rng.random_range(-0.3..0.3);
            for j in 0..=i {
                plda.lb_raw[(i, j)] = rng.random_range(-0.3..0.3);
                plda.lw_raw[(i, j)] = rng.random_range(-0.3..0.3);
            }
        }
        let ids: Vec<&String> = set.docs.keys().collect();
        let (d1, d2) = (&set.docs[ids[0]], &set.docs[ids[1]]);
        let mut c = cfg();
        let enc = init.encoder.clone();
        let base = crate::encoder::lev_distance(&enc.encode(d1).unwrap().0, &enc.encode(d2).unwrap().0).unwrap();
        c.tau_s = 0.25 * base;
        c.tau_d = 4.0 * base;
        let ctx = ScoringContext::new(&plda).unwrap();
        let out = pair_objective(&enc, &ctx, [d1, d2], true, &c, Mode::Eval, 0).unwrap();
        let objective = |e: &Encoder, p: &TwoCovarianceModel| {
            let ctx = ScoringContext::new(p).unwrap();
            let o = pair_objective(e, &ctx, [d1, d2], true, &c, Mode::Eval, 0).unwrap();
            c.alpha * o.loss_theta + c.beta * o.loss_phi
        };
        let mut params = enc.params.clone();
        let config = enc.config.clone();
        let checks = finite_difference_check(
            &mut params,
            &out.encoder,
            |s| objective(&Encoder::from_params(config.clone(), s.clone()).unwrap(), &plda),
            1e-4,
            4,
            9,
        );
        for g in checks {
            assert!(g.max_rel_error <= 1e-3, "{} {}", g.name, g.max_rel_error);
        }
        let eps = 1e-4;
        for i in 0..3 {
            let mut p = plda.clone();
            let mut m = plda.clone();
            p.mu[i] += eps;
            m.mu[i] -= eps;
            let n = (objective(&enc, &p) - objective(&enc, &m)) / (2.0 * eps);
            assert!(crate::graph::relative_error(out.plda.mu[i], n) <= 1e-3);
        }
    }
}
