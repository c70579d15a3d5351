//! Hierarchical attention encoder: characters to words, words to sentence
//! units, units to a document, then a dense layer to the embedding vector.
//!
//! Each sentence unit is fed to the word tier as `[prefix, t1, .., tn]`. The
//! prefix row comes from its own trainable slot or, for fandoms unknown to
//! the vocabulary, from the mean of the fandom's token rows. Its
//! characters-to-word part is zero.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, ParamGrads, ParamId, ParamStore, Var};
use crate::plda::Vector;
use crate::preprocess::{Prefix, PreparedDocument, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub char_emb_dim: usize,
    pub char_rnn_dim: usize,
    pub token_emb_dim: usize,
    pub word_rnn_dim: usize,
    pub sent_rnn_dim: usize,
    pub lev_dim: usize,
    pub dropout: f64,
    /// Characters beyond this many are ignored by the characters-to-word
    /// recurrence.
    pub max_word_chars: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            char_emb_dim: 8,
            char_rnn_dim: 8,
            token_emb_dim: 16,
            word_rnn_dim: 16,
            sent_rnn_dim: 16,
            lev_dim: 8,
            dropout: 0.1,
            max_word_chars: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self, problems: &mut Vec<String>) {
        for (name, v) in [
            ("char_emb_dim", self.char_emb_dim),
            ("char_rnn_dim", self.char_rnn_dim),
            ("token_emb_dim", self.token_emb_dim),
            ("word_rnn_dim", self.word_rnn_dim),
            ("sent_rnn_dim", self.sent_rnn_dim),
            ("lev_dim", self.lev_dim),
            ("max_word_chars", self.max_word_chars),
        ] {
            if v == 0 {
                problems.push(format!("encoder.{name} must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("encoder.dropout must be in [0, 1), got {}", self.dropout));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Attention weights of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// Per unit, one weight per position; position 0 is the prefix.
    pub word: Vec<Vec<f64>>,
    pub sentence: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Lstm {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
    hidden: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    w: ParamId,
    b: ParamId,
    v: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    char_emb: ParamId,
    token_emb: ParamId,
    char_rnn: Lstm,
    word_fwd: Lstm,
    word_bwd: Lstm,
    word_att: Attention,
    sent_fwd: Lstm,
    sent_bwd: Lstm,
    sent_att: Attention,
    dense_w: ParamId,
    dense_b: ParamId,
}

/// Encoder parameters together with their configuration.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamStore,
    layout: Layout,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

/// Parameter names and shapes in registration order.
fn shapes(cfg: &EncoderConfig, chars: usize, token_rows: usize) -> Vec<(String, usize, usize)> {
    let mut v = vec![
        ("char_emb".to_owned(), chars, cfg.char_emb_dim),
        ("token_emb".to_owned(), token_rows, cfg.token_emb_dim),
    ];
    let mut lstm = |name: &str, input: usize, hidden: usize| {
        v.push((format!("{name}.wx"), input, 4 * hidden));
        v.push((format!("{name}.wh"), hidden, 4 * hidden));
        v.push((format!("{name}.b"), 1, 4 * hidden));
    };
    let word_in = cfg.token_emb_dim + cfg.char_rnn_dim;
    lstm("char_rnn", cfg.char_emb_dim, cfg.char_rnn_dim);
    lstm("word_fwd", word_in, cfg.word_rnn_dim);
    lstm("word_bwd", word_in, cfg.word_rnn_dim);
    lstm("sent_fwd", 2 * cfg.word_rnn_dim, cfg.sent_rnn_dim);
    lstm("sent_bwd", 2 * cfg.word_rnn_dim, cfg.sent_rnn_dim);
    let (w2, s2) = (2 * cfg.word_rnn_dim, 2 * cfg.sent_rnn_dim);
    v.extend([
        ("word_att.w".to_owned(), w2, w2),
        ("word_att.b".to_owned(), 1, w2),
        ("word_att.v".to_owned(), w2, 1),
        ("sent_att.w".to_owned(), s2, s2),
        ("sent_att.b".to_owned(), 1, s2),
        ("sent_att.v".to_owned(), s2, 1),
        ("dense.w".to_owned(), s2, cfg.lev_dim),
        ("dense.b".to_owned(), 1, cfg.lev_dim),
    ]);
    v
}

impl Encoder {
    /// Randomly initialized encoder for a character table of `chars` rows and
    /// a token table of `token_rows` rows (tokens plus prefix slots).
    pub fn new(config: EncoderConfig, chars: usize, token_rows: usize, seed: u64) -> Result<Self> {
        let mut problems = Vec::new();
        config.validate(&mut problems);
        if chars < 2 || token_rows < 2 {
            problems.push("vocabulary tables need at least the two reserved rows".to_owned());
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut rng = crate::seed::rng(seed, "encoder-init", 0);
        let mut params = ParamStore::new();
        for (name, r, c) in shapes(&config, chars, token_rows) {
            let m = if name.ends_with(".b") {
                Mat::zeros(r, c)
            } else if name.ends_with("_emb") {
                // lookup tables at unit scale; Glorot over the vocabulary
                // size would shrink every downstream activation
                Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
            } else {
                glorot(&mut rng, r, c)
            };
            params.add(name, m);
        }
        Self::from_params(config, params)
    }

    /// Encoder sized for `vocab`, with every prefix slot initialized to the
    /// mean of its fandom's token rows.
    pub fn for_vocabulary(config: EncoderConfig, vocab: &Vocabulary, seed: u64) -> Result<Self> {
        let mut enc = Self::new(config, vocab.num_chars(), vocab.embedding_rows(), seed)?;
        enc.init_prefix_slots(vocab);
        Ok(enc)
    }

    pub fn init_prefix_slots(&mut self, vocab: &Vocabulary) {
        let id = self.layout.token_emb;
        let slots: Vec<(u32, Vec<u32>)> = vocab
            .prefixes()
            .map(|(f, slot)| (slot, crate::preprocess::fandom_token_ids(f, vocab)))
            .collect();
        let table = self.params.get_mut(id);
        for (slot, ids) in slots {
            let mut acc = nalgebra::RowDVector::zeros(table.ncols());
            for &t in &ids {
                acc += table.row(t as usize);
            }
            acc /= ids.len() as f64;
            table.row_mut(slot as usize).copy_from(&acc);
        }
    }

    /// Wraps existing tensors; names and shapes are validated.
    pub fn from_params(config: EncoderConfig, params: ParamStore) -> Result<Self> {
        let mut problems = Vec::new();
        config.validate(&mut problems);
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let find = |n: &str| params.find(n).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{n}`")));
        let chars = params.get(find("char_emb")?).nrows();
        let token_rows = params.get(find("token_emb")?).nrows();
        let expected = shapes(&config, chars, token_rows);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} encoder tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, r, c) in &expected {
            let m = params.get(find(name)?);
            if (m.nrows(), m.ncols()) != (*r, *c) {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` is {}x{}, configuration needs {r}x{c}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let lstm = |n: &str, hidden| -> Result<Lstm> {
            Ok(Lstm {
                wx: find(&format!("{n}.wx"))?,
                wh: find(&format!("{n}.wh"))?,
                b: find(&format!("{n}.b"))?,
                hidden,
            })
        };
        let att = |n: &str| -> Result<Attention> {
            Ok(Attention {
                w: find(&format!("{n}.w"))?,
                b: find(&format!("{n}.b"))?,
                v: find(&format!("{n}.v"))?,
            })
        };
        let layout = Layout {
            char_emb: find("char_emb")?,
            token_emb: find("token_emb")?,
            char_rnn: lstm("char_rnn", config.char_rnn_dim)?,
            word_fwd: lstm("word_fwd", config.word_rnn_dim)?,
            word_bwd: lstm("word_bwd", config.word_rnn_dim)?,
            word_att: att("word_att")?,
            sent_fwd: lstm("sent_fwd", config.sent_rnn_dim)?,
            sent_bwd: lstm("sent_bwd", config.sent_rnn_dim)?,
            sent_att: att("sent_att")?,
            dense_w: find("dense.w")?,
            dense_b: find("dense.b")?,
        };
        Ok(Self { config, params, layout })
    }

    pub fn token_rows(&self) -> usize {
        self.params.get(self.layout.token_emb).nrows()
    }

    pub fn char_rows(&self) -> usize {
        self.params.get(self.layout.char_emb).nrows()
    }

    /// Rescales and shifts the output layer so the eval-mode embeddings of
    /// `docs` have zero mean and standard deviation `target_std` in every
    /// coordinate. Coordinates without spread are left alone.
    pub fn standardize_output(&mut self, docs: &[&PreparedDocument], target_std: f64) -> Result<()> {
        if docs.len() < 2 {
            return Err(Error::InvalidArgument("output standardization needs at least two documents".to_owned()));
        }
        let levs = docs.iter().map(|d| Ok(self.encode(d)?.0)).collect::<Result<Vec<_>>>()?;
        let n = levs.len() as f64;
        let (wid, bid) = (self.layout.dense_w, self.layout.dense_b);
        for k in 0..self.config.lev_dim {
            let mean = levs.iter().map(|y| y[k]).sum::<f64>() / n;
            let std = (levs.iter().map(|y| (y[k] - mean).powi(2)).sum::<f64>() / n).sqrt();
            if std < 1e-12 {
                continue;
            }
            let gain = target_std / std;
            self.params.get_mut(wid).column_mut(k).scale_mut(gain);
            let b = self.params.get_mut(bid);
            b[(0, k)] = (b[(0, k)] - mean) * gain;
        }
        Ok(())
    }

    pub fn token_table(&self) -> ParamId {
        self.layout.token_emb
    }

    pub fn is_finite(&self) -> bool {
        self.params.ids().all(|id| self.params.get(id).iter().all(|v| v.is_finite()))
    }

    fn check_ids(&self, doc: &PreparedDocument) -> Result<()> {
        if doc.units.is_empty() || doc.units.iter().all(|u| u.token_ids.is_empty()) {
            return Err(Error::InvalidArgument("cannot encode an empty document".to_owned()));
        }
        let (tr, cr) = (self.token_rows() as u32, self.char_rows() as u32);
        let bad_token = |t: u32| t >= tr;
        let prefix_ok = match &doc.prefix {
            Prefix::Slot(s) => !bad_token(*s),
            Prefix::Average(ids) => !ids.is_empty() && !ids.iter().any(|&t| bad_token(t)),
        };
        let units_ok = doc.units.iter().all(|u| {
            u.token_ids.len() == u.char_ids.len()
                && !u.token_ids.iter().any(|&t| bad_token(t))
                && u.char_ids.iter().flatten().all(|&c| c < cr)
        });
        if !prefix_ok || !units_ok {
            return Err(Error::InvalidArgument(
                "document ids fall outside the encoder's embedding tables".to_owned(),
            ));
        }
        Ok(())
    }

    /// Runs the encoder, keeping the tape for a later backward pass.
    /// `rng` drives dropout and is only used in train mode.
    pub fn forward<'p>(&'p self, doc: &PreparedDocument, mode: Mode, rng: Option<&mut ChaCha8Rng>) -> Result<Forward<'p>> {
        self.check_ids(doc)?;
        let units: Vec<_> = doc.units.iter().filter(|u| !u.token_ids.is_empty()).collect();
        let cfg = &self.config;
        let l = &self.layout;
        let mut g = Graph::new(&self.params);
        let mut drop = match (mode, rng) {
            (Mode::Train, Some(r)) if cfg.dropout > 0.0 => Some((r, cfg.dropout)),
            _ => None,
        };

        // characters to words, over the distinct spellings of the document
        let mut spelling: HashMap<&[u32], usize> = HashMap::new();
        let mut uniq: Vec<&[u32]> = Vec::new();
        let mut pos_char: Vec<Vec<usize>> = Vec::with_capacity(units.len());
        for u in &units {
            pos_char.push(
                u.char_ids
                    .iter()
                    .map(|c| {
                        let c = &c[..c.len().min(cfg.max_word_chars)];
                        *spelling.entry(c).or_insert_with(|| {
                            uniq.push(c);
                            uniq.len() - 1
                        })
                    })
                    .collect(),
            );
        }
        let char_final = {
            let n = uniq.len();
            let steps = uniq.iter().map(|c| c.len()).max().unwrap_or(0);
            let cell = self.bind(&mut g, l.char_rnn);
            let mut h = g.constant(Mat::zeros(n, l.char_rnn.hidden));
            let mut c = g.constant(Mat::zeros(n, l.char_rnn.hidden));
            for t in 0..steps {
                let ids: Vec<usize> = uniq.iter().map(|w| w.get(t).map_or(0, |&x| x as usize)).collect();
                let mask: Vec<bool> = uniq.iter().map(|w| t < w.len()).collect();
                let x = g.gather(l.char_emb, ids);
                (h, c) = step(&mut g, &cell, x, h, c, &mask);
            }
            h
        };

        // word tier
        let flat_tokens: Vec<usize> = units.iter().flat_map(|u| u.token_ids.iter().map(|&t| t as usize)).collect();
        let tok = g.gather(l.token_emb, flat_tokens);
        let prefix = match &doc.prefix {
            Prefix::Slot(s) => g.gather(l.token_emb, vec![*s as usize]),
            Prefix::Average(ids) => {
                let rows = g.gather(l.token_emb, ids.iter().map(|&t| t as usize).collect());
                g.mean_rows(rows)
            }
        };
        let n_units = units.len();
        let steps = 1 + units.iter().map(|u| u.token_ids.len()).max().unwrap_or(0);
        let mut offsets = Vec::with_capacity(n_units);
        let mut acc = 0;
        for u in &units {
            offsets.push(acc);
            acc += u.token_ids.len();
        }
        let lens: Vec<usize> = units.iter().map(|u| 1 + u.token_ids.len()).collect();
        let mut inputs = Vec::with_capacity(steps);
        {
            let p = g.select_rows(prefix, vec![Some(0); n_units]);
            let z = g.constant(Mat::zeros(n_units, cfg.char_rnn_dim));
            inputs.push(g.concat_cols(&[p, z]));
        }
        for t in 1..steps {
            let rows: Vec<Option<usize>> = (0..n_units).map(|u| (t < lens[u]).then(|| offsets[u] + t - 1)).collect();
            let chars: Vec<Option<usize>> = (0..n_units).map(|u| (t < lens[u]).then(|| pos_char[u][t - 1])).collect();
            let a = g.select_rows(tok, rows);
            let b = g.select_rows(char_final, chars);
            inputs.push(g.concat_cols(&[a, b]));
        }
        let masks: Vec<Vec<bool>> = (0..steps).map(|t| lens.iter().map(|&n| t < n).collect()).collect();
        let word_states = self.bidirectional(&mut g, l.word_fwd, l.word_bwd, &inputs, &masks, n_units);
        let (unit_emb, word_att) = attend(&mut g, l.word_att, &word_states, Some(&masks));
        let unit_emb = match drop {
            Some((ref mut r, p)) => dropout(&mut g, unit_emb, p, r),
            None => unit_emb,
        };

        // sentence tier
        let seq: Vec<Var> = (0..n_units).map(|k| g.slice_rows(unit_emb, k, 1)).collect();
        let full = vec![vec![true]; n_units];
        let sent_states = self.bidirectional(&mut g, l.sent_fwd, l.sent_bwd, &seq, &full, 1);
        let (doc_emb, sent_att) = attend(&mut g, l.sent_att, &sent_states, None);
        let doc_emb = match drop {
            Some((r, p)) => dropout(&mut g, doc_emb, p, r),
            None => doc_emb,
        };

        let w = g.param(l.dense_w);
        let b = g.param(l.dense_b);
        let y = g.matmul(doc_emb, w);
        let lev = g.add_row(y, b);
        Ok(Forward {
            graph: g,
            lev,
            word_att,
            sent_att,
            lens,
        })
    }

    /// Deterministic evaluation-mode encoding.
    pub fn encode(&self, doc: &PreparedDocument) -> Result<(Vector, AttentionTrace)> {
        let f = self.forward(doc, Mode::Eval, None)?;
        Ok((f.lev(), f.trace()))
    }

    fn bind(&self, g: &mut Graph, l: Lstm) -> Cell {
        Cell {
            wx: g.param(l.wx),
            wh: g.param(l.wh),
            b: g.param(l.b),
            hidden: l.hidden,
        }
    }

    /// Forward and backward passes; the returned states concatenate both
    /// directions per step.
    fn bidirectional(&self, g: &mut Graph, fwd: Lstm, bwd: Lstm, inputs: &[Var], masks: &[Vec<bool>], batch: usize) -> Vec<Var> {
        let run = |g: &mut Graph, l: Lstm, order: &mut dyn Iterator<Item = usize>| {
            let cell = self.bind(g, l);
            let mut h = g.constant(Mat::zeros(batch, l.hidden));
            let mut c = g.constant(Mat::zeros(batch, l.hidden));
            let mut out = vec![h; inputs.len()];
            for t in order {
                (h, c) = step(g, &cell, inputs[t], h, c, &masks[t]);
                out[t] = h;
            }
            out
        };
        let f = run(g, fwd, &mut (0..inputs.len()));
        let b = run(g, bwd, &mut (0..inputs.len()).rev());
        f.into_iter().zip(b).map(|(a, b)| g.concat_cols(&[a, b])).collect()
    }
}

struct Cell {
    wx: Var,
    wh: Var,
    b: Var,
    hidden: usize,
}

/// One LSTM step; rows with a false mask keep their previous state.
fn step(g: &mut Graph, cell: &Cell, x: Var, h: Var, c: Var, mask: &[bool]) -> (Var, Var) {
    let n = cell.hidden;
    let zx = g.matmul(x, cell.wx);
    let zh = g.matmul(h, cell.wh);
    let z = g.add(zx, zh);
    let z = g.add_row(z, cell.b);
    let i = g.slice_cols(z, 0, n);
    let i = g.sigmoid(i);
    let f = g.slice_cols(z, n, n);
    let f = g.sigmoid(f);
    let o = g.slice_cols(z, 2 * n, n);
    let o = g.sigmoid(o);
    let u = g.slice_cols(z, 3 * n, n);
    let u = g.tanh(u);
    let fc = g.mul(f, c);
    let iu = g.mul(i, u);
    let c_new = g.add(fc, iu);
    let tc = g.tanh(c_new);
    let h_new = g.mul(o, tc);
    if mask.iter().all(|&m| m) {
        return (h_new, c_new);
    }
    let m = g.constant(Mat::from_iterator(mask.len(), 1, mask.iter().map(|&m| f64::from(u8::from(m)))));
    let keep = |g: &mut Graph, new: Var, old: Var| {
        let d = g.sub(new, old);
        let d = g.mul_col(d, m);
        g.add(old, d)
    };
    (keep(g, h_new, h), keep(g, c_new, c))
}

/// Additive attention over `states` (each `batch x dim`); returns the
/// weighted sum and the `batch x steps` weight matrix.
fn attend(g: &mut Graph, a: Attention, states: &[Var], masks: Option<&[Vec<bool>]>) -> (Var, Var) {
    let w = g.param(a.w);
    let b = g.param(a.b);
    let v = g.param(a.v);
    let scores: Vec<Var> = states
        .iter()
        .map(|&h| {
            let z = g.matmul(h, w);
            let z = g.add_row(z, b);
            let z = g.tanh(z);
            g.matmul(z, v)
        })
        .collect();
    let mut s = g.concat_cols(&scores);
    if let Some(masks) = masks {
        let rows = masks[0].len();
        let pen = Mat::from_fn(rows, masks.len(), |r, t| if masks[t][r] { 0.0 } else { -1e30 });
        let pen = g.constant(pen);
        s = g.add(s, pen);
    }
    let weights = g.softmax_rows(s);
    let mut sum = None;
    for (t, &h) in states.iter().enumerate() {
        let col = g.slice_cols(weights, t, 1);
        let term = g.mul_col(h, col);
        sum = Some(match sum {
            None => term,
            Some(acc) => g.add(acc, term),
        });
    }
    (sum.expect("at least one step"), weights)
}

fn dropout(g: &mut Graph, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Var {
    let v = g.value(x);
    let keep = 1.0 / (1.0 - p);
    let m = Mat::from_fn(v.nrows(), v.ncols(), |_, _| if rng.random::<f64>() < p { 0.0 } else { keep });
    let m = g.constant(m);
    g.mul(x, m)
}

/// A recorded forward pass.
pub struct Forward<'p> {
    graph: Graph<'p>,
    lev: Var,
    word_att: Var,
    sent_att: Var,
    lens: Vec<usize>,
}

impl Forward<'_> {
    pub fn lev(&self) -> Vector {
        Vector::from_column_slice(self.graph.value(self.lev).as_slice())
    }

    pub fn trace(&self) -> AttentionTrace {
        let w = self.graph.value(self.word_att);
        let word = self
            .lens
            .iter()
            .enumerate()
            .map(|(u, &n)| (0..n).map(|t| w[(u, t)]).collect())
            .collect();
        let s = self.graph.value(self.sent_att);
        AttentionTrace {
            word,
            sentence: s.iter().copied().collect(),
        }
    }

    /// Accumulates `d loss / d params` given `d loss / d lev`.
    pub fn backward(&self, grad_lev: &Vector, grads: &mut ParamGrads) {
        let seed = Mat::from_row_slice(1, grad_lev.len(), grad_lev.as_slice());
        self.graph.backward(self.lev, seed, grads);
    }
}

fn check_dims(y1: &Vector, y2: &Vector) -> Result<()> {
    if y1.len() != y2.len() {
        return Err(Error::DimensionMismatch {
            expected: y1.len(),
            actual: y2.len(),
        });
    }
    Ok(())
}

/// Squared Euclidean distance.
pub fn lev_distance(y1: &Vector, y2: &Vector) -> Result<f64> {
    check_dims(y1, y2)?;
    Ok((y1 - y2).norm_squared())
}

fn check_margins(tau_s: f64, tau_d: f64) -> Result<()> {
    if tau_s >= tau_d {
        return Err(Error::InvalidArgument(format!("tau_s ({tau_s}) must be below tau_d ({tau_d})")));
    }
    Ok(())
}

pub fn contrastive_loss(y1: &Vector, y2: &Vector, same: bool, tau_s: f64, tau_d: f64) -> Result<f64> {
    Ok(contrastive_loss_grad(y1, y2, same, tau_s, tau_d)?.0)
}

/// Loss and its gradient with respect to `y1` (the gradient for `y2` is the
/// negation).
pub fn contrastive_loss_grad(y1: &Vector, y2: &Vector, same: bool, tau_s: f64, tau_d: f64) -> Result<(f64, Vector)> {
    check_margins(tau_s, tau_d)?;
    check_dims(y1, y2)?;
    let delta = y1 - y2;
    let d = delta.norm_squared();
    let (hinge, sign) = if same { ((d - tau_s).max(0.0), 1.0) } else { ((tau_d - d).max(0.0), -1.0) };
    Ok((hinge * hinge, delta * (4.0 * sign * hinge)))
}

pub fn decision_threshold(tau_s: f64, tau_d: f64) -> f64 {
    0.5 * (tau_s + tau_d)
}

/// `Some(true)` for a same-author decision, `None` exactly at the threshold.
pub fn distance_decision(distance: f64, tau: f64) -> Option<bool> {
    if distance < tau {
        Some(true)
    } else if distance > tau {
        Some(false)
    } else {
        None
    }
}
