//! Synthetic data: a text corpus whose authors differ in token preferences,
//! and embeddings drawn from a known two-covariance model.

use nalgebra::Cholesky;
use rand::Rng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::{PairRecord, TruthMap, TruthRecord};
use crate::error::{Error, Result};
use crate::plda::{Matrix, Vector};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub authors: usize,
    pub min_docs: usize,
    pub max_docs: usize,
    pub tokens_per_doc: usize,
    /// Size of the vocabulary every author draws from.
    pub shared_words: usize,
    /// Words each author favours.
    pub style_words: usize,
    /// Probability that a token comes from the author's favoured words.
    pub style_mass: f64,
    /// Words only this author uses.
    pub signature_words: usize,
    pub signature_mass: f64,
    pub fandoms: usize,
    pub fandom_words: usize,
    pub topic_mass: f64,
    pub dev_pairs: usize,
    pub test_pairs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            authors: 100,
            min_docs: 2,
            max_docs: 4,
            tokens_per_doc: 500,
            shared_words: 300,
            style_words: 12,
            style_mass: 0.2,
            signature_words: 4,
            signature_mass: 0.08,
            fandoms: 6,
            fandom_words: 25,
            topic_mass: 0.1,
            dev_pairs: 100,
            test_pairs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Subset {
    pub pairs: Vec<PairRecord>,
    pub truth: TruthMap,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Subset,
    pub dev: Subset,
    pub test: Subset,
}

struct Author {
    style: Vec<usize>,
    signature: Vec<String>,
    sentence_len: (usize, usize),
    comma_rate: f64,
}

struct Lexicon {
    shared: Vec<String>,
    fandom: Vec<Vec<String>>,
    fandom_names: Vec<String>,
}

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Pronounceable pseudo-word for index `i`, distinct for distinct `i`.
fn pseudo_word(mut i: usize, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        let k = i % (ONSETS.len() * NUCLEI.len());
        i /= ONSETS.len() * NUCLEI.len();
        w.push_str(ONSETS[k / NUCLEI.len()]);
        w.push_str(NUCLEI[k % NUCLEI.len()]);
    }
    w
}

impl Lexicon {
    fn new(cfg: &SynthConfig) -> Self {
        let shared = (0..cfg.shared_words).map(|i| pseudo_word(i, 2 + i % 2)).collect();
        let fandom = (0..cfg.fandoms)
            .map(|f| (0..cfg.fandom_words).map(|j| format!("{}x", pseudo_word(f * cfg.fandom_words + j, 3))).collect())
            .collect();
        let fandom_names = (0..cfg.fandoms).map(|f| format!("Saga {}", pseudo_word(f, 2))).collect();
        Self {
            shared,
            fandom,
            fandom_names,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.authors >= 2
            && self.min_docs >= 2
            && self.min_docs <= self.max_docs
            && self.tokens_per_doc >= 1
            && self.style_words >= 1
            && self.style_words <= self.shared_words
            && self.fandoms >= 1
            && self.fandom_words >= 1
            && (0.0..=1.0).contains(&self.style_mass)
            && (0.0..=1.0).contains(&self.topic_mass)
            && (0.0..=1.0).contains(&self.signature_mass)
            && (self.signature_words > 0 || self.signature_mass == 0.0)
            && self.style_mass + self.topic_mass + self.signature_mass <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("inconsistent synthetic corpus settings: {self:?}")))
        }
    }
}

fn document(author: &Author, lex: &Lexicon, fandom: usize, cfg: &SynthConfig, zipf: &Zipf<f64>, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    let mut in_sentence = 0;
    let mut target = rng.random_range(author.sentence_len.0..=author.sentence_len.1);
    for _ in 0..cfg.tokens_per_doc {
        let u: f64 = rng.random();
        let word = if u < cfg.style_mass {
            &lex.shared[*author.style.choose(rng).expect("style words")]
        } else if u < cfg.style_mass + cfg.topic_mass {
            lex.fandom[fandom].choose(rng).expect("fandom words")
        } else if u < cfg.style_mass + cfg.topic_mass + cfg.signature_mass {
            author.signature.choose(rng).expect("signature words")
        } else {
            &lex.shared[zipf.sample(rng) as usize - 1]
        };
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
        in_sentence += 1;
        if in_sentence >= target {
            out.push_str(" .");
            in_sentence = 0;
            target = rng.random_range(author.sentence_len.0..=author.sentence_len.1);
        } else if rng.random::<f64>() < author.comma_rate {
            out.push_str(" ,");
        }
    }
    out
}

fn truth_record(id: &str, a: usize, b: usize) -> TruthRecord {
    TruthRecord {
        id: id.to_owned(),
        same: a == b,
        author_ids: [format!("author-{a:03}"), format!("author-{b:03}")],
    }
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    lex: Lexicon,
    authors: Vec<Author>,
    zipf: Zipf<f64>,
}

impl Generator<'_> {
    fn doc(&self, author: usize, rng: &mut ChaCha8Rng) -> (String, String) {
        let f = rng.random_range(0..self.cfg.fandoms);
        let text = document(&self.authors[author], &self.lex, f, self.cfg, &self.zipf, rng);
        (self.lex.fandom_names[f].clone(), text)
    }

    /// Balanced pairs of fresh documents.
    fn held_out(&self, n: usize, prefix: &str, rng: &mut ChaCha8Rng) -> Subset {
        let mut pairs = Vec::with_capacity(n);
        let mut truth = TruthMap::new();
        for k in 0..n {
            let a = rng.random_range(0..self.authors.len());
            let b = if k % 2 == 0 {
                a
            } else {
                (a + rng.random_range(1..self.authors.len())) % self.authors.len()
            };
            let (f1, t1) = self.doc(a, rng);
            let (f2, t2) = self.doc(b, rng);
            let id = format!("{prefix}-{k:05}");
            pairs.push(PairRecord {
                id: id.clone(),
                fandoms: [f1, f2],
                texts: [t1, t2],
            });
            truth.insert(id.clone(), truth_record(&id, a, b));
        }
        Subset { pairs, truth }
    }
}

/// Closed-set corpus: dev and test pairs use fresh documents by the training
/// authors.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed, "synth", 0);
    let zipf = Zipf::new(cfg.shared_words as f64, 1.1).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let authors = (0..cfg.authors)
        .map(|a| {
            let style = rand::seq::index::sample(&mut rng, cfg.shared_words, cfg.style_words).into_vec();
            // four syllables keep these apart from the shared and fandom words
            let signature = (0..cfg.signature_words).map(|j| pseudo_word(a * cfg.signature_words + j, 4)).collect();
            let lo = rng.random_range(6..14);
            Author {
                style,
                signature,
                sentence_len: (lo, lo + rng.random_range(2..8)),
                comma_rate: rng.random_range(0.0..0.15),
            }
        })
        .collect();
    let g = Generator {
        cfg,
        lex: Lexicon::new(cfg),
        authors,
        zipf,
    };

    // every training document appears in exactly one pair, except that an
    // odd leftover is paired with the first document again
    let mut docs: Vec<(usize, String, String)> = Vec::new();
    for a in 0..cfg.authors {
        for _ in 0..rng.random_range(cfg.min_docs..=cfg.max_docs) {
            let (f, t) = g.doc(a, &mut rng);
            docs.push((a, f, t));
        }
    }
    docs.shuffle(&mut rng);
    let mut train = Subset {
        pairs: Vec::new(),
        truth: TruthMap::new(),
    };
    let mut k = 0;
    while k < docs.len() {
        let (i, j) = if k + 1 < docs.len() { (k, k + 1) } else { (k, 0) };
        let id = format!("train-{:05}", train.pairs.len());
        train.pairs.push(PairRecord {
            id: id.clone(),
            fandoms: [docs[i].1.clone(), docs[j].1.clone()],
            texts: [docs[i].2.clone(), docs[j].2.clone()],
        });
        train.truth.insert(id.clone(), truth_record(&id, docs[i].0, docs[j].0));
        k += 2;
    }
    let dev = g.held_out(cfg.dev_pairs, "dev", &mut rng);
    let test = g.held_out(cfg.test_pairs, "test", &mut rng);
    Ok(SynthCorpus { train, dev, test })
}

/// Embeddings from the two-covariance model: per author `x ~ N(mu, B⁻¹)`,
/// per document `y = x + e` with `e ~ N(0, W⁻¹)`. Returns `(author, y)`.
pub fn sample_levs(
    mu: &Vector,
    between_cov: &Matrix,
    within_cov: &Matrix,
    authors: usize,
    per_author: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, Vector)>> {
    let d = mu.len();
    let factor = |m: &Matrix, what: &str| {
        Cholesky::new(m.clone())
            .map(|c| c.l())
            .ok_or_else(|| Error::InvalidArgument(format!("{what} covariance is not positive definite")))
    };
    let lb = factor(between_cov, "between-author")?;
    let lw = factor(within_cov, "within-author")?;
    let normal = |rng: &mut ChaCha8Rng| Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
    let mut out = Vec::with_capacity(authors * per_author);
    for a in 0..authors {
        let x = mu + &lb * normal(rng);
        for _ in 0..per_author {
            out.push((a, &x + &lw * normal(rng)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{author_records, dataset_stats};

    fn small() -> SynthConfig {
        SynthConfig {
            authors: 10,
            tokens_per_doc: 60,
            dev_pairs: 10,
            test_pairs: 20,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn corpus_shape() {
        let c = generate_corpus(&small()).unwrap();
        let (records, _) = author_records(&c.train.pairs, &c.train.truth).unwrap();
        let mut per_author = std::collections::HashMap::<&str, usize>::new();
        for r in &records {
            *per_author.entry(&r.author_id).or_default() += 1;
        }
        assert_eq!(per_author.len(), 10);
        assert!(per_author.values().all(|&n| (2..=4).contains(&n)));
        let s = dataset_stats(&c.test.pairs, &c.test.truth);
        assert_eq!(s.pairs, 20);
        assert_eq!(s.same, 10);
        assert_eq!(c.dev.pairs.len(), 10);
    }

    #[test]
    fn seeded() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(a.train.pairs, b.train.pairs);
        let c = generate_corpus(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train.pairs, c.train.pairs);
    }

    #[test]
    fn lev_sample_moments() {
        let d = 2;
        let mu = Vector::from_vec(vec![1.0, -1.0]);
        let b = Matrix::identity(d, d);
        let w = Matrix::identity(d, d) * 0.1;
        let mut rng = seed::rng(0, "test", 0);
        let levs = sample_levs(&mu, &b, &w, 2000, 2, &mut rng).unwrap();
        let mean = levs.iter().fold(Vector::zeros(d), |acc, (_, y)| acc + y) / levs.len() as f64;
        assert!((mean - &mu).norm() < 0.1);
        // within-author differences have covariance 2 W⁻¹
        let var: f64 = levs.chunks(2).map(|p| (p[0].1[0] - p[1].1[0]).powi(2)).sum::<f64>() / 2000.0;
        assert!((var - 0.2).abs() < 0.03, "{var}");
    }
}
