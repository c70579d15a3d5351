//! Tokenization, vocabulary pruning with topic masking, and sliding-window
//! sentence units with a contextual fandom prefix.
//!
//! Rare tokens collapse to `<UNK>` at the word level but keep their character
//! ids, so a misspelling or a rare name is still visible to the
//! characters-to-word encoder.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
const RESERVED_TOKENS: [&str; 2] = ["<PAD>", "<UNK>"];
const RESERVED_CHARS: [&str; 2] = ["<PAD>", "<UNK>"];
pub const VOCAB_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub hop_length: usize,
    pub overlapping_length: usize,
    pub max_tokens: usize,
    pub max_chars: usize,
    pub min_freq: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            hop_length: 16,
            overlapping_length: 4,
            max_tokens: 5000,
            max_chars: 150,
            min_freq: 2,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, problems: &mut Vec<String>) {
        if self.hop_length == 0 {
            problems.push("preprocess.hop_length must be >= 1".into());
        }
        if self.max_tokens < RESERVED_TOKENS.len() {
            problems.push(format!(
                "preprocess.max_tokens must be >= {}",
                RESERVED_TOKENS.len()
            ));
        }
        if self.max_chars < RESERVED_CHARS.len() {
            problems.push(format!(
                "preprocess.max_chars must be >= {}",
                RESERVED_CHARS.len()
            ));
        }
    }
}

/// Whitespace split with punctuation detached. Every non-alphanumeric,
/// non-whitespace character is its own token, except that runs of `.` stay
/// together as one ellipsis token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        let mut dots = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                if !dots.is_empty() {
                    out.push(std::mem::take(&mut dots));
                }
                word.push(c);
                continue;
            }
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if c == '.' {
                dots.push(c);
            } else {
                if !dots.is_empty() {
                    out.push(std::mem::take(&mut dots));
                }
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
        if !dots.is_empty() {
            out.push(dots);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub symbol: String,
    pub id: u32,
    pub frequency: u64,
}

/// Frozen token and character vocabularies plus the fandom prefix slots.
///
/// Token ids occupy `0..num_tokens()`; prefix slot ids follow at
/// `num_tokens()..num_tokens() + num_prefixes()` so both index one table.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    char_to_id: HashMap<char, u32>,
    prefix_to_id: BTreeMap<String, u32>,
    tokens: Vec<VocabEntry>,
    chars: Vec<VocabEntry>,
    token_budget: usize,
    char_budget: usize,
}

fn ranked<K: Ord + Clone>(counts: HashMap<K, u64>, min_freq: usize, keep: usize) -> Vec<(K, u64)> {
    let mut items: Vec<(K, u64)> = counts
        .into_iter()
        .filter(|(_, n)| *n >= min_freq as u64)
        .collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items.truncate(keep);
    items
}

impl Vocabulary {
    /// Keeps the `max_tokens - 2` most frequent tokens seen at least
    /// `min_freq` times (ties broken lexicographically); the same policy
    /// applies to characters.
    pub fn build<'a, I>(tokens: I, max_tokens: usize, max_chars: usize, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_tokens < RESERVED_TOKENS.len() || max_chars < RESERVED_CHARS.len() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary budgets ({max_tokens}, {max_chars}) smaller than reserved symbols"
            )));
        }
        let mut tok_counts: HashMap<String, u64> = HashMap::new();
        let mut char_counts: HashMap<char, u64> = HashMap::new();
        for t in tokens {
            for c in t.chars() {
                *char_counts.entry(c).or_default() += 1;
            }
            *tok_counts.entry(t.to_owned()).or_default() += 1;
        }

        let mut tokens: Vec<VocabEntry> = RESERVED_TOKENS
            .iter()
            .enumerate()
            .map(|(i, s)| VocabEntry {
                symbol: (*s).into(),
                id: i as u32,
                frequency: 0,
            })
            .collect();
        for (tok, n) in ranked(tok_counts, min_freq, max_tokens - RESERVED_TOKENS.len()) {
            tokens.push(VocabEntry {
                symbol: tok,
                id: tokens.len() as u32,
                frequency: n,
            });
        }
        let mut chars: Vec<VocabEntry> = RESERVED_CHARS
            .iter()
            .enumerate()
            .map(|(i, s)| VocabEntry {
                symbol: (*s).into(),
                id: i as u32,
                frequency: 0,
            })
            .collect();
        for (c, n) in ranked(char_counts, min_freq, max_chars - RESERVED_CHARS.len()) {
            chars.push(VocabEntry {
                symbol: c.to_string(),
                id: chars.len() as u32,
                frequency: n,
            });
        }
        Self::from_entries(tokens, chars, Vec::new(), max_tokens, max_chars)
    }

    fn from_entries(
        tokens: Vec<VocabEntry>,
        chars: Vec<VocabEntry>,
        prefixes: Vec<String>,
        token_budget: usize,
        char_budget: usize,
    ) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("vocabulary: {m}"));
        if tokens.len() > token_budget || chars.len() > char_budget {
            return Err(bad("entry count exceeds budget"));
        }
        for (i, e) in tokens.iter().enumerate() {
            if e.id as usize != i {
                return Err(bad("token ids must be dense and ordered"));
            }
        }
        for (i, e) in chars.iter().enumerate() {
            if e.id as usize != i || e.symbol.chars().count() != 1 && i >= RESERVED_CHARS.len() {
                return Err(bad("char ids must be dense, ordered and single characters"));
            }
        }
        let token_to_id = tokens.iter().skip(RESERVED_TOKENS.len()).map(|e| (e.symbol.clone(), e.id)).collect();
        let char_to_id = chars
            .iter()
            .skip(RESERVED_CHARS.len())
            .map(|e| (e.symbol.chars().next().unwrap(), e.id))
            .collect();
        let mut v = Self {
            token_to_id,
            char_to_id,
            prefix_to_id: BTreeMap::new(),
            tokens,
            chars,
            token_budget,
            char_budget,
        };
        v.add_prefixes(prefixes.iter().map(String::as_str));
        Ok(v)
    }

    /// Registers one trainable prefix slot per distinct fandom label.
    pub fn add_prefixes<'a, I: IntoIterator<Item = &'a str>>(&mut self, fandoms: I) {
        for f in fandoms {
            if !self.prefix_to_id.contains_key(f) {
                let id = (self.tokens.len() + self.prefix_to_id.len()) as u32;
                self.prefix_to_id.insert(f.to_owned(), id);
            }
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn num_prefixes(&self) -> usize {
        self.prefix_to_id.len()
    }

    /// Rows of the token embedding table (tokens plus prefix slots).
    pub fn embedding_rows(&self) -> usize {
        self.num_tokens() + self.num_prefixes()
    }

    pub fn token_budget(&self) -> usize {
        self.token_budget
    }

    pub fn char_budget(&self) -> usize {
        self.char_budget
    }

    pub fn token_id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn char_id(&self, c: char) -> u32 {
        self.char_to_id.get(&c).copied().unwrap_or(UNK)
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn prefix_slot(&self, fandom: &str) -> Option<u32> {
        self.prefix_to_id.get(fandom).copied()
    }

    pub fn prefixes(&self) -> impl Iterator<Item = (&str, u32)> {
        self.prefix_to_id.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn tokens(&self) -> &[VocabEntry] {
        &self.tokens
    }

    pub fn to_file(&self) -> VocabFile {
        VocabFile {
            version: VOCAB_FORMAT_VERSION,
            token_budget: self.token_budget,
            char_budget: self.char_budget,
            tokens: self.tokens.clone(),
            chars: self.chars.clone(),
            prefixes: self.prefix_to_id.keys().cloned().collect(),
        }
    }

    pub fn from_file(file: VocabFile) -> Result<Self> {
        if file.version != VOCAB_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported vocabulary version {}",
                file.version
            )));
        }
        Self::from_entries(file.tokens, file.chars, file.prefixes, file.token_budget, file.char_budget)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.to_file())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        crate::corpus::write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }
}

/// On-disk vocabulary; entries are ordered by id. Prefix slots are listed
/// in id order after the tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabFile {
    pub version: u32,
    pub token_budget: usize,
    pub char_budget: usize,
    pub tokens: Vec<VocabEntry>,
    pub chars: Vec<VocabEntry>,
    pub prefixes: Vec<String>,
}

pub fn build_vocab<'a, I>(tokens: I, max_tokens: usize, max_chars: usize, min_freq: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    Vocabulary::build(tokens, max_tokens, max_chars, min_freq)
}

/// Token ids after masking, plus per-token character ids.
pub fn mask(tokens: &[String], vocab: &Vocabulary) -> (Vec<u32>, Vec<Vec<u32>>) {
    tokens
        .iter()
        .map(|t| (vocab.token_id(t), t.chars().map(|c| vocab.char_id(c)).collect()))
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceUnit {
    pub prefix: String,
    pub tokens: Vec<String>,
    pub token_ids: Vec<u32>,
    pub char_ids: Vec<Vec<u32>>,
}

/// Unit `k` covers tokens `[k*hop, k*hop + hop + overlap)`. Windows stop once
/// one reaches the end of the sequence, so a trailing partial window only
/// appears when it holds tokens not already covered.
pub fn window_bounds(n: usize, hop_length: usize, overlapping_length: usize) -> Vec<(usize, usize)> {
    assert!(hop_length >= 1, "hop_length must be >= 1");
    let width = hop_length + overlapping_length;
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + width).min(n);
        out.push((start, end));
        if end == n {
            break;
        }
        start += hop_length;
    }
    out
}

pub fn sliding_windows(
    tokens: &[String],
    hop_length: usize,
    overlapping_length: usize,
    fandom: &str,
) -> Vec<SentenceUnit> {
    window_bounds(tokens.len(), hop_length, overlapping_length)
        .into_iter()
        .map(|(s, e)| SentenceUnit {
            prefix: fandom.to_owned(),
            tokens: tokens[s..e].to_vec(),
            token_ids: Vec::new(),
            char_ids: Vec::new(),
        })
        .collect()
}

/// How the encoder obtains the embedding of a unit's prefix position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prefix {
    /// A trainable row of the token table.
    Slot(u32),
    /// Mean of these token rows (fandoms unseen when the vocabulary froze).
    Average(Vec<u32>),
}

/// A document ready for the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedDocument {
    pub prefix: Prefix,
    pub units: Vec<SentenceUnit>,
}

/// Token ids used to initialize (or stand in for) the prefix of `fandom`:
/// non-ASCII characters removed, then tokenized. Empty results fall back to
/// `<UNK>`.
pub fn fandom_token_ids(fandom: &str, vocab: &Vocabulary) -> Vec<u32> {
    let ids: Vec<u32> = tokenize(&ascii_only(fandom))
        .iter()
        .map(|t| vocab.token_id(t))
        .collect();
    if ids.is_empty() {
        vec![UNK]
    } else {
        ids
    }
}

pub fn ascii_only(s: &str) -> String {
    s.chars().filter(char::is_ascii).collect()
}

/// Averages the embeddings of the cleaned fandom tokens; tokens the lookup
/// does not know use `unk`.
pub fn fandom_prefix_embedding<'a, F>(fandom: &str, lookup: F, unk: &'a [f64]) -> Vec<f64>
where
    F: Fn(&str) -> Option<&'a [f64]>,
{
    let toks = tokenize(&ascii_only(fandom));
    if toks.is_empty() {
        return unk.to_vec();
    }
    let mut acc = vec![0.0; unk.len()];
    for t in &toks {
        let v = lookup(t).unwrap_or(unk);
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = toks.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Full per-document preprocessing: tokenize, window, mask.
pub fn prepare_document(text: &str, fandom: &str, vocab: &Vocabulary, cfg: &PreprocessConfig) -> PreparedDocument {
    let tokens = tokenize(text);
    let mut units = sliding_windows(&tokens, cfg.hop_length, cfg.overlapping_length, fandom);
    for u in &mut units {
        let (ids, chars) = mask(&u.tokens, vocab);
        u.token_ids = ids;
        u.char_ids = chars;
    }
    let prefix = match vocab.prefix_slot(fandom) {
        Some(slot) => Prefix::Slot(slot),
        None => Prefix::Average(fandom_token_ids(fandom, vocab)),
    };
    PreparedDocument { prefix, units }
}

/// [`prepare_document`] on the NFC form of `text`.
pub fn prepare_text(text: &str, fandom: &str, vocab: &Vocabulary, cfg: &PreprocessConfig) -> PreparedDocument {
    prepare_document(&crate::corpus::nfc(text), fandom, vocab, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("He said, 'go...'"),
            s(&["He", "said", ",", "'", "go", "...", "'"])
        );
        assert_eq!(tokenize("a.b"), s(&["a", ".", "b"]));
        assert_eq!(tokenize("Wait!! …no"), s(&["Wait", "!", "!", "…", "no"]));
    }

    #[test]
    fn vocab_budget_and_min_freq() {
        let stream = ["a", "a", "a", "a", "a", "b"];
        let v = build_vocab(stream, 1 + 2, 10, 2).unwrap();
        assert!(v.contains_token("a"));
        assert!(!v.contains_token("b"));
        assert_eq!(v.token_id("b"), UNK);
        assert_eq!(v.num_tokens(), 3);
    }

    #[test]
    fn vocab_all_unique_is_reserved_only() {
        let v = build_vocab(["x", "y", "z"], 100, 100, 2).unwrap();
        assert_eq!(v.num_tokens(), 2);
    }

    #[test]
    fn vocab_tie_keeps_lexicographically_smaller() {
        let stream = ["zeta", "zeta", "alpha", "alpha", "mid", "mid", "mid"];
        let v = build_vocab(stream, 2 + 2, 100, 2).unwrap();
        assert!(v.contains_token("mid"));
        assert!(v.contains_token("alpha"));
        assert!(!v.contains_token("zeta"));
    }

    #[test]
    fn vocab_rejects_tiny_budget() {
        assert!(build_vocab(["a"], 1, 10, 1).is_err());
        assert!(build_vocab(["a"], 10, 1, 1).is_err());
    }

    #[test]
    fn mask_keeps_chars_of_oov_tokens() {
        let stream = ["the", "the", "cat", "cat", "zq"];
        let v = build_vocab(stream, 10, 100, 2).unwrap();
        let (ids, chars) = mask(&s(&["the", "zxqv"]), &v);
        assert_eq!(ids[0], v.token_id("the"));
        assert_eq!(ids[1], UNK);
        // 'z' and 'q' each occur once in the stream and fall below min_freq,
        // 'x' and 'v' never occur: all four map to char-UNK.
        assert_eq!(chars[1], vec![UNK; 4]);
        let (ids, chars) = mask(&s(&["tac"]), &v);
        assert_eq!(ids[0], UNK);
        assert_eq!(chars[0], vec![v.char_id('t'), v.char_id('a'), v.char_id('c')]);
        assert!(chars[0].iter().all(|&c| c != UNK));
        let (_, chars) = mask(&s(&["tz"]), &v);
        assert_eq!(chars[0], vec![v.char_id('t'), UNK]);
    }

    #[test]
    fn windows_hop4_overlap2() {
        let toks: Vec<String> = (1..=10).map(|i| format!("t{i}")).collect();
        let units = sliding_windows(&toks, 4, 2, "HP");
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].tokens, toks[0..6].to_vec());
        assert_eq!(units[1].tokens, toks[4..10].to_vec());
        assert!(units.iter().all(|u| u.prefix == "HP"));
        // tokens plus the prefix position
        assert_eq!(units[0].tokens.len() + 1, 4 + 2 + 1);
    }

    #[test]
    fn windows_edge_cases() {
        let toks: Vec<String> = (0..9).map(|i| i.to_string()).collect();
        let units = sliding_windows(&toks, 3, 0, "f");
        assert_eq!(units.len(), 3);
        assert!(units.iter().all(|u| u.tokens.len() == 3));
        assert_eq!(sliding_windows(&toks, 8, 4, "f").len(), 1);
        assert!(sliding_windows(&[], 4, 2, "f").is_empty());
    }

    #[test]
    fn prefix_embedding_average() {
        let table: HashMap<&str, Vec<f64>> =
            [("Harry", vec![1.0, 0.0]), ("Potter", vec![0.0, 3.0]), ("Pokmon", vec![5.0, 5.0])]
                .into_iter()
                .collect();
        let unk = [9.0, 9.0];
        let look = |t: &str| table.get(t).map(|v| v.as_slice());
        assert_eq!(fandom_prefix_embedding("Harry", look, &unk), vec![1.0, 0.0]);
        assert_eq!(fandom_prefix_embedding("Harry Potter", look, &unk), vec![0.5, 1.5]);
        assert_eq!(fandom_prefix_embedding("Pokémon", look, &unk), vec![5.0, 5.0]);
        assert_eq!(fandom_prefix_embedding("ポケモン", look, &unk), vec![9.0, 9.0]);
        assert_eq!(ascii_only("Pokémon"), "Pokmon");
    }

    #[test]
    fn vocab_file_round_trip() {
        let mut v = build_vocab(["a", "a", "b", "b", "c"], 10, 10, 2).unwrap();
        v.add_prefixes(["Batman", "Harry Potter"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        v.save(&path).unwrap();
        let back = Vocabulary::load(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.prefix_slot("Batman"), Some(4));
        assert_eq!(back.embedding_rows(), 6);
    }

    #[test]
    fn prepare_unknown_fandom_averages_tokens() {
        let v = build_vocab(["Bat", "Bat", "man", "man"], 10, 10, 2).unwrap();
        let cfg = PreprocessConfig::default();
        let d = prepare_document("some text", "Bat man", &v, &cfg);
        assert_eq!(d.prefix, Prefix::Average(vec![v.token_id("Bat"), v.token_id("man")]));
        assert_eq!(d.units.len(), 1);
        assert_eq!(d.units[0].token_ids.len(), 2);
    }

    proptest! {
        #[test]
        fn tokenize_preserves_non_whitespace(text in "[a-zA-Z ,.!?'\"\\-]{0,60}") {
            let toks = tokenize(&text);
            let joined: String = toks.concat();
            let stripped: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(joined, stripped);
            prop_assert_eq!(tokenize(&toks.join(" ")), toks);
        }

        #[test]
        fn windows_cover_every_token(n in 0usize..80, hop in 1usize..10, overlap in 0usize..6) {
            let bounds = window_bounds(n, hop, overlap);
            let mut covered = vec![false; n];
            for (i, &(s, e)) in bounds.iter().enumerate() {
                prop_assert!(e - s <= hop + overlap);
                prop_assert_eq!(s, i * hop);
                covered[s..e].iter_mut().for_each(|c| *c = true);
                if i + 1 < bounds.len() {
                    // consecutive windows share exactly `overlap` tokens
                    // unless the next one is the truncated tail
                    let (ns, ne) = bounds[i + 1];
                    prop_assert_eq!(e - ns, overlap.min(ne - ns));
                }
            }
            prop_assert!(covered.into_iter().all(|c| c));
        }

        #[test]
        fn mask_preserves_length(words in proptest::collection::vec("[a-z]{1,6}", 0..30)) {
            let v = build_vocab(words.iter().map(String::as_str), 8, 12, 2).unwrap();
            let (ids, chars) = mask(&words, &v);
            prop_assert_eq!(ids.len(), words.len());
            for (w, c) in words.iter().zip(&chars) {
                prop_assert_eq!(w.chars().count(), c.len());
            }
        }
    }
}
