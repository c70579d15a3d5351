//! Pair and truth records, JSONL ingestion, train/dev splitting and counts.
//!
//! File formats follow the shared-task convention: `pairs.jsonl` holds
//! `{"id", "fandoms": [f1, f2], "pair": [t1, t2]}` per line and `truth.jsonl`
//! holds `{"id", "same", "authors": [a1, a2]}` per line.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub fandoms: [String; 2],
    #[serde(rename = "pair")]
    pub texts: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub same: bool,
    #[serde(rename = "authors")]
    pub author_ids: [String; 2],
}

/// A pair record carrying its label, as written for resampled epochs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPairRecord {
    pub id: String,
    pub fandoms: [String; 2],
    #[serde(rename = "pair")]
    pub texts: [String; 2],
    pub same: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AuthorRecord {
    pub author_id: String,
    pub fandom: String,
    pub doc_id: String,
}

pub type TruthMap = BTreeMap<String, TruthRecord>;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn read_jsonl<T, R>(reader: R, path: &Path) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Serializes records as JSONL and moves the result into place atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, rec)
            .map_err(|e| Error::InvalidArgument(format!("serializing record: {e}")))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn parse_pairs<R: BufRead>(reader: R, path: &Path) -> Result<Vec<PairRecord>> {
    let records: Vec<PairRecord> = read_jsonl(reader, path)?;
    let mut seen = HashSet::new();
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }
    Ok(records)
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    parse_pairs(open(path)?, path)
}

pub fn save_pairs(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    write_jsonl(path, pairs)
}

pub fn parse_truth<R: BufRead>(reader: R, path: &Path) -> Result<TruthMap> {
    let records: Vec<TruthRecord> = read_jsonl(reader, path)?;
    let mut map = TruthMap::new();
    for r in records {
        if r.same != (r.author_ids[0] == r.author_ids[1]) {
            return Err(Error::Inconsistent {
                id: r.id,
                message: "`same` flag disagrees with author ids".into(),
            });
        }
        if map.contains_key(&r.id) {
            return Err(Error::DuplicateId(r.id));
        }
        map.insert(r.id.clone(), r);
    }
    Ok(map)
}

pub fn load_truth(path: &Path) -> Result<TruthMap> {
    parse_truth(open(path)?, path)
}

pub fn save_truth(path: &Path, truth: &TruthMap) -> Result<()> {
    let recs: Vec<&TruthRecord> = truth.values().collect();
    write_jsonl(path, &recs)
}

pub fn load_labeled_pairs(path: &Path) -> Result<Vec<LabeledPairRecord>> {
    read_jsonl(open(path)?, path)
}

pub fn nfc(text: &str) -> String {
    text.nfc().collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<PairRecord>,
    pub dev: Vec<PairRecord>,
    /// Train pairs removed because they share a document with dev.
    pub leaked: usize,
}

/// Label-stratified pair split. Train pairs that share a document text
/// (after NFC normalization) with any dev pair are removed from train.
pub fn split_train_dev(
    pairs: &[PairRecord],
    truth: &TruthMap,
    dev_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dev_fraction must lie in (0, 1), got {dev_fraction}"
        )));
    }
    let missing: Vec<String> = pairs
        .iter()
        .filter(|p| !truth.contains_key(&p.id))
        .map(|p| p.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }

    let mut rng = seed::rng(seed, "split", 0);
    let mut dev_idx = HashSet::new();
    for label in [true, false] {
        let mut class: Vec<usize> = (0..pairs.len())
            .filter(|&i| truth[&pairs[i].id].same == label)
            .collect();
        class.shuffle(&mut rng);
        let n_dev = (dev_fraction * class.len() as f64).round() as usize;
        dev_idx.extend(class.into_iter().take(n_dev));
    }

    let dev: Vec<PairRecord> = (0..pairs.len())
        .filter(|i| dev_idx.contains(i))
        .map(|i| pairs[i].clone())
        .collect();
    let dev_texts: HashSet<String> = dev
        .iter()
        .flat_map(|p| p.texts.iter().map(|t| nfc(t)))
        .collect();
    let candidates = pairs.len() - dev.len();
    let train: Vec<PairRecord> = (0..pairs.len())
        .filter(|i| !dev_idx.contains(i))
        .map(|i| &pairs[i])
        .filter(|p| p.texts.iter().all(|t| !dev_texts.contains(&nfc(t))))
        .cloned()
        .collect();
    let leaked = candidates - train.len();
    Ok(Split { train, dev, leaked })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub pairs: usize,
    pub same: usize,
    pub different: usize,
    pub unlabeled: usize,
    pub authors: usize,
    pub fandoms: usize,
}

/// Counts over the pairs; label and author counts only cover pairs present
/// in `truth`.
pub fn dataset_stats(pairs: &[PairRecord], truth: &TruthMap) -> DatasetStats {
    let mut stats = DatasetStats {
        pairs: pairs.len(),
        ..Default::default()
    };
    let mut authors = BTreeSet::new();
    let mut fandoms = BTreeSet::new();
    for p in pairs {
        fandoms.extend(p.fandoms.iter().map(String::as_str));
        match truth.get(&p.id) {
            Some(t) => {
                if t.same {
                    stats.same += 1;
                } else {
                    stats.different += 1;
                }
                authors.extend(t.author_ids.iter().map(String::as_str));
            }
            None => stats.unlabeled += 1,
        }
    }
    stats.authors = authors.len();
    stats.fandoms = fandoms.len();
    stats
}

/// Deduplicated document texts keyed by doc id.
#[derive(Debug, Clone, Default)]
pub struct DocumentStore {
    texts: BTreeMap<String, String>,
    by_text: HashMap<String, String>,
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `text`, registering it on first sight.
    pub fn intern(&mut self, text: &str) -> String {
        let key = nfc(text);
        if let Some(id) = self.by_text.get(&key) {
            return id.clone();
        }
        let id = format!("doc-{:06}", self.texts.len());
        self.texts.insert(id.clone(), text.to_owned());
        self.by_text.insert(key, id.clone());
        id
    }

    pub fn get(&self, doc_id: &str) -> Option<&str> {
        self.texts.get(doc_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

/// Dissolves labeled pairs into per-document author records. A document that
/// appears in several pairs yields a single record (first occurrence wins).
pub fn author_records(
    pairs: &[PairRecord],
    truth: &TruthMap,
) -> Result<(Vec<AuthorRecord>, DocumentStore)> {
    let mut store = DocumentStore::new();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut missing = Vec::new();
    for p in pairs {
        let Some(t) = truth.get(&p.id) else {
            missing.push(p.id.clone());
            continue;
        };
        for k in 0..2 {
            let doc_id = store.intern(&p.texts[k]);
            if seen.insert(doc_id.clone()) {
                records.push(AuthorRecord {
                    author_id: t.author_ids[k].clone(),
                    fandom: p.fandoms[k].clone(),
                    doc_id,
                });
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    Ok((records, store))
}
