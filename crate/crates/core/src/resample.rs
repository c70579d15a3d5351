//! Per-epoch dissolution of the training pairs into per-author document sets
//! and re-pairing into fresh same-author and different-author examples.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AuthorRecord, DocumentStore, LabeledPairRecord, write_jsonl};
use crate::error::{Error, Result};

/// Documents grouped by author, each group in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AuthorPool {
    sets: BTreeMap<String, Vec<AuthorRecord>>,
}

impl AuthorPool {
    pub fn from_records<I: IntoIterator<Item = AuthorRecord>>(records: I) -> Result<Self> {
        let mut sets: BTreeMap<String, Vec<AuthorRecord>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for r in records {
            if !seen.insert(r.doc_id.clone()) {
                return Err(Error::DuplicateId(r.doc_id));
            }
            sets.entry(r.author_id.clone()).or_default().push(r);
        }
        for s in sets.values_mut() {
            s.sort();
        }
        Ok(Self { sets })
    }

    pub fn authors(&self) -> usize {
        self.sets.len()
    }

    pub fn documents(&self) -> usize {
        self.sets.values().map(Vec::len).sum()
    }

    pub fn sets(&self) -> impl Iterator<Item = &[AuthorRecord]> {
        self.sets.values().map(Vec::as_slice)
    }
}

/// Singles in `g1`, multi-document author sets in `g2`; both kept sorted so
/// uniform index draws are reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupState {
    pub g1: Vec<AuthorRecord>,
    pub g2: Vec<Vec<AuthorRecord>>,
}

impl GroupState {
    fn insert_single(&mut self, r: AuthorRecord) {
        let at = self.g1.binary_search(&r).unwrap_or_else(|i| i);
        self.g1.insert(at, r);
    }

    fn insert_set(&mut self, mut set: Vec<AuthorRecord>) {
        set.sort();
        let at = self.g2.binary_search(&set).unwrap_or_else(|i| i);
        self.g2.insert(at, set);
    }

    /// Documents still available.
    pub fn remaining(&self) -> usize {
        self.g1.len() + self.g2.iter().map(Vec::len).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub first: AuthorRecord,
    pub second: AuthorRecord,
    pub same: bool,
}

impl PairExample {
    fn new(first: AuthorRecord, second: AuthorRecord) -> Self {
        let same = first.author_id == second.author_id;
        Self { first, second, same }
    }
}

fn take(rng: &mut ChaCha8Rng, v: &mut Vec<AuthorRecord>) -> AuthorRecord {
    let i = rng.random_range(0..v.len());
    v.remove(i)
}

pub fn make_two_groups(pool: &AuthorPool, rng: &mut ChaCha8Rng) -> GroupState {
    let mut st = GroupState::default();
    let mut odd = Vec::new();
    for set in pool.sets.values() {
        match set.len() {
            0 => {}
            1 => st.insert_single(set[0].clone()),
            n if n % 2 == 0 => st.insert_set(set.clone()),
            _ => odd.push(set.clone()),
        }
    }
    for mut set in odd {
        let r = take(rng, &mut set);
        st.insert_single(r);
        st.insert_set(set);
    }
    st
}

/// Puts what is left of an author's set back: sets of two or more return to
/// `g2`; a lone document pairs with a same-author document already in `g1`
/// or joins `g1`.
pub fn clean_after_sampling(remainder: Vec<AuthorRecord>, out: &mut Vec<PairExample>, st: &mut GroupState) {
    match remainder.len() {
        0 => {}
        1 => {
            let r = remainder.into_iter().next().expect("one element");
            match st.g1.iter().position(|x| x.author_id == r.author_id) {
                Some(i) => {
                    let other = st.g1.remove(i);
                    out.push(PairExample::new(r, other));
                }
                None => st.insert_single(r),
            }
        }
        _ => st.insert_set(remainder),
    }
}

/// One epoch of re-paired examples from `pool`.
pub fn sample_pairs(pool: &AuthorPool, seed: u64) -> Vec<PairExample> {
    let mut rng = crate::seed::rng(seed, "resample", 0);
    let mut st = make_two_groups(pool, &mut rng);
    let mut out = Vec::new();
    let bound = pool.documents();
    let mut iterations = 0;
    while !st.g2.is_empty() || st.g1.len() > 1 {
        iterations += 1;
        assert!(iterations <= bound, "sampler exceeded its iteration bound");
        let before = st.remaining();

        if !st.g2.is_empty() {
            let i = rng.random_range(0..st.g2.len());
            let mut set = st.g2.remove(i);
            let a = take(&mut rng, &mut set);
            let b = take(&mut rng, &mut set);
            out.push(PairExample::new(a, b));
            clean_after_sampling(set, &mut out, &mut st);
        }

        if st.g1.len() > 1 {
            let a = take(&mut rng, &mut st.g1);
            // g1 never holds two documents of one author, so this filter
            // only guards the invariant
            let others: Vec<usize> = (0..st.g1.len()).filter(|&j| st.g1[j].author_id != a.author_id).collect();
            if others.is_empty() {
                st.insert_single(a);
            } else {
                let j = others[rng.random_range(0..others.len())];
                let b = st.g1.remove(j);
                out.push(PairExample::new(a, b));
            }
        } else if st.g2.len() > 1 {
            let i = rng.random_range(0..st.g2.len());
            let mut s1 = st.g2.remove(i);
            let j = rng.random_range(0..st.g2.len());
            let mut s2 = st.g2.remove(j);
            let a = take(&mut rng, &mut s1);
            let b = take(&mut rng, &mut s2);
            out.push(PairExample::new(a, b));
            clean_after_sampling(s1, &mut out, &mut st);
            clean_after_sampling(s2, &mut out, &mut st);
        }

        assert!(st.remaining() < before, "sampler made no progress");
    }
    out
}

/// Materializes one epoch in the labeled pair format.
pub fn epoch_records(pairs: &[PairExample], docs: &DocumentStore, epoch: usize) -> Result<Vec<LabeledPairRecord>> {
    pairs
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let text = |r: &AuthorRecord| {
                docs.get(&r.doc_id)
                    .map(str::to_owned)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown document {}", r.doc_id)))
            };
            Ok(LabeledPairRecord {
                id: format!("epoch{epoch}-{k:06}"),
                fandoms: [p.first.fandom.clone(), p.second.fandom.clone()],
                texts: [text(&p.first)?, text(&p.second)?],
                same: p.same,
            })
        })
        .collect()
}

pub fn epoch_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("pairs-epoch-{epoch}.jsonl"))
}

pub fn write_epoch(dir: &Path, pairs: &[PairExample], docs: &DocumentStore, epoch: usize) -> Result<PathBuf> {
    let path = epoch_path(dir, epoch);
    write_jsonl(&path, &epoch_records(pairs, docs, epoch)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rec(a: &str, d: &str) -> AuthorRecord {
        AuthorRecord {
            author_id: a.to_owned(),
            fandom: format!("f-{a}"),
            doc_id: d.to_owned(),
        }
    }

    fn pool(spec: &[(&str, usize)]) -> AuthorPool {
        AuthorPool::from_records(
            spec.iter()
                .flat_map(|&(a, n)| (0..n).map(move |i| rec(a, &format!("{a}{i}")))),
        )
        .unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn two_group_cases() {
        let st = make_two_groups(&pool(&[("A", 1)]), &mut rng());
        assert_eq!(st.g1.len(), 1);
        assert!(st.g2.is_empty());
        let st = make_two_groups(&pool(&[("B", 2)]), &mut rng());
        assert!(st.g1.is_empty());
        assert_eq!(st.g2.len(), 1);
        let st = make_two_groups(&pool(&[("C", 3)]), &mut rng());
        assert_eq!(st.g1.len(), 1);
        assert_eq!(st.g1[0].author_id, "C");
        assert_eq!(st.g2, vec![st.g2[0].clone()]);
        assert_eq!(st.g2[0].len(), 2);
        assert!(!st.g2[0].contains(&st.g1[0]));
    }

    #[test]
    fn clean_cases() {
        let mut st = GroupState::default();
        let mut out = Vec::new();
        clean_after_sampling(vec![rec("A", "a1"), rec("A", "a2")], &mut out, &mut st);
        assert_eq!(st.g2.len(), 1);
        clean_after_sampling(vec![rec("B", "b1")], &mut out, &mut st);
        assert_eq!(st.g1.len(), 1);
        assert!(out.is_empty());
        clean_after_sampling(vec![rec("B", "b2")], &mut out, &mut st);
        assert!(st.g1.is_empty());
        assert_eq!(out.len(), 1);
        assert!(out[0].same);
    }

    #[test]
    fn sample_examples() {
        let p = sample_pairs(&pool(&[("B", 2)]), 1);
        assert_eq!(p.len(), 1);
        assert!(p[0].same);
        let mut docs = [p[0].first.doc_id.clone(), p[0].second.doc_id.clone()];
        docs.sort();
        assert_eq!(docs, ["B0".to_string(), "B1".to_string()]);
        let p = sample_pairs(&pool(&[("A", 1), ("C", 1)]), 1);
        assert_eq!(p.len(), 1);
        assert!(!p[0].same);
        assert!(sample_pairs(&pool(&[("A", 1)]), 1).is_empty());
    }

    #[test]
    fn duplicate_doc_rejected() {
        assert!(AuthorPool::from_records([rec("A", "x"), rec("B", "x")]).is_err());
    }

    #[test]
    fn epoch_export() {
        let mut store = DocumentStore::new();
        let d1 = store.intern("first text");
        let d2 = store.intern("second text");
        let pool = AuthorPool::from_records([rec("A", &d1), rec("A", &d2)]).unwrap();
        let pairs = sample_pairs(&pool, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = write_epoch(dir.path(), &pairs, &store, 2).unwrap();
        assert!(path.ends_with("pairs-epoch-2.jsonl"));
        let back = crate::corpus::load_labeled_pairs(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert!(back[0].same);
        let mut t = back[0].texts.clone();
        t.sort();
        assert_eq!(t, ["first text".to_string(), "second text".to_string()]);
    }

    fn check_epoch(pool: &AuthorPool, pairs: &[PairExample]) -> std::result::Result<(), TestCaseError> {
        let mut used = BTreeSet::new();
        for p in pairs {
            prop_assert_ne!(&p.first.doc_id, &p.second.doc_id);
            prop_assert_eq!(p.same, p.first.author_id == p.second.author_id);
            prop_assert!(used.insert(p.first.doc_id.clone()));
            prop_assert!(used.insert(p.second.doc_id.clone()));
        }
        prop_assert!(2 * pairs.len() <= pool.documents());
        // at most one document is left unpaired
        prop_assert!(pool.documents() - used.len() <= 1);
        Ok(())
    }

    proptest! {
        #[test]
        fn sampler_invariants(sizes in prop::collection::vec(1usize..7, 1..30), seed in any::<u64>()) {
            let names: Vec<String> = (0..sizes.len()).map(|i| format!("a{i:02}")).collect();
            let spec: Vec<(&str, usize)> = names.iter().map(String::as_str).zip(sizes.iter().copied()).collect();
            let pool = pool(&spec);
            let pairs = sample_pairs(&pool, seed);
            check_epoch(&pool, &pairs)?;
            prop_assert_eq!(sample_pairs(&pool, seed), pairs);
        }

        #[test]
        fn balanced_on_two_doc_authors_with_singletons(k in 1usize..25, extra in 0usize..5, seed in any::<u64>()) {
            let s = (2 * k).saturating_sub(2).max(2) + extra;
            prop_assume!(s <= 2 * k + 2);
            let names: Vec<String> = (0..k + s).map(|i| format!("a{i:03}")).collect();
            let spec: Vec<(&str, usize)> = names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.as_str(), if i < k { 2 } else { 1 }))
                .collect();
            let pairs = sample_pairs(&pool(&spec), seed);
            let same = pairs.iter().filter(|p| p.same).count() as i64;
            let diff = pairs.len() as i64 - same;
            prop_assert!((same - diff).abs() <= 1, "k={} s={} same={} diff={}", k, s, same, diff);
        }
    }
}
