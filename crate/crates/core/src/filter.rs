//! Candidate pairs: mention pairs whose embedding cosine exceeds a threshold.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::document::{pair, PairId};
use crate::error::{Error, Result};
use crate::hnsw::{HnswIndex, HnswParams};
use crate::matrix::{dot, EmbeddingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub threshold: f64,
    pub index: HnswParams,
    /// Use the brute-force scan instead of the index.
    pub exact_mode: bool,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            threshold: 0.5,
            index: HnswParams::default(),
            exact_mode: false,
        }
    }
}

/// Unordered mention pairs (`i < j`) with their cosine similarity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidatePairSet {
    pairs: BTreeMap<PairId, f64>,
}

impl CandidatePairSet {
    pub fn insert(&mut self, a: u32, b: u32, sim: f64) {
        if a != b {
            self.pairs.insert(pair(a, b), sim);
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, p: &PairId) -> bool {
        self.pairs.contains_key(p)
    }

    pub fn similarity(&self, p: &PairId) -> Option<f64> {
        self.pairs.get(p).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PairId, f64)> + '_ {
        self.pairs.iter().map(|(p, s)| (*p, *s))
    }

    pub fn pair_set(&self) -> BTreeSet<PairId> {
        self.pairs.keys().copied().collect()
    }
}

impl FromIterator<(PairId, f64)> for CandidatePairSet {
    fn from_iter<I: IntoIterator<Item = (PairId, f64)>>(iter: I) -> Self {
        let mut s = CandidatePairSet::default();
        for ((a, b), sim) in iter {
            s.insert(a, b, sim);
        }
        s
    }
}

/// Line record for persisted candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub doc_id: String,
    pub mention_i: u32,
    pub mention_j: u32,
    pub similarity: f64,
}

pub fn candidate_records(doc_id: &str, c: &CandidatePairSet) -> Vec<CandidateRecord> {
    c.iter()
        .map(|((i, j), s)| CandidateRecord {
            doc_id: doc_id.to_string(),
            mention_i: i,
            mention_j: j,
            similarity: s,
        })
        .collect()
}

pub enum SimilarityIndex {
    Graph(HnswIndex),
    Exact(EmbeddingMatrix),
}

impl SimilarityIndex {
    pub fn embeddings(&self) -> &EmbeddingMatrix {
        match self {
            SimilarityIndex::Graph(g) => g.embeddings(),
            SimilarityIndex::Exact(e) => e,
        }
    }
}

pub fn build_index(e: &EmbeddingMatrix, p: &FilterParams) -> Result<SimilarityIndex> {
    if let Some(bad) = (0..e.len()).find(|&i| (e.similarity(i, i) - 1.0).abs() > 1e-5) {
        return Err(Error::MatrixFormat(format!("row {bad} is not unit-norm")));
    }
    Ok(if p.exact_mode {
        SimilarityIndex::Exact(e.clone())
    } else {
        SimilarityIndex::Graph(HnswIndex::build(e, p.index))
    })
}

/// Queries every row and merges the per-row neighbor lists.
pub fn query_pairs(index: &SimilarityIndex, p: &FilterParams) -> CandidatePairSet {
    match index {
        SimilarityIndex::Exact(e) => exact_pairs(e, p.threshold),
        SimilarityIndex::Graph(g) => {
            let e = g.embeddings();
            let per_row: Vec<Vec<(usize, f64)>> =
                (0..g.len()).into_par_iter().map(|i| g.range_query(i, p.threshold)).collect();
            let ids = e.ids();
            per_row
                .into_iter()
                .enumerate()
                .flat_map(|(i, hits)| hits.into_iter().map(move |(j, s)| ((i, j), s)))
                .map(|((i, j), s)| (pair(ids[i], ids[j]), s))
                .collect()
        }
    }
}

pub fn filter_candidates(e: &EmbeddingMatrix, p: &FilterParams) -> Result<CandidatePairSet> {
    Ok(query_pairs(&build_index(e, p)?, p))
}

/// Brute-force scan over all `i < j`.
pub fn exact_pairs(e: &EmbeddingMatrix, t: f64) -> CandidatePairSet {
    let ids = e.ids();
    let rows: Vec<Vec<(PairId, f64)>> = (0..e.len())
        .into_par_iter()
        .map(|i| {
            ((i + 1)..e.len())
                .filter_map(|j| {
                    let s = dot(e.row(i), e.row(j));
                    (s > t).then(|| (pair(ids[i], ids[j]), s))
                })
                .collect()
        })
        .collect();
    rows.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub recall: f64,
    pub pairs_per_doc: f64,
    pub gold_pairs: usize,
    pub gold_hits: usize,
    pub candidate_pairs: usize,
    pub all_pairs: usize,
}

/// All pair similarities of one document, sorted descending, each flagged gold or not.
fn scored_pairs(e: &EmbeddingMatrix, gold: &BTreeSet<PairId>) -> Vec<(f64, bool)> {
    let ids = e.ids();
    let mut out = Vec::with_capacity(e.len() * e.len().saturating_sub(1) / 2);
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            out.push((dot(e.row(i), e.row(j)), gold.contains(&pair(ids[i], ids[j]))));
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0));
    out
}

/// Micro recall of gold pairs and mean candidate count per document at each threshold.
pub fn sweep_thresholds(docs: &[(&EmbeddingMatrix, &BTreeSet<PairId>)], thresholds: &[f64]) -> Vec<SweepPoint> {
    let scored: Vec<Vec<(f64, bool)>> = docs.par_iter().map(|(e, g)| scored_pairs(e, g)).collect();
    let gold_pairs: usize = docs.iter().map(|(_, g)| g.len()).sum();
    let all_pairs: usize = scored.iter().map(Vec::len).sum();
    thresholds
        .iter()
        .map(|&t| {
            let (mut hits, mut cand) = (0, 0);
            for doc in &scored {
                for &(_, is_gold) in doc.iter().take_while(|x| x.0 > t) {
                    cand += 1;
                    hits += usize::from(is_gold);
                }
            }
            SweepPoint {
                threshold: t,
                recall: if gold_pairs == 0 { 1.0 } else { hits as f64 / gold_pairs as f64 },
                pairs_per_doc: if docs.is_empty() { 0.0 } else { cand as f64 / docs.len() as f64 },
                gold_pairs,
                gold_hits: hits,
                candidate_pairs: cand,
                all_pairs,
            }
        })
        .collect()
}

/// Candidate count at the highest threshold reaching micro recall `target`:
/// the threshold sits just below the similarity of the gold pair that
/// reaches the target.
pub fn pairs_at_recall(docs: &[(&EmbeddingMatrix, &BTreeSet<PairId>)], target: f64) -> Option<SweepPoint> {
    let scored: Vec<Vec<(f64, bool)>> = docs.par_iter().map(|(e, g)| scored_pairs(e, g)).collect();
    let mut gold_sims: Vec<f64> = scored.iter().flatten().filter(|x| x.1).map(|x| x.0).collect();
    let gold_pairs = gold_sims.len();
    if gold_pairs == 0 {
        return None;
    }
    gold_sims.sort_by(|a, b| b.total_cmp(a));
    let need = ((target * gold_pairs as f64).ceil() as usize).clamp(1, gold_pairs);
    let cut = gold_sims[need - 1];
    let (mut hits, mut cand) = (0, 0);
    for &(s, g) in scored.iter().flatten() {
        if s >= cut {
            cand += 1;
            hits += usize::from(g);
        }
    }
    Some(SweepPoint {
        threshold: cut,
        recall: hits as f64 / gold_pairs as f64,
        pairs_per_doc: cand as f64 / docs.len() as f64,
        gold_pairs,
        gold_hits: hits,
        candidate_pairs: cand,
        all_pairs: scored.iter().map(Vec::len).sum(),
    })
}
