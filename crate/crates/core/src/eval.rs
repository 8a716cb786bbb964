//! Numeric cross-checking of matched pairs and set-level metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::classifier::{Decision, VerdictRecord};
use crate::document::{Document, GoldAnnotation, PairId};
use crate::error::{Error, Result};
use crate::value::NumericValue;

/// Exact decimal equality; percent and plain values never match.
pub fn numeric_equal(a: &NumericValue, b: &NumericValue) -> bool {
    a == b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub mention_i: u32,
    pub mention_j: u32,
    pub table_i: String,
    pub table_j: String,
    pub value_i: NumericValue,
    pub value_j: NumericValue,
    /// Digest of the classifier response that matched the pair.
    pub verdict_digest: String,
}

impl MatchedPair {
    pub fn pair(&self) -> PairId {
        (self.mention_i, self.mention_j)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    pub doc_id: String,
    pub matches: Vec<MatchedPair>,
    /// Matched pairs whose values differ.
    pub inconsistencies: Vec<MatchedPair>,
    pub abstained: usize,
}

impl MatchReport {
    pub fn predicted_pairs(&self) -> BTreeSet<PairId> {
        self.matches.iter().map(MatchedPair::pair).collect()
    }

    pub fn inconsistent_pairs(&self) -> BTreeSet<PairId> {
        self.inconsistencies.iter().map(MatchedPair::pair).collect()
    }
}

/// Keeps equivalent verdicts and flags those whose values differ. Output is
/// sorted by pair (mention ids follow reading order).
pub fn detect_inconsistencies(doc: &Document, verdicts: &[VerdictRecord]) -> Result<MatchReport> {
    let mut matches = Vec::new();
    for v in verdicts.iter().filter(|v| v.decision == Decision::Equivalent) {
        let a = doc.mention(v.mention_i).ok_or(Error::UnknownMention(v.mention_i))?;
        let b = doc.mention(v.mention_j).ok_or(Error::UnknownMention(v.mention_j))?;
        let (a, b) = if a.mention_id <= b.mention_id { (a, b) } else { (b, a) };
        matches.push(MatchedPair {
            mention_i: a.mention_id,
            mention_j: b.mention_id,
            table_i: a.table_id.clone(),
            table_j: b.table_id.clone(),
            value_i: a.value.clone(),
            value_j: b.value.clone(),
            verdict_digest: v.raw_response_digest.clone(),
        });
    }
    matches.sort_by_key(MatchedPair::pair);
    matches.dedup_by_key(|m| m.pair());
    let inconsistencies = matches
        .iter()
        .filter(|m| !numeric_equal(&m.value_i, &m.value_j))
        .cloned()
        .collect();
    Ok(MatchReport {
        doc_id: doc.doc_id.clone(),
        matches,
        inconsistencies,
        abstained: verdicts.iter().filter(|v| v.decision == Decision::Abstain).count(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub intersection: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            gold: self.gold + o.gold,
            predicted: self.predicted + o.predicted,
            intersection: self.intersection + o.intersection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    /// No gold pairs: recall is reported as 1.0 by convention.
    pub zero_gold: bool,
}

impl Scores {
    pub fn from_counts(c: Counts) -> Scores {
        let precision = if c.predicted == 0 {
            if c.gold == 0 { 1.0 } else { 0.0 }
        } else {
            c.intersection as f64 / c.predicted as f64
        };
        let recall = if c.gold == 0 { 1.0 } else { c.intersection as f64 / c.gold as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Scores {
            precision,
            recall,
            f1,
            counts: c,
            zero_gold: c.gold == 0,
        }
    }
}

pub fn count(gold: &BTreeSet<PairId>, pred: &BTreeSet<PairId>) -> Counts {
    Counts {
        gold: gold.len(),
        predicted: pred.len(),
        intersection: gold.intersection(pred).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScores {
    pub doc_id: String,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResult {
    pub per_doc: Vec<DocScores>,
    /// Counts summed over documents before dividing.
    pub micro: Scores,
}

/// Micro-aggregated set-level scores over documents keyed by doc id.
pub fn evaluate_sets(
    gold: &BTreeMap<String, BTreeSet<PairId>>,
    pred: &BTreeMap<String, BTreeSet<PairId>>,
) -> Result<MetricsResult> {
    if gold.keys().ne(pred.keys()) {
        let g: BTreeSet<_> = gold.keys().collect();
        let p: BTreeSet<_> = pred.keys().collect();
        let diff: Vec<_> = g.symmetric_difference(&p).take(5).collect();
        return Err(Error::DocMismatch(format!("{diff:?}")));
    }
    let mut total = Counts::default();
    let per_doc = gold
        .iter()
        .map(|(doc_id, g)| {
            let c = count(g, &pred[doc_id]);
            total = total + c;
            DocScores {
                doc_id: doc_id.clone(),
                scores: Scores::from_counts(c),
            }
        })
        .collect();
    Ok(MetricsResult {
        per_doc,
        micro: Scores::from_counts(total),
    })
}

pub fn evaluate(gold: &[GoldAnnotation], pred: &[(String, BTreeSet<PairId>)]) -> Result<MetricsResult> {
    let mut g = BTreeMap::new();
    for a in gold {
        if g.insert(a.doc_id.clone(), a.pairs()).is_some() {
            return Err(Error::DocMismatch(format!("duplicate gold for {}", a.doc_id)));
        }
    }
    let mut p = BTreeMap::new();
    for (id, s) in pred {
        if p.insert(id.clone(), s.clone()).is_some() {
            return Err(Error::DocMismatch(format!("duplicate prediction for {id}")));
        }
    }
    evaluate_sets(&g, &p)
}
