//! End-to-end run: extract, embed, filter, classify, check, evaluate.
//!
//! Each stage is a function over the whole corpus so that the command-line
//! subcommands and the one-shot run share the same code path.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify_pairs, verdict_records, ClassifierBackend, DispatchConfig, PromptTemplates, VerdictRecord};
use crate::config::RunConfig;
use crate::corpus::{PlantedInconsistency, SyntheticCorpus};
use crate::document::{Document, GoldAnnotation, PairId};
use crate::embedder::MentionEmbedder;
use crate::error::{Error, Result, Stage};
use crate::eval::{count, detect_inconsistencies, evaluate_sets, Counts, MatchReport, MetricsResult, Scores};
use crate::filter::{candidate_records, filter_candidates, sweep_thresholds, CandidatePairSet, CandidateRecord, FilterParams, SweepPoint};
use crate::matrix::EmbeddingMatrix;

/// Mention extraction is done at parse time; this only checks the documents
/// are usable and reports counts.
pub fn extract_corpus(docs: &[Document]) -> Result<Vec<(String, usize)>> {
    let mut seen = BTreeSet::new();
    docs.iter()
        .map(|d| {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::Schema(format!("duplicate doc id {}", d.doc_id)).at(Stage::Extract));
            }
            Ok((d.doc_id.clone(), d.mentions().len()))
        })
        .collect()
}

pub fn embed_corpus(docs: &[Document], embedder: &dyn MentionEmbedder) -> Result<Vec<EmbeddingMatrix>> {
    docs.par_iter()
        .map(|d| embedder.embed_document(d))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at(Stage::Embed))
}

pub fn filter_corpus(embeddings: &[EmbeddingMatrix], p: &FilterParams) -> Result<Vec<CandidatePairSet>> {
    embeddings
        .par_iter()
        .map(|e| filter_candidates(e, p))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at(Stage::Filter))
}

/// Documents are dispatched one after another; within a document at most
/// `dispatch.max_in_flight` requests are outstanding.
pub fn classify_corpus(
    docs: &[Document],
    candidates: &[CandidatePairSet],
    backend: &dyn ClassifierBackend,
    templates: &PromptTemplates,
    dispatch: &DispatchConfig,
) -> Result<Vec<Vec<VerdictRecord>>> {
    docs.iter()
        .zip(candidates)
        .map(|(d, c)| {
            let pairs: Vec<PairId> = c.iter().map(|(p, _)| p).collect();
            let v = classify_pairs(backend, d, &pairs, templates, dispatch)?;
            Ok(verdict_records(&d.doc_id, &v))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at(Stage::Classify))
}

pub fn check_corpus(docs: &[Document], verdicts: &[Vec<VerdictRecord>]) -> Result<Vec<MatchReport>> {
    docs.par_iter()
        .zip(verdicts)
        .map(|(d, v)| detect_inconsistencies(d, v))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at(Stage::Check))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Predicted equivalent pairs against gold pairs.
    pub pairs: MetricsResult,
    /// Detected inconsistencies against planted ones.
    pub inconsistencies: Scores,
    pub abstained: usize,
    /// Documents without gold pairs (recall reported as 1.0).
    pub zero_gold_docs: Vec<String>,
}

pub fn evaluate_corpus(
    gold: &[GoldAnnotation],
    reports: &[MatchReport],
    planted: &[PlantedInconsistency],
) -> Result<RunMetrics> {
    let run = || -> Result<RunMetrics> {
        let g: BTreeMap<String, BTreeSet<PairId>> = gold.iter().map(|a| (a.doc_id.clone(), a.pairs())).collect();
        let p: BTreeMap<String, BTreeSet<PairId>> =
            reports.iter().map(|r| (r.doc_id.clone(), r.predicted_pairs())).collect();
        let pairs = evaluate_sets(&g, &p)?;
        let mut planted_by_doc: BTreeMap<&str, BTreeSet<PairId>> = BTreeMap::new();
        for x in planted {
            planted_by_doc.entry(x.doc_id.as_str()).or_default().insert(x.pair());
        }
        let empty = BTreeSet::new();
        let inc = reports.iter().fold(Counts::default(), |acc, r| {
            acc + count(planted_by_doc.get(r.doc_id.as_str()).unwrap_or(&empty), &r.inconsistent_pairs())
        });
        let zero_gold_docs = pairs
            .per_doc
            .iter()
            .filter(|d| d.scores.zero_gold)
            .map(|d| d.doc_id.clone())
            .collect();
        Ok(RunMetrics {
            pairs,
            inconsistencies: Scores::from_counts(inc),
            abstained: reports.iter().map(|r| r.abstained).sum(),
            zero_gold_docs,
        })
    };
    run().map_err(|e| e.at(Stage::Evaluate))
}

pub fn sweep_corpus(
    embeddings: &[EmbeddingMatrix],
    gold: &[GoldAnnotation],
    docs: &[Document],
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>> {
    let by_id: BTreeMap<&str, BTreeSet<PairId>> = gold.iter().map(|g| (g.doc_id.as_str(), g.pairs())).collect();
    let sets = docs
        .iter()
        .map(|d| {
            by_id
                .get(d.doc_id.as_str())
                .ok_or_else(|| Error::DocMismatch(format!("no gold for {}", d.doc_id)).at(Stage::Evaluate))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&EmbeddingMatrix, &BTreeSet<PairId>)> = embeddings.iter().zip(sets).collect();
    Ok(sweep_thresholds(&pairs, thresholds))
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub doc_ids: Vec<String>,
    pub embeddings: Vec<EmbeddingMatrix>,
    pub candidates: Vec<CandidatePairSet>,
    pub verdicts: Vec<Vec<VerdictRecord>>,
    pub reports: Vec<MatchReport>,
    pub metrics: RunMetrics,
    pub sweep: Vec<SweepPoint>,
}

pub fn run_pipeline(
    corpus: &SyntheticCorpus,
    embedder: &dyn MentionEmbedder,
    backend: &dyn ClassifierBackend,
    cfg: &RunConfig,
) -> Result<PipelineOutput> {
    let docs = &corpus.documents;
    extract_corpus(docs)?;
    let embeddings = embed_corpus(docs, embedder)?;
    let candidates = filter_corpus(&embeddings, &cfg.filter)?;
    let verdicts = classify_corpus(docs, &candidates, backend, &cfg.prompts, &cfg.dispatch)?;
    let reports = check_corpus(docs, &verdicts)?;
    let metrics = evaluate_corpus(&corpus.gold, &reports, &corpus.planted_inconsistencies)?;
    let sweep = sweep_corpus(&embeddings, &corpus.gold, docs, &cfg.sweep_thresholds)?;
    Ok(PipelineOutput {
        doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
        embeddings,
        candidates,
        verdicts,
        reports,
        metrics,
        sweep,
    })
}

// ---- persistence ---------------------------------------------------------

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(&it)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_embeddings(dir: &Path, doc_ids: &[String], embeddings: &[EmbeddingMatrix]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (id, e) in doc_ids.iter().zip(embeddings) {
        e.save(&dir.join(format!("{id}.emb")))?;
    }
    Ok(())
}

pub fn read_embeddings(dir: &Path, doc_ids: &[String]) -> Result<Vec<EmbeddingMatrix>> {
    doc_ids
        .iter()
        .map(|id| EmbeddingMatrix::load(&dir.join(format!("{id}.emb"))))
        .collect()
}

pub fn write_candidates(path: &Path, doc_ids: &[String], candidates: &[CandidatePairSet]) -> Result<()> {
    write_jsonl(
        path,
        doc_ids.iter().zip(candidates).flat_map(|(id, c)| candidate_records(id, c)),
    )
}

/// Candidate sets in `doc_ids` order; documents without records get an empty set.
pub fn read_candidates(path: &Path, doc_ids: &[String]) -> Result<Vec<CandidatePairSet>> {
    let mut by_doc: BTreeMap<String, CandidatePairSet> = BTreeMap::new();
    for r in read_jsonl::<CandidateRecord>(path)? {
        by_doc.entry(r.doc_id).or_default().insert(r.mention_i, r.mention_j, r.similarity);
    }
    Ok(doc_ids.iter().map(|id| by_doc.remove(id).unwrap_or_default()).collect())
}

pub fn write_verdicts(path: &Path, verdicts: &[Vec<VerdictRecord>]) -> Result<()> {
    write_jsonl(path, verdicts.iter().flatten())
}

pub fn read_verdicts(path: &Path, doc_ids: &[String]) -> Result<Vec<Vec<VerdictRecord>>> {
    let mut by_doc: BTreeMap<String, Vec<VerdictRecord>> = BTreeMap::new();
    for r in read_jsonl::<VerdictRecord>(path)? {
        by_doc.entry(r.doc_id.clone()).or_default().push(r);
    }
    Ok(doc_ids.iter().map(|id| by_doc.remove(id).unwrap_or_default()).collect())
}

pub fn write_reports(dir: &Path, reports: &[MatchReport]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for r in reports {
        fs::write(dir.join(format!("{}.json", r.doc_id)), serde_json::to_string_pretty(r)?)?;
    }
    Ok(())
}

pub fn read_reports(dir: &Path, doc_ids: &[String]) -> Result<Vec<MatchReport>> {
    doc_ids
        .iter()
        .map(|id| Ok(serde_json::from_slice(&fs::read(dir.join(format!("{id}.json")))?)?))
        .collect()
}

pub fn write_metrics(path: &Path, m: &RunMetrics) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(m)?)?;
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    threshold: f64,
    recall: f64,
    pairs_per_doc: f64,
}

pub fn write_sweep(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
    for p in points {
        w.serialize(SweepRow {
            threshold: p.threshold,
            recall: p.recall,
            pairs_per_doc: p.pairs_per_doc,
        })
        .map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every artifact of a run under `out`.
pub fn write_outputs(out: &Path, o: &PipelineOutput) -> Result<()> {
    fs::create_dir_all(out)?;
    write_embeddings(&out.join("embeddings"), &o.doc_ids, &o.embeddings)?;
    write_candidates(&out.join("candidates.jsonl"), &o.doc_ids, &o.candidates)?;
    write_verdicts(&out.join("verdicts.jsonl"), &o.verdicts)?;
    write_reports(&out.join("reports"), &o.reports)?;
    write_metrics(&out.join("metrics.json"), &o.metrics)?;
    write_sweep(&out.join("sweep.csv"), &o.sweep)
}
