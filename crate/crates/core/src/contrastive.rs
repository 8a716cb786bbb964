//! Contrastive objectives over mention embeddings and the projection trainer.
//!
//! Similarities are cosines of the batch rows, so losses and gradients are
//! taken with respect to the raw (not necessarily unit) rows.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SyntheticCorpus;
use crate::document::Document;
use crate::embedder::{document_features, ProjectionEmbedder, SparseFeatures};
use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub tau: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub epsilon: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            tau: 0.15,
            alpha1: 0.75,
            alpha2: 0.25,
            epsilon: 1e-4,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.epsilon > 0.0 && self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(Error::Config(format!("invalid loss parameters {self:?}")));
        }
        Ok(())
    }
}

/// A batch of embedding rows with their in-batch positives.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    rows: Vec<Vec<f64>>,
    positives: Vec<Vec<usize>>,
    isolated: Vec<usize>,
    nonisolated: Vec<usize>,
}

impl Batch {
    /// `positives[i]` lists the other rows equivalent to row `i`; it must be symmetric.
    pub fn new(rows: Vec<Vec<f64>>, positives: Vec<Vec<usize>>) -> Result<Batch> {
        let n = rows.len();
        if positives.len() != n {
            return Err(Error::DimMismatch {
                expected: n,
                found: positives.len(),
            });
        }
        if let Some(d) = rows.first().map(Vec::len) {
            if let Some(bad) = rows.iter().find(|r| r.len() != d) {
                return Err(Error::DimMismatch {
                    expected: d,
                    found: bad.len(),
                });
            }
        }
        let mut positives = positives;
        for (i, p) in positives.iter_mut().enumerate() {
            p.sort_unstable();
            p.dedup();
            if p.iter().any(|&j| j == i || j >= n) {
                return Err(Error::Config(format!("positive set of row {i} is invalid")));
            }
        }
        for (i, p) in positives.iter().enumerate() {
            if p.iter().any(|&j| positives[j].binary_search(&i).is_err()) {
                return Err(Error::Config(format!("positive set of row {i} is not symmetric")));
            }
        }
        let (nonisolated, isolated) = (0..n).partition(|&i| !positives[i].is_empty());
        Ok(Batch {
            rows,
            positives,
            isolated,
            nonisolated,
        })
    }

    /// Rows sharing a `Some` label are positives of each other.
    pub fn from_labels(rows: Vec<Vec<f64>>, labels: &[Option<usize>]) -> Result<Batch> {
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            if let Some(l) = l {
                by_label.entry(*l).or_default().push(i);
            }
        }
        let positives = labels
            .iter()
            .enumerate()
            .map(|(i, l)| match l {
                Some(l) => by_label[l].iter().copied().filter(|&j| j != i).collect(),
                None => Vec::new(),
            })
            .collect();
        Batch::new(rows, positives)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn positives(&self, i: usize) -> &[usize] {
        &self.positives[i]
    }

    pub fn isolated(&self) -> &[usize] {
        &self.isolated
    }

    pub fn nonisolated(&self) -> &[usize] {
        &self.nonisolated
    }

    /// Same positives, new rows.
    pub fn with_rows(&self, rows: Vec<Vec<f64>>) -> Batch {
        assert_eq!(rows.len(), self.rows.len());
        Batch { rows, ..self.clone() }
    }

    fn units(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                r.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }).collect()
            })
            .collect()
    }
}

fn dotf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine_matrix(units: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = units.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = dotf(&units[i], &units[j]);
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    s
}

/// Log-sum-exp and the matching softmax weights.
fn lse(xs: &[f64]) -> (f64, Vec<f64>) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (max, vec![0.0; xs.len()]);
    }
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    (max + z.ln(), exps.into_iter().map(|e| e / z).collect())
}

/// Value and `dL/dS` of the non-isolated term.
fn nonisolated_terms(b: &Batch, s: &[Vec<f64>], p: &LossParams) -> Result<(f64, Vec<Vec<f64>>)> {
    let nn = &b.nonisolated;
    if nn.len() < 2 {
        return Err(Error::EmptyNonIsolated);
    }
    let n = b.len();
    let scale = 1.0 / nn.len() as f64;
    let mut g = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for &i in nn {
        let den: Vec<f64> = nn.iter().map(|&k| s[i][k] / p.tau).collect();
        let num: Vec<f64> = b.positives[i].iter().map(|&j| s[i][j] / p.tau).collect();
        let (lse_den, w_den) = lse(&den);
        let (lse_num, w_num) = lse(&num);
        total += lse_den - lse_num;
        for (&k, w) in nn.iter().zip(&w_den) {
            g[i][k] += scale * w / p.tau;
        }
        for (&j, w) in b.positives[i].iter().zip(&w_num) {
            g[i][j] -= scale * w / p.tau;
        }
    }
    Ok((total * scale, g))
}

/// Value and `dL/dS` of the isolated term.
fn isolated_terms(b: &Batch, s: &[Vec<f64>], p: &LossParams) -> (f64, Vec<Vec<f64>>) {
    let n = b.len();
    let mut g = vec![vec![0.0; n]; n];
    let ni = &b.isolated;
    if ni.len() < 2 {
        return (0.0, g);
    }
    let mut xs = vec![p.epsilon.ln()];
    let mut slots = Vec::with_capacity(ni.len() * (ni.len() - 1));
    for &t in ni {
        for &q in ni {
            if t != q {
                xs.push(s[t][q] / p.tau);
                slots.push((t, q));
            }
        }
    }
    let (l, w) = lse(&xs);
    for ((t, q), wt) in slots.into_iter().zip(&w[1..]) {
        g[t][q] += wt / p.tau;
    }
    (l - p.epsilon.ln(), g)
}

/// Mean over non-isolated rows of `-log(sum_P exp(s/τ) / sum_{N_n} exp(s/τ))`.
pub fn loss_nonisolated(b: &Batch, p: &LossParams) -> Result<f64> {
    let s = cosine_matrix(&b.units());
    nonisolated_terms(b, &s, p).map(|r| r.0)
}

/// `-log(ε / (ε + Σ_{t≠q} exp(s_tq/τ)))` over ordered isolated pairs.
pub fn loss_isolated(b: &Batch, p: &LossParams) -> f64 {
    let s = cosine_matrix(&b.units());
    isolated_terms(b, &s, p).0
}

/// Both terms of the decoupled objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub loss_n: f64,
    pub loss_i: f64,
    pub loss: f64,
}

/// `α1·L_n + α2·L_i`. A batch with fewer than two non-isolated rows only
/// fails when `α1 > 0`.
pub fn combined_loss(b: &Batch, p: &LossParams) -> Result<f64> {
    loss_and_gradient(b, p).map(|(parts, _)| parts.loss)
}

/// Gradient of the combined loss with respect to every batch row.
pub fn loss_gradient(b: &Batch, p: &LossParams) -> Result<Vec<Vec<f64>>> {
    loss_and_gradient(b, p).map(|r| r.1)
}

pub fn loss_and_gradient(b: &Batch, p: &LossParams) -> Result<(LossParts, Vec<Vec<f64>>)> {
    let units = b.units();
    let s = cosine_matrix(&units);
    let n = b.len();
    let mut g = vec![vec![0.0; n]; n];
    let mut loss_n = 0.0;
    if p.alpha1 > 0.0 {
        let (l, gn) = nonisolated_terms(b, &s, p)?;
        loss_n = l;
        accumulate(&mut g, &gn, p.alpha1);
    } else if let Ok((l, _)) = nonisolated_terms(b, &s, p) {
        loss_n = l;
    }
    let (loss_i, gi) = isolated_terms(b, &s, p);
    accumulate(&mut g, &gi, p.alpha2);
    let parts = LossParts {
        loss_n,
        loss_i,
        loss: p.alpha1 * loss_n + p.alpha2 * loss_i,
    };
    Ok((parts, backprop_cosine(&b.rows, &units, &g)))
}

fn accumulate(acc: &mut [Vec<f64>], g: &[Vec<f64>], w: f64) {
    if w == 0.0 {
        return;
    }
    for (a, r) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(r) {
            *x += w * y;
        }
    }
}

/// Maps `dL/dS` (with `S = U Uᵀ`, `u = x/|x|`) to `dL/dx`.
fn backprop_cosine(rows: &[Vec<f64>], units: &[Vec<f64>], g: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let mut gu = vec![0.0; d];
            for k in 0..n {
                let c = g[i][k] + g[k][i];
                if c != 0.0 {
                    for (x, u) in gu.iter_mut().zip(&units[k]) {
                        *x += c * u;
                    }
                }
            }
            let norm = dotf(&rows[i], &rows[i]).sqrt();
            if norm == 0.0 {
                return vec![0.0; d];
            }
            let along = dotf(&gu, &units[i]);
            gu.iter().zip(&units[i]).map(|(x, u)| (x - along * u) / norm).collect()
        })
        .collect()
}

/// Self-positive InfoNCE over the whole batch: positives are `P(i) ∪ {i}`,
/// the denominator runs over every row.
pub fn standard_infonce(b: &Batch, p: &LossParams) -> f64 {
    standard_infonce_with_gradient(b, p).0
}

pub fn standard_infonce_with_gradient(b: &Batch, p: &LossParams) -> (f64, Vec<Vec<f64>>) {
    let n = b.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let units = b.units();
    let s = cosine_matrix(&units);
    let scale = 1.0 / n as f64;
    let mut g = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for i in 0..n {
        let den: Vec<f64> = s[i].iter().map(|x| x / p.tau).collect();
        let pos: Vec<usize> = std::iter::once(i).chain(b.positives[i].iter().copied()).collect();
        let num: Vec<f64> = pos.iter().map(|&j| s[i][j] / p.tau).collect();
        let (ld, wd) = lse(&den);
        let (ln, wn) = lse(&num);
        total += ld - ln;
        for (k, w) in wd.iter().enumerate() {
            g[i][k] += scale * w / p.tau;
        }
        for (&j, w) in pos.iter().zip(&wn) {
            g[i][j] -= scale * w / p.tau;
        }
    }
    (total * scale, backprop_cosine(&b.rows, &units, &g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Decoupled,
    Standard,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoupled" => Ok(Objective::Decoupled),
            "standard" => Ok(Objective::Standard),
            _ => Err(Error::Config(format!("unknown objective {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub tables_per_step: usize,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            lr: 2.0,
            tables_per_step: 12,
            seed: 11,
            objective: Objective::Decoupled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss_n: Option<f64>,
    pub loss_i: Option<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub embedder: ProjectionEmbedder,
    pub log: Vec<TrainLogRecord>,
}

impl TrainOutcome {
    /// Mean step loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in &self.log {
            let e = sums.entry(r.epoch).or_default();
            e.0 += r.loss;
            e.1 += 1;
        }
        sums.values().map(|(s, c)| s / *c as f64).collect()
    }
}

struct StepBatch {
    features: Vec<SparseFeatures>,
    positives: Vec<Vec<usize>>,
}

/// Splits each document into steps of up to `tables_per_step` consecutive
/// tables. Positives come from gold groups restricted to the step.
fn plan_steps(corpus: &SyntheticCorpus, cfg: &TrainConfig, feature_dim: usize) -> Vec<StepBatch> {
    let mut steps = Vec::new();
    for doc in &corpus.documents {
        let membership = corpus.gold_for(&doc.doc_id).map(|g| g.membership()).unwrap_or_default();
        let feats = document_features(doc, feature_dim);
        let by_table = doc_mention_ranges(doc);
        for chunk in by_table.chunks(cfg.tables_per_step.max(1)) {
            let idx: Vec<usize> = chunk.iter().flat_map(|r| r.clone()).collect();
            if idx.is_empty() {
                continue;
            }
            let labels: Vec<Option<usize>> = idx
                .iter()
                .map(|&k| membership.get(&doc.mentions()[k].mention_id).copied())
                .collect();
            let positives = (0..idx.len())
                .map(|a| {
                    (0..idx.len())
                        .filter(|&b| b != a && labels[a].is_some() && labels[a] == labels[b])
                        .collect()
                })
                .collect();
            steps.push(StepBatch {
                features: idx.iter().map(|&k| feats[k].clone()).collect(),
                positives,
            });
        }
    }
    steps
}

fn doc_mention_ranges(doc: &Document) -> Vec<std::ops::Range<usize>> {
    let mut start = 0;
    doc.mentions_by_table()
        .into_iter()
        .map(|(_, ms)| {
            let r = start..start + ms.len();
            start += ms.len();
            r
        })
        .collect()
}

/// Plain SGD on the projection weights with the analytic gradient.
pub fn train_embedder(
    corpus: &SyntheticCorpus,
    init: &ProjectionEmbedder,
    cfg: &TrainConfig,
    loss: &LossParams,
) -> Result<TrainOutcome> {
    loss.validate()?;
    let w0 = init.weights();
    let (dim, fdim) = (w0.len(), w0.dim());
    let mut w: Vec<f64> = w0.data().iter().map(|&x| f64::from(x)).collect();
    let steps = plan_steps(corpus, cfg, fdim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..steps.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (step, &si) in order.iter().enumerate() {
            let sb = &steps[si];
            let rows: Vec<Vec<f64>> = sb.features.iter().map(|f| project(&w, dim, fdim, f)).collect();
            let batch = Batch::new(rows, sb.positives.clone())?;
            let (record, grad) = match cfg.objective {
                Objective::Decoupled => {
                    let p = if batch.nonisolated().len() < 2 {
                        LossParams { alpha1: 0.0, ..*loss }
                    } else {
                        *loss
                    };
                    let (parts, g) = loss_and_gradient(&batch, &p)?;
                    let rec = TrainLogRecord {
                        epoch,
                        step,
                        loss_n: Some(parts.loss_n),
                        loss_i: Some(parts.loss_i),
                        loss: parts.loss,
                    };
                    (rec, g)
                }
                Objective::Standard => {
                    let (l, g) = standard_infonce_with_gradient(&batch, loss);
                    let rec = TrainLogRecord {
                        epoch,
                        step,
                        loss_n: None,
                        loss_i: None,
                        loss: l,
                    };
                    (rec, g)
                }
            };
            log::debug!("epoch {epoch} step {step} loss {:.6}", record.loss);
            log.push(record);
            for (f, gx) in sb.features.iter().zip(&grad) {
                for (r, gr) in gx.iter().enumerate() {
                    let row = &mut w[r * fdim..(r + 1) * fdim];
                    for (i, v) in f.indices.iter().zip(&f.values) {
                        row[*i as usize] -= cfg.lr * gr * f64::from(*v);
                    }
                }
            }
        }
        let this: Vec<f64> = log.iter().filter(|r| r.epoch == epoch).map(|r| r.loss).collect();
        if !this.is_empty() {
            log::info!("epoch {epoch}: mean loss {:.6}", this.iter().sum::<f64>() / this.len() as f64);
        }
    }
    let data = w.into_iter().map(|x| x as f32).collect();
    let embedder = ProjectionEmbedder::from_matrix(RowMatrix::new(fdim, (0..dim as u32).collect(), data)?)?;
    Ok(TrainOutcome { embedder, log })
}

fn project(w: &[f64], dim: usize, fdim: usize, f: &SparseFeatures) -> Vec<f64> {
    (0..dim)
        .map(|r| {
            let row = &w[r * fdim..(r + 1) * fdim];
            f.indices.iter().zip(&f.values).map(|(i, v)| row[*i as usize] * f64::from(*v)).sum()
        })
        .collect()
}
