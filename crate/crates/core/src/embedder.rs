//! Mention embedders used by the pipeline.
//!
//! The trainable embedder maps each mention to hashed sparse features drawn
//! from its table (chapter title and corner cell, row header, column header,
//! position statement) and applies a linear projection `W`, then normalizes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cipe::{build_epe_layout, build_layout, Embedder, ReferenceEncoder};
use crate::document::{shared_context, Document, NumericalMention, Table, SURROUNDING_CHAR_BUDGET};
use crate::error::{Error, Result};
use crate::matrix::{EmbeddingMatrix, RowMatrix};
use crate::tokenizer::{stable_hash_parts, words, DefaultTokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            dim: 64,
            feature_dim: 2048,
            seed: 7,
        }
    }
}

/// Sparse feature vector: sorted unique indices, L2-normalized values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    pub indices: Vec<u32>,
    pub values: Vec<f32>,
}

impl SparseFeatures {
    fn from_hashes(hashes: impl IntoIterator<Item = u64>, feature_dim: usize) -> Self {
        let mut idx: Vec<u32> = hashes.into_iter().map(|h| (h % feature_dim as u64) as u32).collect();
        idx.sort_unstable();
        let mut indices = Vec::new();
        let mut values: Vec<f32> = Vec::new();
        for i in idx {
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += 1.0;
            } else {
                indices.push(i);
                values.push(1.0);
            }
        }
        let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        SparseFeatures { indices, values }
    }

    pub fn to_dense(&self, feature_dim: usize) -> Vec<f32> {
        let mut out = vec![0.0; feature_dim];
        for (i, v) in self.indices.iter().zip(&self.values) {
            out[*i as usize] = *v;
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

fn feature_hashes(namespace: &str, text: &str, out: &mut Vec<u64>) {
    let ns = namespace.as_bytes();
    for w in words(text) {
        out.push(stable_hash_parts(&[ns, w.as_bytes()]));
    }
    let whole = text.trim().to_lowercase();
    if !whole.is_empty() {
        out.push(stable_hash_parts(&[ns, b"=", whole.as_bytes()]));
    }
}

/// Hashed bag-of-token features for one mention.
pub fn mention_features(table: &Table, m: &NumericalMention, feature_dim: usize) -> SparseFeatures {
    let cell_text = |r: usize, c: usize| table.cell(r, c).map_or("", |c| c.raw_text.as_str());
    let mut hashes = Vec::new();
    feature_hashes("ctx", &table.chapter_title, &mut hashes);
    feature_hashes("ctx", cell_text(0, 0), &mut hashes);
    if m.col > 0 {
        feature_hashes("row", cell_text(m.row, 0), &mut hashes);
    }
    if m.row > 0 {
        feature_hashes("col", cell_text(0, m.col), &mut hashes);
    }
    feature_hashes("pos", &m.position_statement(), &mut hashes);
    SparseFeatures::from_hashes(hashes, feature_dim)
}

/// Features for every mention of a document, in mention id order.
pub fn document_features(doc: &Document, feature_dim: usize) -> Vec<SparseFeatures> {
    doc.mentions_by_table()
        .into_iter()
        .flat_map(|(t, ms)| ms.iter().map(move |m| mention_features(t, m, feature_dim)))
        .collect()
}

/// The untrained embedding: normalized dense features.
pub fn baseline_embed(table: &Table, m: &NumericalMention, feature_dim: usize) -> Vec<f32> {
    mention_features(table, m, feature_dim).to_dense(feature_dim)
}

/// `W f`, normalized. `w` has one row per output dimension.
pub fn projection_embed(features: &SparseFeatures, w: &RowMatrix) -> Vec<f32> {
    let mut out: Vec<f32> = (0..w.len())
        .map(|r| {
            let row = w.row(r);
            features
                .indices
                .iter()
                .zip(&features.values)
                .map(|(i, v)| f64::from(row[*i as usize]) * f64::from(*v))
                .sum::<f64>() as f32
        })
        .collect();
    crate::matrix::l2_normalize(&mut out);
    out
}

/// Anything that embeds all mentions of a document.
pub trait MentionEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_document(&self, doc: &Document) -> Result<EmbeddingMatrix>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionEmbedder {
    w: RowMatrix,
}

impl ProjectionEmbedder {
    /// Gaussian initialization, `N(0, 1/dim)` entries.
    pub fn random(cfg: &EmbedderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, 1.0 / (cfg.dim as f64).sqrt()).expect("valid std");
        let data = (0..cfg.dim * cfg.feature_dim)
            .map(|_| normal.sample(&mut rng) as f32)
            .collect();
        let w = RowMatrix::new(cfg.feature_dim, (0..cfg.dim as u32).collect(), data).expect("shape");
        ProjectionEmbedder { w }
    }

    /// Square identity map, for tests.
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        ProjectionEmbedder {
            w: RowMatrix::new(n, (0..n as u32).collect(), data).expect("shape"),
        }
    }

    pub fn from_matrix(w: RowMatrix) -> Result<Self> {
        if w.is_empty() || w.dim() == 0 {
            return Err(Error::DimMismatch { expected: 1, found: 0 });
        }
        Ok(ProjectionEmbedder { w })
    }

    pub fn weights(&self) -> &RowMatrix {
        &self.w
    }

    pub fn feature_dim(&self) -> usize {
        self.w.dim()
    }

    pub fn embed(&self, features: &SparseFeatures) -> Vec<f32> {
        projection_embed(features, &self.w)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.w.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_matrix(RowMatrix::load(path)?)
    }
}

impl MentionEmbedder for ProjectionEmbedder {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn embed_document(&self, doc: &Document) -> Result<EmbeddingMatrix> {
        let rows = doc
            .mentions()
            .iter()
            .zip(document_features(doc, self.feature_dim()))
            .map(|(m, f)| (m.mention_id, self.embed(&f)))
            .collect();
        EmbeddingMatrix::from_rows(self.dim(), rows)
    }
}

/// Dense hashed features without a projection.
#[derive(Debug, Clone, Copy)]
pub struct BaselineEmbedder {
    pub feature_dim: usize,
}

impl MentionEmbedder for BaselineEmbedder {
    fn dim(&self) -> usize {
        self.feature_dim
    }

    fn embed_document(&self, doc: &Document) -> Result<EmbeddingMatrix> {
        let rows = doc
            .mentions()
            .iter()
            .zip(document_features(doc, self.feature_dim))
            .map(|(m, f)| (m.mention_id, f.to_dense(self.feature_dim)))
            .collect();
        EmbeddingMatrix::from_rows(self.feature_dim, rows)
    }
}

/// Which layout the attention encoder reads mentions from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutMode {
    /// Context, prompt and appended mention segments with the isolating mask.
    Parallel,
    /// Context only, read at each mention's last token.
    Extractive,
}

/// Runs the reference attention encoder once per table.
#[derive(Debug, Clone)]
pub struct AttentionEmbedder {
    pub encoder: ReferenceEncoder,
    pub tokenizer: DefaultTokenizer,
    pub mode: LayoutMode,
    pub prompt: String,
    pub max_len: usize,
}

impl AttentionEmbedder {
    pub fn new(encoder: ReferenceEncoder, mode: LayoutMode) -> Self {
        AttentionEmbedder {
            encoder,
            tokenizer: DefaultTokenizer::default(),
            mode,
            prompt: crate::cipe::DEFAULT_EMBED_PROMPT.to_string(),
            max_len: crate::cipe::DEFAULT_MAX_LEN,
        }
    }
}

/// Mention segment text for the parallel layout: where the value sits, then the value.
pub fn mention_segment(m: &NumericalMention) -> String {
    format!("{}: {}", m.position_statement(), m.raw_text)
}

impl MentionEmbedder for AttentionEmbedder {
    fn dim(&self) -> usize {
        self.encoder.dim()
    }

    fn embed_document(&self, doc: &Document) -> Result<EmbeddingMatrix> {
        let mut rows = Vec::with_capacity(doc.mentions().len());
        for (table, ms) in doc.mentions_by_table() {
            if ms.is_empty() {
                continue;
            }
            let context = shared_context(table, SURROUNDING_CHAR_BUDGET, None);
            let layout = match self.mode {
                LayoutMode::Parallel => {
                    let segs: Vec<String> = ms.iter().map(mention_segment).collect();
                    let items: Vec<(u32, &str)> =
                        ms.iter().zip(&segs).map(|(m, s)| (m.mention_id, s.as_str())).collect();
                    build_layout(&self.tokenizer, &context, &self.prompt, &items, self.max_len)?
                }
                LayoutMode::Extractive => {
                    let items: Vec<(u32, &str)> = ms.iter().map(|m| (m.mention_id, m.raw_text.as_str())).collect();
                    build_epe_layout(&self.tokenizer, &context, &items)?
                }
            };
            if !layout.dropped().is_empty() {
                log::warn!(
                    "{}/{}: {} mentions dropped by the length limit",
                    doc.doc_id,
                    table.table_id,
                    layout.dropped().len()
                );
            }
            let e = self.encoder.embed_layout(&layout)?;
            for (k, id) in e.ids().iter().enumerate() {
                rows.push((*id, e.row(k).to_vec()));
            }
        }
        rows.sort_by_key(|r| r.0);
        EmbeddingMatrix::from_rows(self.dim(), rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GenConfig};

    fn small_doc() -> Document {
        let cfg = GenConfig {
            n_docs: 1,
            ..GenConfig::default()
        };
        generate_corpus(&cfg).unwrap().documents.remove(0)
    }

    #[test]
    fn identical_inputs_identical_vectors() {
        let d = small_doc();
        let (t, ms) = d.mentions_by_table()[0];
        assert_eq!(baseline_embed(t, &ms[0], 512), baseline_embed(t, &ms[0], 512));
        let n: f32 = baseline_embed(t, &ms[0], 512).iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
    }

    #[test]
    fn identity_one_hot_is_basis_vector() {
        let e = ProjectionEmbedder::identity(8);
        let f = SparseFeatures {
            indices: vec![3],
            values: vec![1.0],
        };
        let mut expect = vec![0.0; 8];
        expect[3] = 1.0;
        assert_eq!(e.embed(&f), expect);
    }

    #[test]
    fn projection_rows_unit_norm() {
        let d = small_doc();
        let e = ProjectionEmbedder::random(&EmbedderConfig::default()).embed_document(&d).unwrap();
        assert_eq!(e.len(), d.mentions().len());
        assert_eq!(e.ids(), d.mentions().iter().map(|m| m.mention_id).collect::<Vec<_>>());
        for i in 0..e.len() {
            assert!((e.similarity(i, i) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_embedders_cover_all_mentions() {
        let d = small_doc();
        for mode in [LayoutMode::Parallel, LayoutMode::Extractive] {
            let e = AttentionEmbedder::new(ReferenceEncoder::new(16, 1), mode).embed_document(&d).unwrap();
            assert_eq!(e.len(), d.mentions().len());
        }
    }
}
