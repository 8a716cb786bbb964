//! Parallel encoding layouts.
//!
//! A parallel layout packs a shared table context, an instruction prompt and
//! every mention of the table into one sequence
//! `context ⊕ prompt ⊕ v_1 ⊕ ... ⊕ v_n`. Mention tokens see the context, the
//! prompt and the earlier tokens of their own mention only, and their
//! positions restart right after the prompt, so each mention is encoded as if
//! it were alone.
//!
//! The extractive layout is the baseline: just the context under a causal
//! mask, reading each mention at its last in-context token.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::tokenizer::{stable_hash_parts, Tokenizer};

pub const DEFAULT_MAX_LEN: usize = 4096;
pub const DEFAULT_EMBED_PROMPT: &str =
    "Encode the semantics of each following numerical mention given the table context:";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRole {
    Context,
    Prompt,
    /// Token `offset` (1-based) of mention segment `segment`.
    Mention { segment: usize, offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// Mention segments isolated from each other.
    Parallel,
    /// Plain causal mask over the whole sequence.
    Causal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionSegment {
    pub mention_id: u32,
    /// First slot of the segment.
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodingLayout {
    token_ids: Vec<u32>,
    roles: Vec<SlotRole>,
    positions: Vec<usize>,
    context_len: usize,
    prompt_len: usize,
    segments: Vec<MentionSegment>,
    /// Slot read out for each entry of `extract_ids`.
    extract_slots: Vec<usize>,
    extract_ids: Vec<u32>,
    mask: MaskKind,
    dropped: Vec<u32>,
}

impl EncodingLayout {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn role(&self, slot: usize) -> SlotRole {
        self.roles[slot]
    }

    pub fn position(&self, slot: usize) -> usize {
        self.positions[slot]
    }

    pub fn mask(&self) -> MaskKind {
        self.mask
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    /// `|T(c)| + |T(p_emb)|`.
    pub fn base_len(&self) -> usize {
        self.context_len + self.prompt_len
    }

    pub fn segments(&self) -> &[MentionSegment] {
        &self.segments
    }

    /// Mentions that did not fit under the length limit.
    pub fn dropped(&self) -> &[u32] {
        &self.dropped
    }

    /// Mention ids in output row order.
    pub fn extract_ids(&self) -> &[u32] {
        &self.extract_ids
    }

    pub fn extract_slots(&self) -> &[usize] {
        &self.extract_slots
    }

    pub fn mention_end_index(&self, mention_id: u32) -> Option<usize> {
        self.extract_ids
            .iter()
            .position(|&m| m == mention_id)
            .map(|k| self.extract_slots[k])
    }

    /// Whether the token at `query` may attend to the token at `key`.
    pub fn attention_allowed(&self, query: usize, key: usize) -> bool {
        if key > query {
            return false;
        }
        match (self.mask, self.roles[query]) {
            (MaskKind::Causal, _) => true,
            (MaskKind::Parallel, SlotRole::Context | SlotRole::Prompt) => true,
            (MaskKind::Parallel, SlotRole::Mention { segment, .. }) => match self.roles[key] {
                SlotRole::Context | SlotRole::Prompt => true,
                SlotRole::Mention { segment: other, .. } => other == segment,
            },
        }
    }
}

/// Builds a parallel layout for `mentions` (id, segment text) over a shared context.
///
/// Trailing mentions that would exceed `max_len` are dropped whole and
/// reported through [`EncodingLayout::dropped`].
pub fn build_layout(
    tokenizer: &dyn Tokenizer,
    context: &str,
    prompt: &str,
    mentions: &[(u32, &str)],
    max_len: usize,
) -> Result<EncodingLayout> {
    if mentions.is_empty() {
        return Err(Error::NoMentions);
    }
    let ctx = tokenizer.ids(context);
    let prm = tokenizer.ids(prompt);
    let base_len = ctx.len() + prm.len();
    if base_len > max_len {
        return Err(Error::ContextTooLong {
            needed: base_len,
            max_len,
        });
    }
    let mut token_ids = Vec::with_capacity(max_len.min(base_len * 2));
    let mut roles = Vec::new();
    let mut positions = Vec::new();
    for (i, id) in ctx.iter().enumerate() {
        token_ids.push(*id);
        roles.push(SlotRole::Context);
        positions.push(i);
    }
    for (i, id) in prm.iter().enumerate() {
        token_ids.push(*id);
        roles.push(SlotRole::Prompt);
        positions.push(ctx.len() + i);
    }

    let mut segments = Vec::with_capacity(mentions.len());
    let mut dropped = Vec::new();
    for (k, &(mention_id, text)) in mentions.iter().enumerate() {
        let ids = tokenizer.ids(text);
        if ids.is_empty() {
            return Err(Error::MentionNotLocated(text.to_string()));
        }
        if token_ids.len() + ids.len() > max_len {
            dropped.extend(mentions[k..].iter().map(|m| m.0));
            break;
        }
        let segment = segments.len();
        let start = token_ids.len();
        for (m, id) in ids.iter().enumerate() {
            token_ids.push(*id);
            roles.push(SlotRole::Mention {
                segment,
                offset: m + 1,
            });
            positions.push(base_len + m);
        }
        segments.push(MentionSegment {
            mention_id,
            start,
            len: ids.len(),
        });
    }
    let extract_slots = segments.iter().map(|s| s.start + s.len - 1).collect();
    let extract_ids = segments.iter().map(|s| s.mention_id).collect();
    Ok(EncodingLayout {
        token_ids,
        roles,
        positions,
        context_len: ctx.len(),
        prompt_len: prm.len(),
        segments,
        extract_slots,
        extract_ids,
        mask: MaskKind::Parallel,
        dropped,
    })
}

/// Builds an extractive layout: the context alone under a causal mask, reading
/// each mention at the last token of its occurrence in the context.
///
/// Mentions are located left to right, so repeated texts resolve to
/// successive occurrences in cell order.
pub fn build_epe_layout(
    tokenizer: &dyn Tokenizer,
    context: &str,
    mentions: &[(u32, &str)],
) -> Result<EncodingLayout> {
    if mentions.is_empty() {
        return Err(Error::NoMentions);
    }
    let ctx = tokenizer.ids(context);
    let mut cursor = 0;
    let mut extract_slots = Vec::with_capacity(mentions.len());
    for &(_, text) in mentions {
        let needle = tokenizer.ids(text);
        let found = (!needle.is_empty())
            .then(|| find_subsequence(&ctx[cursor..], &needle))
            .flatten()
            .ok_or_else(|| Error::MentionNotLocated(text.to_string()))?;
        let end = cursor + found + needle.len() - 1;
        extract_slots.push(end);
        cursor = end + 1;
    }
    Ok(EncodingLayout {
        roles: vec![SlotRole::Context; ctx.len()],
        positions: (0..ctx.len()).collect(),
        context_len: ctx.len(),
        prompt_len: 0,
        token_ids: ctx,
        segments: Vec::new(),
        extract_slots,
        extract_ids: mentions.iter().map(|m| m.0).collect(),
        mask: MaskKind::Causal,
        dropped: Vec::new(),
    })
}

fn find_subsequence(hay: &[u32], needle: &[u32]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Something that maps a layout to one embedding per extracted mention.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed_layout(&self, layout: &EncodingLayout) -> Result<EmbeddingMatrix>;
}

/// A single self-attention layer with fixed random weights.
///
/// Token vectors are derived from `(seed, token id)` and position vectors are
/// sinusoidal; the output for a mention is the residual hidden state at its
/// extraction slot, normalized. Attention follows
/// [`EncodingLayout::attention_allowed`] exactly, and keys are always visited
/// in slot order, so a mention's output depends on nothing it cannot see.
#[derive(Debug, Clone)]
pub struct ReferenceEncoder {
    dim: usize,
    seed: u64,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
}

impl ReferenceEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let mut mat = || -> Vec<f64> {
            (0..dim * dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect()
        };
        let (wq, wk, wv) = (mat(), mat(), mat());
        ReferenceEncoder { dim, seed, wq, wk, wv }
    }

    fn token_vector(&self, id: u32) -> Vec<f64> {
        let h = stable_hash_parts(&[&self.seed.to_le_bytes(), &id.to_le_bytes()]);
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn position_vector(&self, pos: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|k| {
                let freq = 1.0 / 10_000f64.powf((2 * (k / 2)) as f64 / self.dim as f64);
                let a = pos as f64 * freq;
                if k % 2 == 0 {
                    a.sin()
                } else {
                    a.cos()
                }
            })
            .collect()
    }

    fn apply(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| w[r * self.dim..(r + 1) * self.dim].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl Embedder for ReferenceEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_layout(&self, layout: &EncodingLayout) -> Result<EmbeddingMatrix> {
        let inputs: Vec<Vec<f64>> = (0..layout.len())
            .map(|s| {
                let t = self.token_vector(layout.token_ids[s]);
                let p = self.position_vector(layout.positions[s]);
                t.iter().zip(&p).map(|(a, b)| a + b).collect()
            })
            .collect();
        let keys: Vec<Vec<f64>> = inputs.iter().map(|x| self.apply(&self.wk, x)).collect();
        let values: Vec<Vec<f64>> = inputs.iter().map(|x| self.apply(&self.wv, x)).collect();
        let inv_sqrt = 1.0 / (self.dim as f64).sqrt();

        let mut rows = Vec::with_capacity(layout.extract_slots.len());
        for (&slot, &mention_id) in layout.extract_slots.iter().zip(&layout.extract_ids) {
            let q = self.apply(&self.wq, &inputs[slot]);
            let visible: Vec<usize> = (0..=slot).filter(|&k| layout.attention_allowed(slot, k)).collect();
            let scores: Vec<f64> = visible
                .iter()
                .map(|&k| q.iter().zip(&keys[k]).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt)
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = weights.iter().sum();
            let mut h = inputs[slot].clone();
            for (w, &k) in weights.iter().zip(&visible) {
                for (hd, vd) in h.iter_mut().zip(&values[k]) {
                    *hd += w / z * vd;
                }
            }
            rows.push((mention_id, h.into_iter().map(|x| x as f32).collect()));
        }
        EmbeddingMatrix::from_rows(self.dim, rows)
    }
}

/// Convenience wrapper: layout with the default tokenizer and prompt, then encode.
pub fn reference_encode(layout: &EncodingLayout, weights: &ReferenceEncoder) -> Result<EmbeddingMatrix> {
    weights.embed_layout(layout)
}
