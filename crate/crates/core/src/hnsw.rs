//! Layered proximity graph for cosine range queries over unit vectors.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::{dot, EmbeddingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Links per node on upper layers; layer 0 keeps twice as many.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            ef_search: 128,
            seed: 0x5eed,
        }
    }
}

/// Similarity with a total order; ties broken by node index for determinism.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    node: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    emb: EmbeddingMatrix,
    params: HnswParams,
    /// `links[node][layer]`.
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    top_layer: usize,
}

impl HnswIndex {
    pub fn build(emb: &EmbeddingMatrix, params: HnswParams) -> HnswIndex {
        let mut index = HnswIndex {
            emb: emb.clone(),
            params,
            links: Vec::with_capacity(emb.len()),
            entry: None,
            top_layer: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let ml = 1.0 / (params.m.max(2) as f64).ln();
        for node in 0..emb.len() {
            let u: f64 = rng.random::<f64>();
            let level = (-(1.0 - u).ln() * ml).floor() as usize;
            index.insert(node as u32, level);
        }
        index
    }

    pub fn len(&self) -> usize {
        self.emb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emb.is_empty()
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.emb
    }

    fn sim(&self, a: u32, b: u32) -> f64 {
        self.emb.similarity(a as usize, b as usize)
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, node: u32, level: usize) {
        self.links.push(vec![Vec::new(); level + 1]);
        let Some(mut ep) = self.entry else {
            self.entry = Some(node);
            self.top_layer = level;
            return;
        };
        let q = self.emb.row(node as usize).to_vec();
        for layer in (level + 1..=self.top_layer).rev() {
            ep = self.greedy_closest(&q, ep, layer);
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(self.top_layer)).rev() {
            let found = self.search_layer(&q, &eps, self.params.ef_construction, layer);
            let chosen = self.select_neighbors(&found, self.params.m);
            self.links[node as usize][layer] = chosen.clone();
            for &nb in &chosen {
                let mut list = self.links[nb as usize][layer].clone();
                list.push(node);
                if list.len() > self.max_links(layer) {
                    let mut scored: Vec<Scored> = list
                        .iter()
                        .map(|&x| Scored {
                            sim: self.sim(nb, x),
                            node: x,
                        })
                        .collect();
                    scored.sort_by(|a, b| b.cmp(a));
                    list = self.select_neighbors(&scored, self.max_links(layer));
                }
                self.links[nb as usize][layer] = list;
            }
            eps = found.iter().map(|s| s.node).collect();
        }
        if level > self.top_layer {
            self.top_layer = level;
            self.entry = Some(node);
        }
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the
    /// query than to every neighbor already kept, then top up with the best
    /// of the rest. `cands` must be sorted best first.
    fn select_neighbors(&self, cands: &[Scored], m: usize) -> Vec<u32> {
        let mut kept: Vec<u32> = Vec::with_capacity(m);
        let mut skipped = Vec::new();
        for c in cands {
            if kept.len() >= m {
                break;
            }
            if kept.iter().all(|&k| self.sim(c.node, k) < c.sim) {
                kept.push(c.node);
            } else {
                skipped.push(c.node);
            }
        }
        for s in skipped {
            if kept.len() >= m {
                break;
            }
            kept.push(s);
        }
        kept
    }

    fn greedy_closest(&self, q: &[f32], mut ep: u32, layer: usize) -> u32 {
        let mut best = dot(q, self.emb.row(ep as usize));
        loop {
            let mut changed = false;
            for &nb in &self.links[ep as usize][layer] {
                let s = dot(q, self.emb.row(nb as usize));
                if s > best || (s == best && nb < ep) {
                    best = s;
                    ep = nb;
                    changed = true;
                }
            }
            if !changed {
                return ep;
            }
        }
    }

    /// Best `ef` nodes found on `layer`, sorted best first.
    fn search_layer(&self, q: &[f32], eps: &[u32], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited: HashSet<u32> = eps.iter().copied().collect();
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        for &e in eps {
            let s = Scored {
                sim: dot(q, self.emb.row(e as usize)),
                node: e,
            };
            candidates.push(s);
            results.push(Reverse(s));
            if results.len() > ef {
                results.pop();
            }
        }
        while let Some(c) = candidates.pop() {
            let worst = results.peek().map(|r| r.0).expect("non-empty");
            if c < worst && results.len() >= ef {
                break;
            }
            for &nb in &self.links[c.node as usize][layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let s = Scored {
                    sim: dot(q, self.emb.row(nb as usize)),
                    node: nb,
                };
                let worst = results.peek().map(|r| r.0).expect("non-empty");
                if results.len() < ef || s > worst {
                    candidates.push(s);
                    results.push(Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Approximate `k` nearest rows to `q`, as `(row, cosine)` best first.
    pub fn search(&self, q: &[f32], k: usize, ef: usize) -> Vec<(usize, f64)> {
        let Some(mut ep) = self.entry else {
            return Vec::new();
        };
        for layer in (1..=self.top_layer).rev() {
            ep = self.greedy_closest(q, ep, layer);
        }
        self.search_layer(q, &[ep], ef.max(k), 0)
            .into_iter()
            .take(k)
            .map(|s| (s.node as usize, s.sim))
            .collect()
    }

    /// Rows other than `row` with cosine above `t`. The beam is doubled while
    /// its worst member still clears the threshold, so dense neighborhoods are
    /// not cut off at `ef_search`.
    pub fn range_query(&self, row: usize, t: f64) -> Vec<(usize, f64)> {
        let q = self.emb.row(row);
        let n = self.len();
        let mut ef = self.params.ef_search.max(1);
        loop {
            let found = self.search(q, ef, ef);
            let saturated = found.len() == ef && found.last().is_some_and(|x| x.1 > t);
            if !saturated || ef >= n {
                return found.into_iter().filter(|&(j, s)| j != row && s > t).collect();
            }
            ef = (ef * 2).min(n);
        }
    }
}
