//! Table ordering for cross-table alignment pretraining.
//!
//! Tables become nodes of a graph weighted by how many numeric values they
//! share. A greedy walk orders them so that tables sharing values sit next to
//! each other, and the ordered tables are packed into fixed-size chunks.

use std::collections::{BTreeMap, HashMap};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;
use crate::value::NumericValue;

pub const EXACT_MAX_NODES: usize = 10;

/// `equal(V_i, V_j) / (|V_i| + |V_j|)` with multiset matching.
pub fn relevance_score(vi: &[NumericValue], vj: &[NumericValue]) -> Result<f64> {
    if vi.is_empty() || vj.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut counts: HashMap<&NumericValue, usize> = HashMap::new();
    for v in vi {
        *counts.entry(v).or_default() += 1;
    }
    let mut equal = 0usize;
    for v in vj {
        if let Some(c) = counts.get_mut(v) {
            if *c > 0 {
                *c -= 1;
                equal += 1;
            }
        }
    }
    Ok(equal as f64 / (vi.len() + vj.len()) as f64)
}

/// Undirected weighted graph over table ids; only positive weights are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceGraph {
    nodes: Vec<String>,
    adj: Vec<BTreeMap<usize, f64>>,
}

impl RelevanceGraph {
    pub fn new(nodes: Vec<String>) -> Self {
        let adj = vec![BTreeMap::new(); nodes.len()];
        RelevanceGraph { nodes, adj }
    }

    /// Adds or replaces an edge. Non-positive weights and self-loops are ignored.
    pub fn add_edge(&mut self, a: usize, b: usize, w: f64) {
        if a == b || w <= 0.0 {
            return;
        }
        self.adj[a].insert(b, w);
        self.adj[b].insert(a, w);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &str {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.adj[a].get(&b).copied().unwrap_or(0.0)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adj[i].iter().map(|(j, w)| (*j, *w))
    }

    /// Edges as `(a, b, w)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (a, nb) in self.adj.iter().enumerate() {
            for (&b, &w) in nb {
                if a < b {
                    out.push((a, b, w));
                }
            }
        }
        out
    }

    /// Sum of edge weights between consecutive nodes.
    pub fn path_weight(&self, order: &[usize]) -> f64 {
        order.windows(2).map(|w| self.weight(w[0], w[1])).sum()
    }

    fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == id)
    }
}

/// One node per table (reading order); edges where the relevance score is positive.
pub fn build_graph(d: &Document) -> RelevanceGraph {
    let lists: Vec<Vec<NumericValue>> = d
        .mentions_by_table()
        .into_iter()
        .map(|(_, ms)| ms.iter().map(|m| m.value.clone()).collect())
        .collect();
    let mut g = RelevanceGraph::new(d.tables.iter().map(|t| t.table_id.clone()).collect());
    for i in 0..lists.len() {
        for j in i + 1..lists.len() {
            if let Ok(w) = relevance_score(&lists[i], &lists[j]) {
                g.add_edge(i, j, w);
            }
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainingPath {
    pub table_ids: Vec<String>,
    /// Path positions reached through a zero-weight jump.
    pub bridges: Vec<usize>,
    pub total_weight: f64,
}

fn to_path(g: &RelevanceGraph, order: &[usize]) -> PretrainingPath {
    let bridges = (1..order.len()).filter(|&k| g.weight(order[k - 1], order[k]) == 0.0).collect();
    PretrainingPath {
        table_ids: order.iter().map(|&i| g.node(i).to_string()).collect(),
        bridges,
        total_weight: g.path_weight(order),
    }
}

fn lowest_id(g: &RelevanceGraph, cands: impl Iterator<Item = usize>) -> Option<usize> {
    cands.min_by(|&a, &b| g.node(a).cmp(g.node(b)))
}

/// Greedy walk: start at a minimum-degree node, always step to the heaviest
/// unvisited neighbor, and at a dead end jump to a random minimum-degree
/// unvisited node. Ties go to the lowest table id.
pub fn greedy_max_path(g: &RelevanceGraph, seed: u64) -> PretrainingPath {
    let n = g.len();
    if n == 0 {
        return to_path(g, &[]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visited = vec![false; n];
    let min_degree_unvisited = |visited: &[bool]| -> Vec<usize> {
        let min = (0..n).filter(|&i| !visited[i]).map(|i| g.degree(i)).min().unwrap_or(0);
        let mut c: Vec<usize> = (0..n).filter(|&i| !visited[i] && g.degree(i) == min).collect();
        c.sort_by(|&a, &b| g.node(a).cmp(g.node(b)));
        c
    };
    let mut current = lowest_id(g, min_degree_unvisited(&visited).into_iter()).expect("non-empty");
    let mut order = vec![current];
    visited[current] = true;
    while order.len() < n {
        let best = g
            .neighbors(current)
            .filter(|(j, _)| !visited[*j])
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| g.node(b.0).cmp(g.node(a.0))));
        current = match best {
            Some((j, _)) => j,
            None => *min_degree_unvisited(&visited).choose(&mut rng).expect("unvisited nodes remain"),
        };
        visited[current] = true;
        order.push(current);
    }
    to_path(g, &order)
}

/// Tables in reading order.
pub fn reading_order_path(d: &Document) -> PretrainingPath {
    let g = build_graph(d);
    let order: Vec<usize> = (0..g.len()).collect();
    to_path(&g, &order)
}

/// Maximum-weight Hamiltonian path by exhaustive enumeration. Among equal
/// weights the lexicographically first order (by node index) wins.
pub fn exact_max_path(g: &RelevanceGraph) -> Result<PretrainingPath> {
    let n = g.len();
    if n > EXACT_MAX_NODES {
        return Err(Error::TooLarge {
            nodes: n,
            max: EXACT_MAX_NODES,
        });
    }
    let w: Vec<Vec<f64>> = (0..n).map(|a| (0..n).map(|b| g.weight(a, b)).collect()).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_w = f64::NEG_INFINITY;
    loop {
        let total: f64 = perm.windows(2).map(|p| w[p[0]][p[1]]).sum();
        if total > best_w {
            best_w = total;
            best.clone_from(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(to_path(g, &best))
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let Some(i) = (0..p.len() - 1).rev().find(|&i| p[i] < p[i + 1]) else {
        return false;
    };
    let j = (i + 1..p.len()).rev().find(|&j| p[j] > p[i]).expect("exists");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainingChunk {
    pub text: String,
    pub table_ids: Vec<String>,
    pub token_len: usize,
}

/// Packs path tables greedily into chunks of at most `chunk_size` tokens.
/// A table longer than `chunk_size` gets a chunk of its own, cut at the limit.
pub fn truncate_path(
    d: &Document,
    p: &PretrainingPath,
    chunk_size: usize,
    tokenizer: &dyn Tokenizer,
) -> Vec<PretrainingChunk> {
    assert!(chunk_size > 0, "chunk_size must be positive");
    let mut chunks = Vec::new();
    let mut cur = PretrainingChunk {
        text: String::new(),
        table_ids: Vec::new(),
        token_len: 0,
    };
    let flush = |cur: &mut PretrainingChunk, chunks: &mut Vec<PretrainingChunk>| {
        if !cur.table_ids.is_empty() {
            chunks.push(std::mem::replace(
                cur,
                PretrainingChunk {
                    text: String::new(),
                    table_ids: Vec::new(),
                    token_len: 0,
                },
            ));
        }
    };
    for id in &p.table_ids {
        let Some(t) = d.table(id) else { continue };
        let mut text = t.linearize();
        let toks = tokenizer.tokenize(&text);
        let mut len = toks.len();
        if len > chunk_size {
            text.truncate(toks[chunk_size - 1].end);
            len = chunk_size;
        }
        if cur.token_len + len > chunk_size {
            flush(&mut cur, &mut chunks);
        }
        if !cur.text.is_empty() {
            cur.text.push_str("\n\n");
        }
        cur.text.push_str(&text);
        cur.table_ids.push(id.clone());
        cur.token_len += len;
    }
    flush(&mut cur, &mut chunks);
    chunks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub table_ids: Vec<String>,
    pub bridge_count: usize,
    pub path_weight: f64,
}

/// Greedy path plus chunking for one document.
pub fn document_chunks(
    d: &Document,
    chunk_size: usize,
    seed: u64,
    tokenizer: &dyn Tokenizer,
) -> (PretrainingPath, Vec<ChunkRecord>) {
    let g = build_graph(d);
    let path = greedy_max_path(&g, seed);
    let records = truncate_path(d, &path, chunk_size, tokenizer)
        .into_iter()
        .enumerate()
        .map(|(k, c)| ChunkRecord {
            doc_id: d.doc_id.clone(),
            chunk_index: k,
            text: c.text,
            table_ids: c.table_ids,
            bridge_count: path.bridges.len(),
            path_weight: path.total_weight,
        })
        .collect();
    (path, records)
}

/// Weight of `order` (table ids) under `g`; unknown ids count as bridges.
pub fn weight_of(g: &RelevanceGraph, order: &[String]) -> f64 {
    let idx: Vec<usize> = order.iter().filter_map(|id| g.index_of(id)).collect();
    g.path_weight(&idx)
}
