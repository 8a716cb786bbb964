//! Pair classification: value-masked prompts, verdict parsing and backends.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::document::{pair, shared_context, Document, GoldAnnotation, PairId, Table, SURROUNDING_CHAR_BUDGET};
use crate::error::{Error, Result};
use crate::tokenizer::stable_hash_parts;

pub const PLACEHOLDER: &str = "[NUM]";

pub const DEFAULT_TASK: &str = "You check financial documents for consistency. Two numerical \
mentions are semantically equivalent when they report the same underlying fact: the same \
entity, the same period and the same metric. Numeric cells are hidden as [NUM], so decide \
from the surrounding structure only.";

pub const DEFAULT_OUTPUT: &str = "Target 1 is the value at row {row_i}, column {col_i} of table \
{table_i}. Target 2 is the value at row {row_j}, column {col_j} of table {table_j}. Are the two \
targets semantically equivalent? Answer yes or no.";

const REQUIRED_SLOTS: &[&str] = &["{row_i}", "{col_i}", "{row_j}", "{col_j}"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub task: String,
    /// Must contain `{row_i}`, `{col_i}`, `{row_j}`, `{col_j}`; may contain
    /// `{table_i}` and `{table_j}`.
    pub output: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            task: DEFAULT_TASK.to_string(),
            output: DEFAULT_OUTPUT.to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<()> {
        match REQUIRED_SLOTS.iter().find(|s| !self.output.contains(*s)) {
            Some(s) => Err(Error::Config(format!("output template lacks {s}"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationPrompt {
    pub pair: PairId,
    pub task_description: String,
    pub context_block: String,
    pub output_instruction: String,
}

impl ClassificationPrompt {
    pub fn text(&self) -> String {
        format!("{}\n\n{}\n\n{}", self.task_description, self.context_block, self.output_instruction)
    }
}

/// A target cell for prompt construction.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub table: &'a Table,
    pub row: usize,
    pub col: usize,
}

fn check_target(t: &Target) -> Result<()> {
    if t.row >= t.table.n_rows() || t.col >= t.table.n_cols() {
        return Err(Error::PositionOutOfRange {
            table_id: t.table.table_id.clone(),
            row: t.row,
            col: t.col,
        });
    }
    Ok(())
}

fn masked_block(t: &Table) -> String {
    format!("Table {}:\n{}", t.table_id, shared_context(t, SURROUNDING_CHAR_BUDGET, Some(PLACEHOLDER)))
}

/// Builds the prompt for two target cells. A shared table is included once.
pub fn build_prompt_for(
    pair: PairId,
    a: Target,
    b: Target,
    templates: &PromptTemplates,
) -> Result<ClassificationPrompt> {
    templates.validate()?;
    check_target(&a)?;
    check_target(&b)?;
    let context_block = if a.table.table_id == b.table.table_id {
        masked_block(a.table)
    } else {
        format!("{}\n\n{}", masked_block(a.table), masked_block(b.table))
    };
    let output_instruction = templates
        .output
        .replace("{row_i}", &a.row.to_string())
        .replace("{col_i}", &a.col.to_string())
        .replace("{row_j}", &b.row.to_string())
        .replace("{col_j}", &b.col.to_string())
        .replace("{table_i}", &a.table.table_id)
        .replace("{table_j}", &b.table.table_id);
    Ok(ClassificationPrompt {
        pair,
        task_description: templates.task.clone(),
        context_block,
        output_instruction,
    })
}

pub fn build_prompt(doc: &Document, p: PairId, templates: &PromptTemplates) -> Result<ClassificationPrompt> {
    let target = |id: u32| -> Result<Target> {
        let m = doc.mention(id).ok_or(Error::UnknownMention(id))?;
        let table = doc.table(&m.table_id).ok_or(Error::UnknownMention(id))?;
        Ok(Target {
            table,
            row: m.row,
            col: m.col,
        })
    };
    build_prompt_for(pair(p.0, p.1), target(p.0)?, target(p.1)?, templates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Equivalent,
    NotEquivalent,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierVerdict {
    pub pair: PairId,
    pub decision: Decision,
    pub raw_response: String,
}

const NEGATIVE_MARKERS: &[&str] = &["not semantically equivalent", "not equivalent", "no", "false"];
const AFFIRMATIVE_MARKERS: &[&str] = &["yes", "equivalent", "true"];

/// Byte offsets where `needle` occurs in `hay` as whole words.
fn word_matches<'a>(hay: &'a str, needle: &'a str) -> impl Iterator<Item = usize> + 'a {
    let bytes = hay.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    hay.match_indices(needle).map(|(i, _)| i).filter(move |&i| {
        let end = i + needle.len();
        (i == 0 || !is_word(bytes[i - 1])) && (end == bytes.len() || !is_word(bytes[end]))
    })
}

/// The earliest marker decides. At equal offsets negative markers win, so
/// "not equivalent" never reads as "equivalent".
pub fn parse_decision(raw: &str) -> Decision {
    let lower = raw.to_lowercase();
    let mut best: Option<(usize, usize, Decision)> = None;
    let markers = NEGATIVE_MARKERS
        .iter()
        .map(|m| (*m, Decision::NotEquivalent))
        .chain(AFFIRMATIVE_MARKERS.iter().map(|m| (*m, Decision::Equivalent)));
    for (rank, (marker, decision)) in markers.enumerate() {
        if let Some(pos) = word_matches(&lower, marker).next() {
            if best.is_none_or(|(p, r, _)| (pos, rank) < (p, r)) {
                best = Some((pos, rank, decision));
            }
        }
    }
    best.map_or(Decision::Abstain, |b| b.2)
}

pub fn parse_response(p: PairId, raw: &str) -> ClassifierVerdict {
    ClassifierVerdict {
        pair: p,
        decision: parse_decision(raw),
        raw_response: raw.to_string(),
    }
}

pub fn digest(raw: &str) -> String {
    hex::encode(Sha256::digest(raw.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub doc_id: String,
    pub mention_i: u32,
    pub mention_j: u32,
    pub decision: Decision,
    pub raw_response_digest: String,
}

pub fn verdict_records(doc_id: &str, verdicts: &[ClassifierVerdict]) -> Vec<VerdictRecord> {
    verdicts
        .iter()
        .map(|v| VerdictRecord {
            doc_id: doc_id.to_string(),
            mention_i: v.pair.0,
            mention_j: v.pair.1,
            decision: v.decision,
            raw_response_digest: digest(&v.raw_response),
        })
        .collect()
}

/// What a backend is asked. Stub backends answer from `doc_id` and `pair`;
/// a remote model only ever sees `prompt`.
#[derive(Debug, Clone)]
pub struct ClassifyRequest<'a> {
    pub doc_id: &'a str,
    pub pair: PairId,
    pub prompt: &'a ClassificationPrompt,
}

pub trait ClassifierBackend: Send + Sync {
    fn classify(&self, req: &ClassifyRequest) -> std::result::Result<String, String>;
}

pub const YES_RESPONSE: &str = "Yes, they are semantically equivalent.";
pub const NO_RESPONSE: &str = "No, they are not equivalent.";

/// Answers from gold annotations.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    gold: BTreeMap<String, BTreeSet<PairId>>,
}

impl OracleBackend {
    pub fn new(gold: &[GoldAnnotation]) -> Self {
        OracleBackend {
            gold: gold.iter().map(|g| (g.doc_id.clone(), g.pairs())).collect(),
        }
    }

    pub fn is_equivalent(&self, doc_id: &str, p: PairId) -> bool {
        self.gold.get(doc_id).is_some_and(|s| s.contains(&pair(p.0, p.1)))
    }
}

impl ClassifierBackend for OracleBackend {
    fn classify(&self, req: &ClassifyRequest) -> std::result::Result<String, String> {
        Ok(if self.is_equivalent(req.doc_id, req.pair) { YES_RESPONSE } else { NO_RESPONSE }.to_string())
    }
}

/// The oracle with each answer flipped with probability `rate`. Whether a
/// pair flips is a hash of `(seed, doc_id, pair)`, so answers do not depend
/// on dispatch order.
#[derive(Debug, Clone)]
pub struct NoisyBackend {
    pub oracle: OracleBackend,
    pub rate: f64,
    pub seed: u64,
}

impl NoisyBackend {
    pub fn flips(&self, doc_id: &str, p: PairId) -> bool {
        let h = stable_hash_parts(&[
            &self.seed.to_le_bytes(),
            doc_id.as_bytes(),
            &p.0.to_le_bytes(),
            &p.1.to_le_bytes(),
        ]);
        // Top 53 bits as a uniform draw in [0, 1).
        ((h >> 11) as f64 / (1u64 << 53) as f64) < self.rate
    }
}

impl ClassifierBackend for NoisyBackend {
    fn classify(&self, req: &ClassifyRequest) -> std::result::Result<String, String> {
        let truth = self.oracle.is_equivalent(req.doc_id, req.pair);
        let answer = truth != self.flips(req.doc_id, req.pair);
        Ok(if answer { YES_RESPONSE } else { NO_RESPONSE }.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_ms: u64,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            model: "default".into(),
            token_env: "TABXCHECK_API_TOKEN".into(),
            timeout_ms: 30_000,
        }
    }
}

/// Single-turn chat-completion client, temperature 0.
pub struct RemoteBackend {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        let token = std::env::var(&cfg.token_env).ok();
        RemoteBackend { cfg, agent, token }
    }
}

impl ClassifierBackend for RemoteBackend {
    fn classify(&self, req: &ClassifyRequest) -> std::result::Result<String, String> {
        let body = serde_json::json!({
            "model": self.cfg.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": req.prompt.text()}],
        });
        let mut request = self.agent.post(&self.cfg.url);
        if let Some(t) = &self.token {
            request = request.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = request.send_json(&body).map_err(|e| e.to_string())?;
        let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| format!("unexpected response body: {v}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BackendConfig {
    Oracle,
    Noisy { rate: f64, seed: u64 },
    Remote(RemoteConfig),
}

impl FromStr for BackendConfig {
    type Err = Error;

    /// `oracle`, `noisy:<rate>` or `remote:<url>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "oracle" => Ok(BackendConfig::Oracle),
            "noisy" => {
                let rate: f64 = arg.parse().map_err(|_| Error::Config(format!("noisy rate {arg:?}")))?;
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::Config(format!("noisy rate {rate} outside [0, 1]")));
                }
                Ok(BackendConfig::Noisy { rate, seed: 0 })
            }
            "remote" if !arg.is_empty() => Ok(BackendConfig::Remote(RemoteConfig::new(arg))),
            _ => Err(Error::Config(format!("unknown backend {s:?}"))),
        }
    }
}

impl BackendConfig {
    pub fn instantiate(&self, gold: &[GoldAnnotation]) -> Box<dyn ClassifierBackend> {
        match self {
            BackendConfig::Oracle => Box::new(OracleBackend::new(gold)),
            BackendConfig::Noisy { rate, seed } => Box::new(NoisyBackend {
                oracle: OracleBackend::new(gold),
                rate: *rate,
                seed: *seed,
            }),
            BackendConfig::Remote(r) => Box::new(RemoteBackend::new(r.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchConfig {
    pub max_in_flight: usize,
    /// Extra attempts after the first failure.
    pub retries: usize,
    pub backoff_ms: u64,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        DispatchConfig {
            max_in_flight: 8,
            retries: 3,
            backoff_ms: 200,
        }
    }
}

fn call_with_retry(backend: &dyn ClassifierBackend, req: &ClassifyRequest, cfg: &DispatchConfig) -> Result<String> {
    let attempts = cfg.retries + 1;
    let mut last = String::new();
    for k in 0..attempts {
        match backend.classify(req) {
            Ok(r) => return Ok(r),
            Err(e) => {
                log::warn!("{} {:?}: attempt {} failed: {e}", req.doc_id, req.pair, k + 1);
                last = e;
                if k + 1 < attempts {
                    std::thread::sleep(Duration::from_millis(cfg.backoff_ms << k.min(16)));
                }
            }
        }
    }
    Err(Error::BackendUnavailable { attempts, last })
}

/// One verdict per pair, in input order. At most `max_in_flight` requests
/// run at once.
pub fn classify_pairs(
    backend: &dyn ClassifierBackend,
    doc: &Document,
    pairs: &[PairId],
    templates: &PromptTemplates,
    cfg: &DispatchConfig,
) -> Result<Vec<ClassifierVerdict>> {
    let prompts = pairs
        .iter()
        .map(|&p| build_prompt(doc, p, templates))
        .collect::<Result<Vec<_>>>()?;
    let slots: Mutex<Vec<Option<Result<ClassifierVerdict>>>> = Mutex::new((0..pairs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = cfg.max_in_flight.max(1).min(pairs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= pairs.len() {
                    break;
                }
                let req = ClassifyRequest {
                    doc_id: &doc.doc_id,
                    pair: prompts[k].pair,
                    prompt: &prompts[k],
                };
                let out = call_with_retry(backend, &req, cfg).map(|raw| parse_response(prompts[k].pair, &raw));
                slots.lock().expect("poisoned")[k] = Some(out);
            });
        }
    });
    let verdicts = slots
        .into_inner()
        .expect("poisoned")
        .into_iter()
        .map(|v| v.expect("every slot filled"))
        .collect::<Result<Vec<_>>>()?;
    let abstained = verdicts.iter().filter(|v| v.decision == Decision::Abstain).count();
    if abstained > 0 {
        log::info!("{}: {abstained} of {} responses abstained", doc.doc_id, verdicts.len());
    }
    Ok(verdicts)
}
