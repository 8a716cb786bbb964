//! Flat `key = value` configuration files and the run configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cipe::{DEFAULT_EMBED_PROMPT, DEFAULT_MAX_LEN};
use crate::classifier::{BackendConfig, DispatchConfig, PromptTemplates};
use crate::contrastive::{LossParams, Objective, TrainConfig};
use crate::embedder::EmbedderConfig;
use crate::error::{Error, Result};
use crate::filter::FilterParams;

/// Ordered key-value pairs. Lines are `key = value`; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<KvFile> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(KvFile { entries })
    }

    pub fn load(path: &Path) -> Result<KvFile> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Overwrites `slot` if `key` is present.
    pub fn get_into<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(raw) = self.get(key) {
            *slot = raw
                .parse()
                .map_err(|e| Error::Config(format!("{key} = {raw:?}: {e}")))?;
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Everything a full run needs. Defaults follow the reference hyperparameters.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    /// Defaults to `<corpus_dir>/gold` when unset.
    pub gold_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub embedder: EmbedderConfig,
    pub loss: LossParams,
    pub train: TrainConfig,
    pub filter: FilterParams,
    pub backend: BackendConfig,
    pub dispatch: DispatchConfig,
    pub prompts: PromptTemplates,
    pub embed_prompt: String,
    pub max_len: usize,
    pub chunk_size: usize,
    pub sweep_thresholds: Vec<f64>,
    pub workers: Option<usize>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_dir: PathBuf::from("corpus"),
            gold_dir: None,
            out_dir: PathBuf::from("out"),
            embedder: EmbedderConfig::default(),
            loss: LossParams::default(),
            train: TrainConfig::default(),
            filter: FilterParams::default(),
            backend: BackendConfig::Oracle,
            dispatch: DispatchConfig::default(),
            prompts: PromptTemplates::default(),
            embed_prompt: DEFAULT_EMBED_PROMPT.to_string(),
            max_len: DEFAULT_MAX_LEN,
            chunk_size: 1024,
            sweep_thresholds: default_sweep(),
            workers: None,
            seed: 42,
        }
    }
}

/// 0.1, 0.2, ..., 0.9.
pub fn default_sweep() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

/// Parses `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("range {spec:?}: {e}")))?;
    let [start, stop, step] = parts[..] else {
        return Err(Error::Config(format!("range {spec:?}: expected start:stop:step")));
    };
    if step <= 0.0 || stop < start {
        return Err(Error::Config(format!("range {spec:?}: empty or non-increasing")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    // Round to the step's precision so 0.1 + 2*0.1 prints as 0.3.
    Ok((0..=n).map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9).collect())
}

impl RunConfig {
    pub fn gold_dir(&self) -> PathBuf {
        self.gold_dir.clone().unwrap_or_else(|| self.corpus_dir.join("gold"))
    }

    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<()> {
        if let Some(v) = kv.get("corpus_dir") {
            self.corpus_dir = v.into();
        }
        if let Some(v) = kv.get("gold_dir") {
            self.gold_dir = Some(v.into());
        }
        if let Some(v) = kv.get("out_dir") {
            self.out_dir = v.into();
        }
        kv.get_into("embed.dim", &mut self.embedder.dim)?;
        kv.get_into("embed.feature_dim", &mut self.embedder.feature_dim)?;
        kv.get_into("embed.seed", &mut self.embedder.seed)?;
        kv.get_into("loss.tau", &mut self.loss.tau)?;
        kv.get_into("loss.alpha1", &mut self.loss.alpha1)?;
        kv.get_into("loss.alpha2", &mut self.loss.alpha2)?;
        kv.get_into("loss.epsilon", &mut self.loss.epsilon)?;
        kv.get_into("train.epochs", &mut self.train.epochs)?;
        kv.get_into("train.lr", &mut self.train.lr)?;
        kv.get_into("train.tables_per_step", &mut self.train.tables_per_step)?;
        kv.get_into("train.seed", &mut self.train.seed)?;
        if let Some(v) = kv.get("train.objective") {
            self.train.objective = v.parse::<Objective>()?;
        }
        kv.get_into("filter.threshold", &mut self.filter.threshold)?;
        kv.get_into("filter.m", &mut self.filter.index.m)?;
        kv.get_into("filter.ef_construction", &mut self.filter.index.ef_construction)?;
        kv.get_into("filter.ef_search", &mut self.filter.index.ef_search)?;
        kv.get_into("filter.seed", &mut self.filter.index.seed)?;
        kv.get_into("filter.exact", &mut self.filter.exact_mode)?;
        if let Some(v) = kv.get("backend") {
            self.backend = v.parse::<BackendConfig>()?;
        }
        if let BackendConfig::Remote(r) = &mut self.backend {
            if let Some(v) = kv.get("remote.model") {
                r.model = v.to_string();
            }
            if let Some(v) = kv.get("remote.token_env") {
                r.token_env = v.to_string();
            }
            kv.get_into("remote.timeout_ms", &mut r.timeout_ms)?;
        }
        if let BackendConfig::Noisy { seed, .. } = &mut self.backend {
            kv.get_into("noisy.seed", seed)?;
        }
        kv.get_into("dispatch.max_in_flight", &mut self.dispatch.max_in_flight)?;
        kv.get_into("dispatch.retries", &mut self.dispatch.retries)?;
        kv.get_into("dispatch.backoff_ms", &mut self.dispatch.backoff_ms)?;
        if let Some(v) = kv.get("prompt.task") {
            self.prompts.task = v.to_string();
        }
        if let Some(v) = kv.get("prompt.output") {
            self.prompts.output = v.to_string();
        }
        self.prompts.validate()?;
        if let Some(v) = kv.get("embed.prompt") {
            self.embed_prompt = v.to_string();
        }
        kv.get_into("max_len", &mut self.max_len)?;
        kv.get_into("chunk_size", &mut self.chunk_size)?;
        if let Some(v) = kv.get("sweep") {
            self.sweep_thresholds = parse_range(v)?;
        }
        if let Some(v) = kv.get("workers") {
            self.workers = Some(v.parse().map_err(|e| Error::Config(format!("workers: {e}")))?);
        }
        kv.get_into("seed", &mut self.seed)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(-1.0..1.0).contains(&self.filter.threshold) {
            return Err(Error::Config(format!("threshold {} outside (-1, 1)", self.filter.threshold)));
        }
        if self.chunk_size == 0 || self.max_len == 0 {
            return Err(Error::Config("chunk_size and max_len must be positive".into()));
        }
        if self.embedder.dim == 0 || self.embedder.feature_dim == 0 {
            return Err(Error::Config("embedding dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Checks that the input directories exist.
    pub fn check_paths(&self) -> Result<()> {
        for p in [&self.corpus_dir] {
            if !p.is_dir() {
                return Err(Error::Config(format!("{} is not a directory", p.display())));
            }
        }
        Ok(())
    }
}
