//! Synthetic labeled corpora.
//!
//! Every numeric cell realizes a latent `(entity, period, metric)` triple. The
//! entity and metric are rendered into the row header, the period into the
//! column header. An equivalence group is a row that appears in several tables
//! of the same document; each period column of that row yields one group.
//! Isolated mentions come from rows whose `(entity, metric)` is used once.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use num_bigint::BigInt;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::KvFile;
use crate::document::{
    pair, parse_document, serialize_document, DocType, Document, GoldAnnotation, PairId, Section,
    Table,
};
use crate::error::{Error, Result};
use crate::value::NumericValue;

const ENTITIES: &[&str] = &[
    "Northwind Holdings", "Contoso Group", "Fabrikam Mining", "Tailspin Logistics",
    "Litware Energy", "Adatum Finance", "Wingtip Retail", "Proseware Labs",
    "Lucerne Publishing", "Humongous Insurance", "Woodgrove Bank", "Alpine Ski",
    "Coho Vineyard", "Blue Yonder Airlines", "Trey Research", "Margie Travel",
    "Fourth Coffee", "Graphic Design Institute", "Consolidated Messenger", "Southridge Video",
    "Relecloud Media", "VanArsdel Foods", "Boulder Steel", "Kestrel Shipping",
];

/// Metric phrase and whether it renders as a percentage.
const METRICS: &[(&str, bool)] = &[
    ("revenue", false), ("operating profit", false), ("net income", false),
    ("total assets", false), ("total liabilities", false), ("cash and equivalents", false),
    ("capital expenditure", false), ("inventory", false), ("trade receivables", false),
    ("trade payables", false), ("long term borrowings", false), ("short term borrowings", false),
    ("deferred tax assets", false), ("goodwill", false), ("depreciation", false),
    ("research spending", false), ("dividends paid", false), ("employee benefits", false),
    ("gross margin", true), ("effective tax rate", true), ("return on equity", true),
    ("payout ratio", true), ("debt ratio", true), ("revenue growth", true),
    ("lease obligations", false), ("provisions", false), ("share capital", false),
    ("retained earnings", false), ("interest expense", false), ("segment sales", false),
];

const PERIODS: &[&str] = &[
    "FY2013", "FY2014", "FY2015", "FY2016", "FY2017", "FY2018", "FY2019", "FY2020",
    "FY2021", "FY2022", "FY2023", "FY2024", "FY2025", "FY2026", "FY2027", "FY2028",
];

const SECTION_TITLES: &[&str] = &[
    "Financial highlights", "Management discussion and analysis", "Consolidated statements",
    "Notes to the financial statements", "Risk factors", "Segment information",
    "Corporate governance", "Use of proceeds",
];

const CORNER_LABELS: &[&str] = &["Item", "Line item", "Indicator", "In millions", "Description"];

const FILLER: &[&str] = &[
    "the", "group", "company", "reported", "during", "period", "management", "believes",
    "that", "results", "reflect", "continued", "growth", "in", "core", "markets", "and",
    "stable", "cost", "control", "following", "table", "summarizes", "key", "figures",
    "as", "disclosed", "under", "applicable", "standards", "audited", "statements",
    "show", "changes", "compared", "with", "prior", "year", "segment", "performance",
    "remained", "resilient", "amid", "market", "volatility", "see", "notes", "below",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_docs: usize,
    pub tables_per_doc: usize,
    /// Inclusive range of data rows per table.
    pub rows_min: usize,
    pub rows_max: usize,
    /// Inclusive range of period columns per document.
    pub cols_min: usize,
    pub cols_max: usize,
    pub mentions_per_doc_target: usize,
    pub group_size_min: usize,
    pub group_size_max: usize,
    pub isolated_fraction: f64,
    pub n_entities: usize,
    pub n_periods: usize,
    pub n_metrics: usize,
    pub inconsistency_rate: f64,
    pub rng_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_docs: 50,
            tables_per_doc: 8,
            rows_min: 2,
            rows_max: 12,
            cols_min: 3,
            cols_max: 4,
            mentions_per_doc_target: 200,
            group_size_min: 2,
            group_size_max: 3,
            isolated_fraction: 0.8,
            n_entities: 12,
            n_periods: 10,
            n_metrics: 24,
            inconsistency_rate: 0.0,
            rng_seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleConfig(msg));
        for (name, r) in [("isolated_fraction", self.isolated_fraction), ("inconsistency_rate", self.inconsistency_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must be in [0,1], got {r}"));
            }
        }
        if self.tables_per_doc == 0 || self.rows_min == 0 || self.cols_min == 0 {
            return bad("tables, rows and columns must be positive".into());
        }
        if self.rows_min > self.rows_max || self.cols_min > self.cols_max {
            return bad("empty row or column range".into());
        }
        if self.group_size_min < 2 || self.group_size_min > self.group_size_max {
            return bad("group sizes must satisfy 2 <= min <= max".into());
        }
        if self.group_size_max > self.tables_per_doc && self.isolated_fraction < 1.0 {
            return bad(format!(
                "group size {} exceeds {} tables per document",
                self.group_size_max, self.tables_per_doc
            ));
        }
        if self.n_entities == 0 || self.n_entities > ENTITIES.len() {
            return bad(format!("n_entities must be in 1..={}", ENTITIES.len()));
        }
        if self.n_metrics == 0 || self.n_metrics > METRICS.len() {
            return bad(format!("n_metrics must be in 1..={}", METRICS.len()));
        }
        if self.n_periods < self.cols_max || self.n_periods > PERIODS.len() {
            return bad(format!("n_periods must be in {}..={}", self.cols_max, PERIODS.len()));
        }
        for cols in self.cols_min..=self.cols_max {
            let rows = self.total_rows(cols);
            let (lo, hi) = (self.tables_per_doc * self.rows_min, self.tables_per_doc * self.rows_max);
            if rows < lo || rows > hi {
                return bad(format!(
                    "{} mentions over {cols} columns needs {rows} rows, outside {lo}..={hi}",
                    self.mentions_per_doc_target
                ));
            }
            if rows > self.n_entities * self.n_metrics {
                return bad(format!("{rows} distinct rows exceed the attribute vocabulary"));
            }
        }
        Ok(())
    }

    fn total_rows(&self, cols: usize) -> usize {
        ((self.mentions_per_doc_target as f64 / cols as f64).round() as usize).max(1)
    }

    /// Expected ratio of equivalent pairs to non-equivalent pairs per document.
    pub fn expected_pos_neg_ratio(&self) -> f64 {
        let sizes: Vec<f64> = (self.group_size_min..=self.group_size_max).map(|s| s as f64).collect();
        let mean_s = sizes.iter().sum::<f64>() / sizes.len() as f64;
        let mean_pairs = sizes.iter().map(|s| s * (s - 1.0) / 2.0).sum::<f64>() / sizes.len() as f64;
        let m = self.mentions_per_doc_target as f64;
        let pos = m * (1.0 - self.isolated_fraction) * mean_pairs / mean_s;
        let all = m * (m - 1.0) / 2.0;
        pos / (all - pos)
    }

    pub fn to_kv(&self) -> String {
        let mut kv = KvFile::default();
        kv.set("n_docs", self.n_docs);
        kv.set("tables_per_doc", self.tables_per_doc);
        kv.set("rows_min", self.rows_min);
        kv.set("rows_max", self.rows_max);
        kv.set("cols_min", self.cols_min);
        kv.set("cols_max", self.cols_max);
        kv.set("mentions_per_doc_target", self.mentions_per_doc_target);
        kv.set("group_size_min", self.group_size_min);
        kv.set("group_size_max", self.group_size_max);
        kv.set("isolated_fraction", self.isolated_fraction);
        kv.set("n_entities", self.n_entities);
        kv.set("n_periods", self.n_periods);
        kv.set("n_metrics", self.n_metrics);
        kv.set("inconsistency_rate", self.inconsistency_rate);
        kv.set("rng_seed", self.rng_seed);
        kv.render()
    }

    /// Applies keys from a flat key-value file over `self`.
    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<()> {
        kv.get_into("n_docs", &mut self.n_docs)?;
        kv.get_into("tables_per_doc", &mut self.tables_per_doc)?;
        kv.get_into("rows_min", &mut self.rows_min)?;
        kv.get_into("rows_max", &mut self.rows_max)?;
        kv.get_into("cols_min", &mut self.cols_min)?;
        kv.get_into("cols_max", &mut self.cols_max)?;
        kv.get_into("mentions_per_doc_target", &mut self.mentions_per_doc_target)?;
        kv.get_into("group_size_min", &mut self.group_size_min)?;
        kv.get_into("group_size_max", &mut self.group_size_max)?;
        kv.get_into("isolated_fraction", &mut self.isolated_fraction)?;
        kv.get_into("n_entities", &mut self.n_entities)?;
        kv.get_into("n_periods", &mut self.n_periods)?;
        kv.get_into("n_metrics", &mut self.n_metrics)?;
        kv.get_into("inconsistency_rate", &mut self.inconsistency_rate)?;
        kv.get_into("rng_seed", &mut self.rng_seed)?;
        Ok(())
    }
}

/// One inconsistent pair: both mentions share a gold group but the value of
/// `perturbed_mention` was changed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlantedInconsistency {
    pub doc_id: String,
    pub mention_i: u32,
    pub mention_j: u32,
    pub perturbed_mention: u32,
    pub original_value: NumericValue,
    pub perturbed_value: NumericValue,
}

impl PlantedInconsistency {
    pub fn pair(&self) -> PairId {
        (self.mention_i, self.mention_j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub documents: Vec<Document>,
    pub gold: Vec<GoldAnnotation>,
    pub planted_inconsistencies: Vec<PlantedInconsistency>,
}

impl SyntheticCorpus {
    pub fn gold_for(&self, doc_id: &str) -> Option<&GoldAnnotation> {
        self.gold.iter().find(|g| g.doc_id == doc_id)
    }

    pub fn mention_count(&self) -> usize {
        self.documents.iter().map(|d| d.mentions().len()).sum()
    }

    /// Writes `docs/<id>.json`, `gold/<id>.json` and `planted.jsonl` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let docs = dir.join("docs");
        let gold = dir.join("gold");
        fs::create_dir_all(&docs)?;
        fs::create_dir_all(&gold)?;
        for d in &self.documents {
            fs::write(docs.join(format!("{}.json", d.doc_id)), serialize_document(d))?;
        }
        for g in &self.gold {
            fs::write(gold.join(format!("{}.json", g.doc_id)), serde_json::to_string(g)?)?;
        }
        let mut planted = String::new();
        for p in &self.planted_inconsistencies {
            planted.push_str(&serde_json::to_string(p)?);
            planted.push('\n');
        }
        fs::write(dir.join("planted.jsonl"), planted)?;
        Ok(())
    }

    /// Reads a corpus directory. Gold files and planted records are optional.
    pub fn read_dir(dir: &Path) -> Result<SyntheticCorpus> {
        let documents = read_json_dir(&dir.join("docs"), parse_document)?;
        let gold_dir = dir.join("gold");
        let gold = if gold_dir.is_dir() { read_gold_dir(&gold_dir)? } else { Vec::new() };
        let planted_path = dir.join("planted.jsonl");
        let mut planted_inconsistencies = Vec::new();
        if planted_path.is_file() {
            for line in fs::read_to_string(planted_path)?.lines().filter(|l| !l.trim().is_empty()) {
                planted_inconsistencies.push(serde_json::from_str(line)?);
            }
        }
        Ok(SyntheticCorpus {
            documents,
            gold,
            planted_inconsistencies,
        })
    }
}

/// Reads every `*.json` gold file in `dir`, sorted by file name.
pub fn read_gold_dir(dir: &Path) -> Result<Vec<GoldAnnotation>> {
    read_json_dir(dir, GoldAnnotation::parse)
}

fn read_json_dir<T>(dir: &Path, parse: impl Fn(&[u8]) -> Result<T>) -> Result<Vec<T>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            parse(&bytes).map_err(|e| Error::Schema(format!("{}: {e}", p.display())))
        })
        .collect()
}

struct RowSpec {
    entity: usize,
    metric: usize,
    copies: usize,
}

pub fn generate_corpus(cfg: &GenConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut documents = Vec::with_capacity(cfg.n_docs);
    let mut gold = Vec::with_capacity(cfg.n_docs);
    for i in 0..cfg.n_docs {
        let (doc, g) = generate_document(cfg, &format!("doc{i:04}"), &mut rng)?;
        documents.push(doc);
        gold.push(g);
    }
    let corpus = SyntheticCorpus {
        documents,
        gold,
        planted_inconsistencies: Vec::new(),
    };
    if cfg.inconsistency_rate > 0.0 {
        Ok(inject_inconsistencies(&corpus, cfg.inconsistency_rate, cfg.rng_seed ^ 0x9e37_79b9_7f4a_7c15))
    } else {
        Ok(corpus)
    }
}

fn plan_group_sizes(cfg: &GenConfig, grouped_rows: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let (lo, hi) = (cfg.group_size_min, cfg.group_size_max.min(cfg.tables_per_doc));
    let mut sizes = Vec::new();
    let mut remaining = grouped_rows;
    while remaining >= lo {
        let s = rng.random_range(lo..=hi.min(remaining));
        sizes.push(s);
        remaining -= s;
    }
    // Spread the leftover over groups that can still grow.
    for s in sizes.iter_mut() {
        while remaining > 0 && *s < hi {
            *s += 1;
            remaining -= 1;
        }
    }
    sizes
}

fn generate_document(cfg: &GenConfig, doc_id: &str, rng: &mut ChaCha8Rng) -> Result<(Document, GoldAnnotation)> {
    let n_tables = cfg.tables_per_doc;
    let n_cols = rng.random_range(cfg.cols_min..=cfg.cols_max);
    let total_rows = cfg.total_rows(n_cols);

    let mut periods: Vec<usize> = rand::seq::index::sample(rng, cfg.n_periods, n_cols).into_vec();
    periods.sort_unstable();

    let grouped_mentions = (cfg.mentions_per_doc_target as f64 * (1.0 - cfg.isolated_fraction)).round();
    let grouped_rows = ((grouped_mentions / n_cols as f64).round() as usize).min(total_rows);
    let group_sizes = if cfg.isolated_fraction < 1.0 {
        plan_group_sizes(cfg, grouped_rows, rng)
    } else {
        Vec::new()
    };
    let copies_used: usize = group_sizes.iter().sum();
    let n_isolated_rows = total_rows - copies_used;
    let n_distinct = group_sizes.len() + n_isolated_rows;

    let combos = rand::seq::index::sample(rng, cfg.n_entities * cfg.n_metrics, n_distinct);
    let mut specs: Vec<RowSpec> = combos
        .iter()
        .enumerate()
        .map(|(k, c)| RowSpec {
            entity: c / cfg.n_metrics,
            metric: c % cfg.n_metrics,
            copies: group_sizes.get(k).copied().unwrap_or(1),
        })
        .collect();

    // Table capacities: as even as possible.
    let base = total_rows / n_tables;
    let extra = total_rows % n_tables;
    let mut order: Vec<usize> = (0..n_tables).collect();
    order.shuffle(rng);
    let mut capacity = vec![base; n_tables];
    for &t in &order[..extra] {
        capacity[t] += 1;
    }

    // Place grouped rows first, each copy into a distinct table with room.
    let mut table_rows: Vec<Vec<usize>> = vec![Vec::new(); n_tables];
    specs.sort_by_key(|s| std::cmp::Reverse(s.copies));
    for (idx, spec) in specs.iter().enumerate() {
        let mut cand: Vec<usize> = (0..n_tables).filter(|&t| capacity[t] > 0).collect();
        if cand.len() < spec.copies {
            return Err(Error::InfeasibleConfig(format!(
                "cannot place a group of {} rows into distinct tables",
                spec.copies
            )));
        }
        cand.shuffle(rng);
        cand.sort_by_key(|&t| std::cmp::Reverse(capacity[t]));
        for &t in &cand[..spec.copies] {
            capacity[t] -= 1;
            table_rows[t].push(idx);
        }
    }

    // Values per (row spec, period column), shared by every copy.
    let values: Vec<Vec<String>> = specs
        .iter()
        .map(|s| (0..n_cols).map(|_| render_random_value(METRICS[s.metric].1, rng)).collect())
        .collect();

    let n_sections = rng.random_range(2..=3usize).min(n_tables);
    let titles: Vec<&str> = SECTION_TITLES.choose_multiple(rng, n_sections).copied().collect();
    let sections: Vec<Section> = titles
        .iter()
        .enumerate()
        .map(|(i, t)| Section {
            section_id: format!("s{}", i + 1),
            title: t.to_string(),
        })
        .collect();

    let mut tables = Vec::with_capacity(n_tables);
    // (table index, grid row, grid col) for each (spec, column).
    let mut placements: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); specs.len() * n_cols];
    for (t, rows) in table_rows.iter_mut().enumerate() {
        rows.shuffle(rng);
        let descending = rng.random_bool(0.3);
        let col_order: Vec<usize> = if descending {
            (0..n_cols).rev().collect()
        } else {
            (0..n_cols).collect()
        };
        let mut grid = Vec::with_capacity(rows.len() + 1);
        let mut header = vec![CORNER_LABELS.choose(rng).unwrap().to_string()];
        header.extend(col_order.iter().map(|&c| PERIODS[periods[c]].to_string()));
        grid.push(header);
        for (r, &spec_idx) in rows.iter().enumerate() {
            let spec = &specs[spec_idx];
            let mut line = vec![format!("{} {}", ENTITIES[spec.entity], METRICS[spec.metric].0)];
            for (gc, &c) in col_order.iter().enumerate() {
                line.push(values[spec_idx][c].clone());
                placements[spec_idx * n_cols + c].push((t, r + 1, gc + 1));
            }
            grid.push(line);
        }
        let section = &sections[t * n_sections / n_tables];
        tables.push(Table::new(
            format!("t{:02}", t + 1),
            section.section_id.clone(),
            section.title.clone(),
            filler_text(rng),
            filler_text(rng),
            grid,
        )?);
    }

    let doc = Document::new(doc_id, DocType::Synthetic, sections, tables)?;
    let index: HashMap<(usize, usize, usize), u32> = doc
        .mentions()
        .iter()
        .map(|m| ((doc.table_index(&m.table_id).unwrap(), m.row, m.col), m.mention_id))
        .collect();
    let mut groups: Vec<Vec<u32>> = placements
        .iter()
        .filter(|p| p.len() >= 2)
        .map(|p| {
            let mut ids: Vec<u32> = p.iter().map(|k| index[k]).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    groups.sort();
    let gold = GoldAnnotation::new(doc_id, groups)?;
    Ok((doc, gold))
}

fn render_random_value(percent: bool, rng: &mut ChaCha8Rng) -> String {
    if percent {
        let tenths: i64 = rng.random_range(1..1000);
        let negative = rng.random_bool(0.05);
        let v = NumericValue::new(BigInt::from(if negative { -tenths } else { tenths }), 1, true);
        render_value(&v, &RenderStyle { decimals: 1, commas: false, parens: false })
    } else {
        let decimals = if rng.random_bool(0.2) { 1 } else { 0 };
        let magnitude: i64 = rng.random_range(100..2_000_000) * if decimals == 1 { 10 } else { 1 }
            + if decimals == 1 { rng.random_range(0..10) } else { 0 };
        let negative = rng.random_bool(0.1);
        let v = NumericValue::new(BigInt::from(if negative { -magnitude } else { magnitude }), decimals, false);
        render_value(&v, &RenderStyle { decimals, commas: true, parens: true })
    }
}

/// How a number is rendered into a cell.
#[derive(Debug, Clone, Copy)]
pub struct RenderStyle {
    pub decimals: u32,
    pub commas: bool,
    /// Negatives as `(x)` rather than `-x`.
    pub parens: bool,
}

impl RenderStyle {
    /// Infers the style of an existing rendered cell.
    pub fn of(raw: &str) -> RenderStyle {
        let t = raw.trim().trim_end_matches('%').trim_end_matches(')');
        let decimals = t.rsplit_once('.').map_or(0, |(_, f)| f.chars().filter(char::is_ascii_digit).count() as u32);
        RenderStyle {
            decimals,
            commas: raw.contains(','),
            parens: !raw.contains('-') && !raw.contains('%'),
        }
    }
}

pub fn render_value(v: &NumericValue, style: &RenderStyle) -> String {
    let mag = v.magnitude_string();
    let (int, frac) = mag.split_once('.').unwrap_or((&mag, ""));
    let mut frac = frac.to_string();
    while (frac.len() as u32) < style.decimals {
        frac.push('0');
    }
    let int = if style.commas { group_thousands(int) } else { int.to_string() };
    let mut body = if frac.is_empty() { int } else { format!("{int}.{frac}") };
    if v.is_percent() {
        body.push('%');
    }
    match (v.is_negative(), style.parens) {
        (false, _) => body,
        (true, true) => format!("({body})"),
        (true, false) => format!("-{body}"),
    }
}

fn group_thousands(int: &str) -> String {
    let bytes = int.as_bytes();
    let mut out = String::with_capacity(int.len() + int.len() / 3);
    for (i, b) in bytes.iter().enumerate() {
        if i > 0 && (bytes.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(*b as char);
    }
    out
}

fn filler_text(rng: &mut ChaCha8Rng) -> String {
    let target = rng.random_range(60..1200usize);
    let mut s = String::new();
    while s.len() < target {
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(FILLER.choose(rng).unwrap());
    }
    s.push('.');
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => s,
    }
}

/// Perturbs one member of a sampled fraction of gold groups.
pub fn inject_inconsistencies(c: &SyntheticCorpus, rate: f64, seed: u64) -> SyntheticCorpus {
    let rate = rate.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = c.clone();
    if rate == 0.0 {
        return out;
    }
    for doc in out.documents.iter_mut() {
        let Some(gold) = c.gold_for(&doc.doc_id) else { continue };
        // (table_id, row, col) -> new raw text
        let mut edits: BTreeMap<(String, usize, usize), String> = BTreeMap::new();
        let touched: BTreeSet<u32> = c
            .planted_inconsistencies
            .iter()
            .filter(|p| p.doc_id == doc.doc_id)
            .map(|p| p.perturbed_mention)
            .collect();
        for group in &gold.groups {
            // A group already carrying a perturbation is left alone.
            if !rng.random_bool(rate) || group.iter().any(|m| touched.contains(m)) {
                continue;
            }
            let target = *group.choose(&mut rng).unwrap();
            let m = doc.mention(target).expect("gold references a document mention").clone();
            let style = RenderStyle::of(&m.raw_text);
            let mut units: i64 = rng.random_range(1..=9);
            if rng.random_bool(0.5) {
                units = -units;
            }
            let new_value = m.value.add_units(units, style.decimals);
            let rendered = render_value(&new_value, &style);
            for &other in group.iter().filter(|&&o| o != target) {
                let (i, j) = pair(target, other);
                out.planted_inconsistencies.push(PlantedInconsistency {
                    doc_id: doc.doc_id.clone(),
                    mention_i: i,
                    mention_j: j,
                    perturbed_mention: target,
                    original_value: m.value.clone(),
                    perturbed_value: new_value.clone(),
                });
            }
            edits.insert((m.table_id.clone(), m.row, m.col), rendered);
        }
        if edits.is_empty() {
            continue;
        }
        let tables = doc
            .tables
            .iter()
            .map(|t| {
                let mut grid = t.grid();
                for ((tid, r, col), text) in &edits {
                    if *tid == t.table_id {
                        grid[*r][*col] = text.clone();
                    }
                }
                Table::new(&t.table_id, &t.section_id, &t.chapter_title, &t.text_before, &t.text_after, grid)
                    .expect("edited grid keeps its shape")
            })
            .collect();
        *doc = Document::new(doc.doc_id.clone(), doc.doc_type, doc.sections.clone(), tables)
            .expect("edits keep the document valid");
    }
    out.planted_inconsistencies.sort();
    out
}
