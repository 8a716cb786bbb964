//! Documents, tables and the numerical mentions they contain.
//!
//! A [`Document`] is parsed from the JSON document schema, validated, and then
//! immutable. Mentions are extracted once at construction, numbered in reading
//! order (tables in order, cells row-major within each table).

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{normalize_value, NumericValue};

/// Default per-side cap on surrounding text, in characters.
pub const SURROUNDING_CHAR_BUDGET: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocType {
    IpoProspectus,
    AuditorReport,
    AnnualReport,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub section_id: String,
    pub title: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Header,
    Numeric,
    Text,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub raw_text: String,
    pub kind: CellKind,
    value: Option<NumericValue>,
}

impl Cell {
    /// Classifies a cell. Numeric wins over position; otherwise cells in the
    /// first row or column are headers.
    pub fn classify(raw_text: &str, row: usize, col: usize) -> Cell {
        let value = normalize_value(raw_text).ok();
        let kind = if value.is_some() {
            CellKind::Numeric
        } else if raw_text.trim().is_empty() {
            CellKind::Empty
        } else if row == 0 || col == 0 {
            CellKind::Header
        } else {
            CellKind::Text
        };
        Cell {
            raw_text: raw_text.to_string(),
            kind,
            value,
        }
    }

    pub fn value(&self) -> Option<&NumericValue> {
        self.value.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub table_id: String,
    pub section_id: String,
    pub chapter_title: String,
    pub text_before: String,
    pub text_after: String,
    n_rows: usize,
    n_cols: usize,
    cells: Vec<Cell>,
}

impl Table {
    /// Builds a table from a row-major grid, rejecting ragged or empty grids.
    pub fn new(
        table_id: impl Into<String>,
        section_id: impl Into<String>,
        chapter_title: impl Into<String>,
        text_before: impl Into<String>,
        text_after: impl Into<String>,
        grid: Vec<Vec<String>>,
    ) -> Result<Table> {
        let table_id = table_id.into();
        let n_rows = grid.len();
        let n_cols = grid.first().map_or(0, Vec::len);
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Grid {
                table_id,
                row: 0,
                expected: 1,
                found: 0,
            });
        }
        let mut cells = Vec::with_capacity(n_rows * n_cols);
        for (r, row) in grid.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::Grid {
                    table_id,
                    row: r,
                    expected: n_cols,
                    found: row.len(),
                });
            }
            cells.extend(row.iter().enumerate().map(|(c, s)| Cell::classify(s, r, c)));
        }
        Ok(Table {
            table_id,
            section_id: section_id.into(),
            chapter_title: chapter_title.into(),
            text_before: text_before.into(),
            text_after: text_after.into(),
            n_rows,
            n_cols,
            cells,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&Cell> {
        (row < self.n_rows && col < self.n_cols).then(|| &self.cells[row * self.n_cols + col])
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Cell]> {
        self.cells.chunks(self.n_cols)
    }

    pub fn grid(&self) -> Vec<Vec<String>> {
        self.rows()
            .map(|r| r.iter().map(|c| c.raw_text.clone()).collect())
            .collect()
    }

    /// Markdown rendering of the table.
    pub fn linearize(&self) -> String {
        self.linearize_with(|cell| cell.raw_text.clone())
    }

    /// Markdown rendering with every numeric cell replaced by `placeholder`.
    pub fn linearize_masked(&self, placeholder: &str) -> String {
        self.linearize_with(|cell| match cell.kind {
            CellKind::Numeric => placeholder.to_string(),
            _ => cell.raw_text.clone(),
        })
    }

    fn linearize_with(&self, render: impl Fn(&Cell) -> String) -> String {
        let mut lines = Vec::with_capacity(self.n_rows + 1);
        for (r, row) in self.rows().enumerate() {
            let mut line = String::from("|");
            for cell in row {
                let text = escape_cell(&render(cell));
                if text.trim().is_empty() {
                    line.push_str(" |");
                } else {
                    line.push(' ');
                    line.push_str(&text);
                    line.push_str(" |");
                }
            }
            lines.push(line);
            if r == 0 {
                lines.push(format!("|{}", " --- |".repeat(self.n_cols)));
            }
        }
        lines.join("\n")
    }

    /// One mention per numeric cell, row-major, numbered from `first_id`.
    pub fn extract_mentions(&self, first_id: u32) -> Vec<NumericalMention> {
        let mut next = first_id;
        let mut out = Vec::new();
        for (idx, cell) in self.cells.iter().enumerate() {
            if let Some(value) = cell.value() {
                out.push(NumericalMention {
                    mention_id: next,
                    table_id: self.table_id.clone(),
                    row: idx / self.n_cols,
                    col: idx % self.n_cols,
                    raw_text: cell.raw_text.clone(),
                    value: value.clone(),
                });
                next += 1;
            }
        }
        out
    }

    pub fn numeric_cell_count(&self) -> usize {
        self.cells.iter().filter(|c| c.kind == CellKind::Numeric).count()
    }
}

/// Free-function form of [`Table::linearize`].
pub fn linearize_table(t: &Table) -> String {
    t.linearize()
}

fn escape_cell(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NumericalMention {
    pub mention_id: u32,
    pub table_id: String,
    pub row: usize,
    pub col: usize,
    pub raw_text: String,
    pub value: NumericValue,
}

impl NumericalMention {
    pub fn position_statement(&self) -> String {
        format!("Value at row {}, column {}", self.row, self.col)
    }
}

/// The context string of a mention: a part shared by every mention of the
/// same table, followed by the mention's position statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionContext {
    pub mention_id: u32,
    pub shared: String,
    pub position: String,
}

impl MentionContext {
    pub fn text(&self) -> String {
        format!("{}\n{}", self.shared, self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub doc_type: DocType,
    pub sections: Vec<Section>,
    pub tables: Vec<Table>,
    mentions: Vec<NumericalMention>,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        doc_type: DocType,
        sections: Vec<Section>,
        tables: Vec<Table>,
    ) -> Result<Document> {
        let section_ids: HashSet<&str> = sections.iter().map(|s| s.section_id.as_str()).collect();
        if section_ids.len() != sections.len() {
            return Err(Error::Schema("duplicate section_id".into()));
        }
        let mut table_ids = HashSet::new();
        for t in &tables {
            if !table_ids.insert(t.table_id.as_str()) {
                return Err(Error::Schema(format!("duplicate table_id `{}`", t.table_id)));
            }
            if !section_ids.contains(t.section_id.as_str()) {
                return Err(Error::Schema(format!(
                    "table `{}` references unknown section `{}`",
                    t.table_id, t.section_id
                )));
            }
        }
        let mut mentions = Vec::new();
        for t in &tables {
            let first = mentions.len() as u32;
            mentions.extend(t.extract_mentions(first));
        }
        Ok(Document {
            doc_id: doc_id.into(),
            doc_type,
            sections,
            tables,
            mentions,
        })
    }

    /// All mentions, ordered by id.
    pub fn mentions(&self) -> &[NumericalMention] {
        &self.mentions
    }

    pub fn mention(&self, id: u32) -> Option<&NumericalMention> {
        self.mentions.get(id as usize)
    }

    pub fn table(&self, table_id: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.table_id == table_id)
    }

    pub fn table_index(&self, table_id: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.table_id == table_id)
    }

    /// Mentions grouped per table, in reading order.
    pub fn mentions_by_table(&self) -> Vec<(&Table, &[NumericalMention])> {
        let mut out = Vec::with_capacity(self.tables.len());
        let mut start = 0;
        for t in &self.tables {
            let n = t.numeric_cell_count();
            out.push((t, &self.mentions[start..start + n]));
            start += n;
        }
        out
    }

    pub fn build_context(&self, mention_id: u32) -> Result<MentionContext> {
        self.build_context_with(mention_id, SURROUNDING_CHAR_BUDGET)
    }

    pub fn build_context_with(&self, mention_id: u32, budget: usize) -> Result<MentionContext> {
        let m = self.mention(mention_id).ok_or(Error::UnknownMention(mention_id))?;
        let table = self.table(&m.table_id).ok_or(Error::UnknownMention(mention_id))?;
        Ok(MentionContext {
            mention_id,
            shared: shared_context(table, budget, None),
            position: m.position_statement(),
        })
    }

    pub fn contexts(&self) -> Vec<MentionContext> {
        self.mentions_by_table()
            .into_iter()
            .flat_map(|(t, ms)| {
                let shared = shared_context(t, SURROUNDING_CHAR_BUDGET, None);
                ms.iter().map(move |m| MentionContext {
                    mention_id: m.mention_id,
                    shared: shared.clone(),
                    position: m.position_statement(),
                })
            })
            .collect()
    }
}

/// Title, bounded surrounding text and the linearized table.
///
/// `mask` replaces every numeric cell by the given placeholder.
pub fn shared_context(table: &Table, budget: usize, mask: Option<&str>) -> String {
    let body = match mask {
        Some(p) => table.linearize_masked(p),
        None => table.linearize(),
    };
    format!(
        "Chapter: {}\nText before table: {}\nText after table: {}\n{}",
        table.chapter_title,
        tail_chars(&table.text_before, budget),
        head_chars(&table.text_after, budget),
        body
    )
}

/// The `n` characters closest to the end of `s`.
pub fn tail_chars(s: &str, n: usize) -> &str {
    let count = s.chars().count();
    if count <= n {
        return s;
    }
    let skip = s.char_indices().nth(count - n).map_or(s.len(), |(i, _)| i);
    &s[skip..]
}

pub fn head_chars(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Free-function form of [`Document::build_context`].
pub fn build_context(d: &Document, m: &NumericalMention) -> Result<MentionContext> {
    match d.mention(m.mention_id) {
        Some(own) if own == m => d.build_context(m.mention_id),
        _ => Err(Error::UnknownMention(m.mention_id)),
    }
}

// ---- on-disk schema -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    table_id: String,
    section_id: String,
    chapter_title: String,
    text_before: String,
    text_after: String,
    cells: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentFile {
    doc_id: String,
    doc_type: DocType,
    sections: Vec<Section>,
    tables: Vec<TableFile>,
}

pub fn parse_document(bytes: &[u8]) -> Result<Document> {
    let file: DocumentFile =
        serde_json::from_slice(bytes).map_err(|e| Error::Schema(e.to_string()))?;
    let tables = file
        .tables
        .into_iter()
        .map(|t| Table::new(t.table_id, t.section_id, t.chapter_title, t.text_before, t.text_after, t.cells))
        .collect::<Result<Vec<_>>>()?;
    Document::new(file.doc_id, file.doc_type, file.sections, tables)
}

fn to_file(d: &Document) -> DocumentFile {
    DocumentFile {
        doc_id: d.doc_id.clone(),
        doc_type: d.doc_type,
        sections: d.sections.clone(),
        tables: d
            .tables
            .iter()
            .map(|t| TableFile {
                table_id: t.table_id.clone(),
                section_id: t.section_id.clone(),
                chapter_title: t.chapter_title.clone(),
                text_before: t.text_before.clone(),
                text_after: t.text_after.clone(),
                cells: t.grid(),
            })
            .collect(),
    }
}

/// Canonical pretty-printed JSON for a document.
pub fn serialize_document(d: &Document) -> String {
    serde_json::to_string_pretty(&to_file(d)).expect("document serialization is infallible")
}

// ---- gold annotations ----------------------------------------------------

/// An unordered mention pair in canonical `(low, high)` form.
pub type PairId = (u32, u32);

pub fn pair(a: u32, b: u32) -> PairId {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub doc_id: String,
    pub groups: Vec<Vec<u32>>,
}

impl GoldAnnotation {
    pub fn new(doc_id: impl Into<String>, groups: Vec<Vec<u32>>) -> Result<Self> {
        let g = GoldAnnotation {
            doc_id: doc_id.into(),
            groups,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for group in &self.groups {
            if group.len() < 2 {
                return Err(Error::Schema(format!("gold group {group:?} has fewer than 2 members")));
            }
            for &m in group {
                if !seen.insert(m) {
                    return Err(Error::Schema(format!("mention {m} appears in more than one gold group")));
                }
            }
        }
        Ok(())
    }

    /// All unordered pairs within each group.
    pub fn pairs(&self) -> BTreeSet<PairId> {
        let mut out = BTreeSet::new();
        for group in &self.groups {
            for (a, &x) in group.iter().enumerate() {
                for &y in &group[a + 1..] {
                    out.insert(pair(x, y));
                }
            }
        }
        out
    }

    /// Mention id to group index.
    pub fn membership(&self) -> BTreeMap<u32, usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, ms)| ms.iter().map(move |&m| (m, g)))
            .collect()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let g: GoldAnnotation =
            serde_json::from_slice(bytes).map_err(|e| Error::Schema(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&[&str]]) -> Vec<Vec<String>> {
        rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect()
    }

    fn table(rows: &[&[&str]]) -> Table {
        Table::new("t1", "s1", "Results", "", "", grid(rows)).unwrap()
    }

    #[test]
    fn linearize_two_by_two() {
        let t = table(&[&["A", "B"], &["1", "2"]]);
        assert_eq!(linearize_table(&t), "| A | B |\n| --- | --- |\n| 1 | 2 |");
    }

    #[test]
    fn linearize_empty_cell_and_escape() {
        let t = table(&[&["A", ""], &["a|b", "x\ny"]]);
        assert_eq!(t.linearize(), "| A | |\n| --- | --- |\n| a\\|b | x\\ny |");
    }

    #[test]
    fn ragged_grid_rejected() {
        let err = Table::new("t", "s", "", "", "", grid(&[&["a", "b", "c"], &["1", "2"]])).unwrap_err();
        assert!(matches!(err, Error::Grid { row: 1, expected: 3, found: 2, .. }));
    }

    #[test]
    fn no_numeric_cells_no_mentions() {
        let t = table(&[&["Item", "FY2023"], &["Revenue", "n/a"]]);
        assert!(t.extract_mentions(0).is_empty());
    }

    #[test]
    fn mentions_row_major() {
        let t = table(&[&["Item", "FY2022", "FY2023"], &["Revenue", "49,120", "x"], &["Cost", "(5)", "7%"]]);
        let ms = t.extract_mentions(10);
        let cells: Vec<_> = ms.iter().map(|m| (m.mention_id, m.row, m.col)).collect();
        assert_eq!(cells, vec![(10, 1, 1), (11, 2, 1), (12, 2, 2)]);
        assert_eq!(ms[0].value, NumericValue::from_i64(49120));
    }

    #[test]
    fn cell_kinds() {
        let t = table(&[&["Item", ""], &["Revenue", "text"]]);
        let kinds: Vec<_> = t.rows().flatten().map(|c| c.kind).collect();
        assert_eq!(kinds, vec![CellKind::Header, CellKind::Empty, CellKind::Header, CellKind::Text]);
    }

    fn doc_with(text_before: &str, text_after: &str) -> Document {
        let t = Table::new(
            "t1",
            "s1",
            "Financial highlights",
            text_before,
            text_after,
            grid(&[&["Item", "FY2024"], &["Revenue", "49,120"], &["Profit", "1,200"]]),
        )
        .unwrap();
        Document::new(
            "d1",
            DocType::Synthetic,
            vec![Section { section_id: "s1".into(), title: "Overview".into() }],
            vec![t],
        )
        .unwrap()
    }

    #[test]
    fn surrounding_text_capped_per_side() {
        let before: String = (0..1200).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let after: String = (0..1200).map(|i| char::from(b'A' + (i % 26) as u8)).collect();
        let d = doc_with(&before, &after);
        let ctx = d.build_context(0).unwrap();
        let kept_before = &before[700..];
        let kept_after = &after[..500];
        assert!(ctx.shared.contains(&format!("Text before table: {kept_before}\n")));
        assert!(ctx.shared.contains(&format!("Text after table: {kept_after}\n")));
        assert!(!ctx.shared.contains(&before[699..]));
        assert!(!ctx.shared.contains(&after[..501]));
    }

    #[test]
    fn tail_and_head_count_chars_not_bytes() {
        assert_eq!(tail_chars("ééab", 3), "éab");
        assert_eq!(head_chars("ééab", 3), "ééa");
        assert_eq!(head_chars("ab", 3), "ab");
    }

    #[test]
    fn same_table_contexts_differ_only_in_position() {
        let d = doc_with("before", "after");
        let a = d.build_context(0).unwrap();
        let b = d.build_context(1).unwrap();
        assert_eq!(a.shared, b.shared);
        assert_eq!(a.position, "Value at row 1, column 1");
        assert_eq!(b.position, "Value at row 2, column 1");
        assert_eq!(a, d.build_context(0).unwrap());
        assert!(a.text().ends_with(&a.position));
    }

    #[test]
    fn unknown_mention() {
        let d = doc_with("", "");
        assert!(matches!(d.build_context(9), Err(Error::UnknownMention(9))));
    }

    #[test]
    fn parse_minimal() {
        let json = r#"{"doc_id":"d","doc_type":"synthetic","sections":[{"section_id":"s","title":"S"}],
            "tables":[{"table_id":"t","section_id":"s","chapter_title":"","text_before":"","text_after":"","cells":[["5"]]}]}"#;
        let d = parse_document(json.as_bytes()).unwrap();
        assert_eq!(d.tables.len(), 1);
        assert_eq!(d.mentions().len(), 1);
    }

    #[test]
    fn parse_errors() {
        let missing = r#"{"doc_id":"d","doc_type":"synthetic","sections":[]}"#;
        assert!(matches!(parse_document(missing.as_bytes()), Err(Error::Schema(_))));
        let ragged = r#"{"doc_id":"d","doc_type":"synthetic","sections":[{"section_id":"s","title":"S"}],
            "tables":[{"table_id":"t","section_id":"s","chapter_title":"","text_before":"","text_after":"",
            "cells":[["a","b","c"],["1","2"]]}]}"#;
        assert!(matches!(parse_document(ragged.as_bytes()), Err(Error::Grid { .. })));
        let bad_section = r#"{"doc_id":"d","doc_type":"synthetic","sections":[],
            "tables":[{"table_id":"t","section_id":"s","chapter_title":"","text_before":"","text_after":"","cells":[["1"]]}]}"#;
        assert!(matches!(parse_document(bad_section.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn gold_pairs_count() {
        let g = GoldAnnotation::new("d", vec![vec![1, 2, 3], vec![7, 4]]).unwrap();
        let pairs = g.pairs();
        assert_eq!(pairs.len(), 3 + 1);
        assert!(pairs.contains(&(4, 7)));
        assert!(GoldAnnotation::new("d", vec![vec![1]]).is_err());
        assert!(GoldAnnotation::new("d", vec![vec![1, 2], vec![2, 3]]).is_err());
    }
}
