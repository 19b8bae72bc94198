//! Splitting a parsed MPFile into per-material contributions.

use std::fmt;
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use rand::RngCore;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::builder::PlotSpec;
use crate::identifier::{classify, IdentifierError, MaterialId};
use crate::mpfile::{self, Cell, DataTable, MpFileDoc, Section};

/// Name of the reserved shared-metadata section.
pub const GENERAL: &str = "general";
/// Reserved root-level key carrying an embedded contribution id.
pub const CID_KEY: &str = "cid";
/// Table name given to a root section's own (bare) table.
pub const BARE_TABLE: &str = "data";

pub const SIZE_WARN_BYTES: usize = 200 * 1024;
pub const SIZE_LIMIT_BYTES: usize = 1024 * 1024;

const CID_RETRIES: usize = 8;

static NUMBER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$").unwrap());

pub type HierData = IndexMap<String, HierValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HierValue {
    Text(String),
    Map(HierData),
}

impl HierValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            HierValue::Text(s) => Some(s),
            HierValue::Map(_) => None,
        }
    }

    pub fn as_map(&self) -> Option<&HierData> {
        match self {
            HierValue::Map(m) => Some(m),
            HierValue::Text(_) => None,
        }
    }
}

impl From<&str> for HierValue {
    fn from(s: &str) -> Self {
        HierValue::Text(s.to_string())
    }
}

impl From<HierData> for HierValue {
    fn from(m: HierData) -> Self {
        HierValue::Map(m)
    }
}

/// Follows a dotted key path ("physical properties.melting point").
pub fn lookup<'a>(tree: &'a HierData, dotted: &str) -> Option<&'a HierValue> {
    let mut parts = dotted.split('.');
    let mut current = tree.get(parts.next()?)?;
    for part in parts {
        current = current.as_map()?.get(part)?;
    }
    Some(current)
}

/// Recursive dictionary update: maps present on both sides merge, anything
/// else from `overlay` replaces the base value. Base key order is kept and
/// new overlay keys are appended.
pub fn recursive_update(base: &HierData, overlay: &HierData) -> HierData {
    let mut out = base.clone();
    for (key, value) in overlay {
        let merged = match (out.get(key), value) {
            (Some(HierValue::Map(b)), HierValue::Map(o)) => HierValue::Map(recursive_update(b, o)),
            _ => value.clone(),
        };
        out.insert(key.clone(), merged);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Cid(String);

impl Cid {
    pub fn parse(s: &str) -> Option<Cid> {
        (s.len() == 24 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')))
            .then(|| Cid(s.to_string()))
    }

    pub fn random() -> Cid {
        let mut bytes = [0u8; 12];
        rand::rng().fill_bytes(&mut bytes);
        Cid(hex::encode(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Short form shown to users.
    pub fn display(&self) -> &str {
        &self.0[..7]
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Cid {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Cid::parse(&s).ok_or_else(|| format!("'{s}' is not a 24-hex contribution id"))
    }
}

impl From<Cid> for String {
    fn from(c: Cid) -> Self {
        c.0
    }
}

/// Draws a fresh id, retrying while `taken` reports a collision.
pub fn new_cid(taken: impl Fn(&Cid) -> bool) -> Result<Cid, PipelineError> {
    for _ in 0..CID_RETRIES {
        let cid = Cid::random();
        if !taken(&cid) {
            return Ok(cid);
        }
    }
    Err(PipelineError::IdExhaustion)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    #[default]
    Private,
    Public,
}

impl std::str::FromStr for Visibility {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "private" => Ok(Visibility::Private),
            "public" => Ok(Visibility::Public),
            other => Err(format!("unknown visibility '{other}'")),
        }
    }
}

impl std::fmt::Display for Visibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Visibility::Private => "private",
            Visibility::Public => "public",
        })
    }
}

/// One root section's worth of data, not yet stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionDraft {
    pub cid: Option<Cid>,
    pub project: String,
    pub title: String,
    pub material: MaterialId,
    pub tree: HierData,
    pub tables: IndexMap<String, DataTable>,
    /// Header line of the root section.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub cid: Cid,
    pub project: String,
    pub title: String,
    pub material: MaterialId,
    pub tree: HierData,
    pub tables: IndexMap<String, DataTable>,
    #[serde(default)]
    pub plots: Vec<PlotSpec>,
    pub visibility: Visibility,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub content_hash: String,
}

impl Contribution {
    pub fn material_key(&self) -> String {
        self.material.canonical_key()
    }
}

/// SHA-256 over the canonical JSON of the tree and tables.
pub fn content_hash(tree: &HierData, tables: &IndexMap<String, DataTable>) -> String {
    let bytes = serde_json::to_vec(&(tree, tables)).expect("tree and tables serialize");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("{source} (line {line})")]
    Classify {
        line: usize,
        #[source]
        source: IdentifierError,
    },
    #[error("EmptyDocument: no root sections")]
    EmptyDocument,
    #[error("GeneralOnly: the document contains only a general section")]
    GeneralOnly,
    #[error("EmptyProject: project name is empty")]
    EmptyProject,
    #[error("InvalidCid at line {line}: '{value}' is not a 24-hex contribution id")]
    InvalidCid { line: usize, value: String },
    #[error("ReservedKey at line {line}: '{key}' is only allowed at the top of a root section")]
    ReservedKey { line: usize, key: String },
    #[error("KeyCollision at line {line}: '{key}' is both a key and a section")]
    KeyCollision { line: usize, key: String },
    #[error("DuplicateTable at line {line}: table '{name}' defined twice")]
    DuplicateTable { line: usize, name: String },
    #[error("DuplicateColumn at line {line}: column '{column}' appears twice")]
    DuplicateColumn { line: usize, column: String },
    #[error("DuplicateSibling at line {line}: '{title}' targets {material}, already used by '{first}'")]
    DuplicateMaterial {
        line: usize,
        title: String,
        first: String,
        material: String,
    },
    #[error("EmptyTable at line {line}: no data rows remain after cleaning")]
    EmptyTable { line: usize },
    #[error("OversizeContribution: '{title}' serializes to {bytes} bytes (limit {limit})")]
    OversizeContribution {
        title: String,
        bytes: usize,
        limit: usize,
    },
    #[error("IdExhaustion: could not draw an unused contribution id")]
    IdExhaustion,
}

impl PipelineError {
    pub fn line(&self) -> Option<usize> {
        match self {
            PipelineError::Classify { line, .. }
            | PipelineError::InvalidCid { line, .. }
            | PipelineError::ReservedKey { line, .. }
            | PipelineError::KeyCollision { line, .. }
            | PipelineError::DuplicateTable { line, .. }
            | PipelineError::DuplicateColumn { line, .. }
            | PipelineError::DuplicateMaterial { line, .. }
            | PipelineError::EmptyTable { line } => Some(*line),
            _ => None,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Classify { source, .. } => source.code(),
            PipelineError::EmptyDocument => "EmptyDocument",
            PipelineError::GeneralOnly => "GeneralOnly",
            PipelineError::EmptyProject => "EmptyProject",
            PipelineError::InvalidCid { .. } => "InvalidCid",
            PipelineError::ReservedKey { .. } => "ReservedKey",
            PipelineError::KeyCollision { .. } => "KeyCollision",
            PipelineError::DuplicateTable { .. } => "DuplicateTable",
            PipelineError::DuplicateColumn { .. } => "DuplicateColumn",
            PipelineError::DuplicateMaterial { .. } => "DuplicateSibling",
            PipelineError::EmptyTable { .. } => "EmptyTable",
            PipelineError::OversizeContribution { .. } => "OversizeContribution",
            PipelineError::IdExhaustion => "IdExhaustion",
        }
    }
}

struct Unpacked {
    tree: HierData,
    tables: IndexMap<String, DataTable>,
}

fn add_table(
    tables: &mut IndexMap<String, DataTable>,
    name: &str,
    path: &[&str],
    table: &DataTable,
    line: usize,
) -> Result<(), PipelineError> {
    let key = if tables.contains_key(name) {
        path.join(".")
    } else {
        name.to_string()
    };
    if tables.contains_key(&key) {
        return Err(PipelineError::DuplicateTable { line, name: key });
    }
    tables.insert(key, table.clone());
    Ok(())
}

/// Builds the subtree of `section`, registering tables along the way.
/// Returns `None` for sections that hold only a table.
fn unpack_section<'a>(
    section: &'a Section,
    path: &mut Vec<&'a str>,
    tables: &mut IndexMap<String, DataTable>,
) -> Result<Option<HierData>, PipelineError> {
    let mut node = HierData::new();
    for (key, value) in &section.kv {
        if key == CID_KEY {
            return Err(PipelineError::ReservedKey {
                line: section.line,
                key: key.clone(),
            });
        }
        node.insert(key.clone(), HierValue::Text(value.clone()));
    }
    if let Some(table) = &section.table {
        add_table(tables, &section.name, path, table, section.line)?;
    }
    for child in &section.children {
        path.push(&child.name);
        let sub = unpack_section(child, path, tables)?;
        path.pop();
        if let Some(sub) = sub {
            if child.name == CID_KEY {
                return Err(PipelineError::ReservedKey {
                    line: child.line,
                    key: child.name.clone(),
                });
            }
            if node.contains_key(&child.name) {
                return Err(PipelineError::KeyCollision {
                    line: child.line,
                    key: child.name.clone(),
                });
            }
            node.insert(child.name.clone(), HierValue::Map(sub));
        }
    }
    if section.table.is_some() && node.is_empty() {
        Ok(None)
    } else {
        Ok(Some(node))
    }
}

/// Unpacks a root section. The root's own table is named [`BARE_TABLE`] and
/// a top-level `cid` key is lifted out of the tree.
fn unpack_root(root: &Section, allow_cid: bool) -> Result<(Unpacked, Option<Cid>), PipelineError> {
    let mut tables = IndexMap::new();
    let mut cid = None;
    let mut stripped = root.clone();
    stripped.table = None;
    if allow_cid {
        if let Some(pos) = stripped.kv.iter().position(|(k, _)| k == CID_KEY) {
            let (_, value) = stripped.kv.remove(pos);
            cid = Some(Cid::parse(&value).ok_or(PipelineError::InvalidCid {
                line: root.line,
                value,
            })?);
        }
    }
    if let Some(table) = &root.table {
        tables.insert(BARE_TABLE.to_string(), table.clone());
    }
    let mut path = Vec::new();
    let tree = unpack_section(&stripped, &mut path, &mut tables)?.unwrap_or_default();
    Ok((Unpacked { tree, tables }, cid))
}

/// Splits a document into one draft per non-general root section.
///
/// When the first root is named `general` its content is shared: each draft
/// gets it under its own `general` key, with the draft's local `general`
/// subsection taking precedence key by key.
pub fn split(doc: &MpFileDoc, project: &str) -> Result<Vec<ContributionDraft>, PipelineError> {
    if project.trim().is_empty() {
        return Err(PipelineError::EmptyProject);
    }
    let (shared, roots) = match doc.roots.split_first() {
        None => return Err(PipelineError::EmptyDocument),
        Some((first, rest)) if first.name == GENERAL => {
            if rest.is_empty() {
                return Err(PipelineError::GeneralOnly);
            }
            (Some(unpack_root(first, false)?.0), rest)
        }
        Some(_) => (None, &doc.roots[..]),
    };

    let mut drafts = Vec::with_capacity(roots.len());
    for root in roots {
        let material = classify(&root.name).map_err(|source| PipelineError::Classify {
            line: root.line,
            source,
        })?;
        let key = material.canonical_key();
        if let Some(first) = drafts.iter().find(|d: &&ContributionDraft| d.material.canonical_key() == key) {
            return Err(PipelineError::DuplicateMaterial {
                line: root.line,
                title: root.name.clone(),
                first: first.title.clone(),
                material: key,
            });
        }
        let (mut local, cid) = unpack_root(root, true)?;
        if let Some(shared) = &shared {
            let mut base = HierData::new();
            base.insert(GENERAL.to_string(), HierValue::Map(shared.tree.clone()));
            local.tree = recursive_update(&base, &local.tree);
            let mut tables = shared.tables.clone();
            tables.extend(local.tables);
            local.tables = tables;
        }
        drafts.push(ContributionDraft {
            cid,
            project: project.to_string(),
            title: root.name.clone(),
            material,
            tree: local.tree,
            tables: local.tables,
            line: root.line,
        });
    }
    Ok(drafts)
}

fn is_number(s: &str) -> Option<f64> {
    if !NUMBER_RE.is_match(s) {
        return None;
    }
    s.parse::<f64>().ok().filter(|n| n.is_finite())
}

fn clean_cell(cell: &Cell) -> Cell {
    match cell {
        Cell::Number(n) => Cell::Number(*n),
        Cell::Text(s) => {
            let t = s.trim();
            match is_number(t) {
                Some(n) => Cell::Number(n),
                None => Cell::Text(t.to_string()),
            }
        }
    }
}

fn is_blank(cell: &Cell) -> bool {
    matches!(cell, Cell::Text(s) if s.is_empty())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CleanError {
    #[error("DuplicateColumn: '{0}' appears twice")]
    DuplicateColumn(String),
    #[error("EmptyTable: no data rows remain after cleaning")]
    EmptyTable,
}

/// Trims cells, drops blank rows and blank columns, and types numeric cells.
pub fn clean_table(raw: &DataTable) -> Result<DataTable, CleanError> {
    let columns: Vec<String> = raw.columns.iter().map(|c| c.trim().to_string()).collect();
    let rows: Vec<Vec<Cell>> = raw
        .rows
        .iter()
        .map(|r| r.iter().map(clean_cell).collect::<Vec<_>>())
        .filter(|r| !r.iter().all(is_blank))
        .collect();
    let keep: Vec<usize> = (0..columns.len())
        .filter(|&i| !(columns[i].is_empty() && rows.iter().all(|r| is_blank(&r[i]))))
        .collect();
    let columns: Vec<String> = keep.iter().map(|&i| columns[i].clone()).collect();
    for (i, c) in columns.iter().enumerate() {
        if columns[..i].contains(c) {
            return Err(CleanError::DuplicateColumn(c.clone()));
        }
    }
    if rows.is_empty() || columns.is_empty() {
        return Err(CleanError::EmptyTable);
    }
    let rows = rows
        .into_iter()
        .map(|r| keep.iter().map(|&i| r[i].clone()).collect())
        .collect();
    Ok(DataTable::new(columns, rows))
}

/// [`clean_table`] with errors attributed to the draft's header line.
pub fn clean_draft(draft: &mut ContributionDraft) -> Result<(), PipelineError> {
    for table in draft.tables.values_mut() {
        *table = clean_table(table).map_err(|e| match e {
            CleanError::EmptyTable => PipelineError::EmptyTable { line: draft.line },
            CleanError::DuplicateColumn(column) => PipelineError::DuplicateColumn {
                line: draft.line,
                column,
            },
        })?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeCheck {
    Ok { bytes: usize },
    Warning { bytes: usize },
}

fn tree_section(name: &str, depth: usize, tree: &HierData) -> Section {
    let mut section = Section::new(name, depth);
    for (k, v) in tree {
        match v {
            HierValue::Text(s) => section.kv.push((k.clone(), s.clone())),
            HierValue::Map(m) => section.children.push(tree_section(k, depth + 1, m)),
        }
    }
    section
}

/// Byte length of the draft written back as an MPFile root section.
pub fn canonical_size(draft: &ContributionDraft) -> usize {
    let mut root = tree_section(&draft.title, 0, &draft.tree);
    for (name, table) in &draft.tables {
        if name == BARE_TABLE {
            root.table = Some(table.clone());
        } else {
            let mut s = Section::new(name.as_str(), 1);
            s.table = Some(table.clone());
            root.children.push(s);
        }
    }
    mpfile::render_section(&root).len()
}

pub fn enforce_size(draft: &ContributionDraft) -> Result<SizeCheck, PipelineError> {
    let bytes = canonical_size(draft);
    if bytes > SIZE_LIMIT_BYTES {
        Err(PipelineError::OversizeContribution {
            title: draft.title.clone(),
            bytes,
            limit: SIZE_LIMIT_BYTES,
        })
    } else if bytes > SIZE_WARN_BYTES {
        Ok(SizeCheck::Warning { bytes })
    } else {
        Ok(SizeCheck::Ok { bytes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpfile::parse;
    use proptest::prelude::*;

    fn map(pairs: Vec<(&str, HierValue)>) -> HierData {
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn text(s: &str) -> HierValue {
        HierValue::Text(s.into())
    }

    #[test]
    fn update_merges_maps() {
        let base = map(vec![("a", map(vec![("b", text("1")), ("c", text("2"))]).into())]);
        let overlay = map(vec![("a", map(vec![("c", text("3"))]).into()), ("d", text("4"))]);
        let expected = map(vec![
            ("a", map(vec![("b", text("1")), ("c", text("3"))]).into()),
            ("d", text("4")),
        ]);
        assert_eq!(recursive_update(&base, &overlay), expected);
        assert_eq!(recursive_update(&base, &HierData::new()), base);
    }

    #[test]
    fn update_replaces_scalars_wholesale() {
        let base = map(vec![("a", text("x"))]);
        let overlay = map(vec![("a", map(vec![("b", text("y"))]).into())]);
        assert_eq!(recursive_update(&base, &overlay), overlay);
    }

    #[test]
    fn split_single_root() {
        let doc = parse(">>> MP-5\nk: v").unwrap();
        let drafts = split(&doc, "p").unwrap();
        assert_eq!(drafts.len(), 1);
        assert_eq!(drafts[0].material, MaterialId::MpId { id: 5 });
        assert_eq!(drafts[0].tree, map(vec![("k", text("v"))]));
    }

    #[test]
    fn two_roots_for_one_material_are_rejected() {
        let doc = parse(">>> Fe2O4\nk: v\n>>> FeO2\nk: w\n").unwrap();
        let err = split(&doc, "p").unwrap_err();
        assert_eq!(err.code(), "DuplicateSibling");
        assert_eq!(err.line(), Some(3));
        assert_eq!(split(&parse(">>> mp-1\nk: v\n>>> MP-1\nk: w\n").unwrap(), "p").unwrap_err().line(), Some(3));
    }

    #[test]
    fn shared_general_precedence() {
        let doc = parse(
            ">>> general\nlab: ALS\n>>> MP-1\n>>>> general\nlab: LBL\n>>> MP-2\nnote: x",
        )
        .unwrap();
        let drafts = split(&doc, "p").unwrap();
        assert_eq!(drafts.len(), 2);
        let lab = |d: &ContributionDraft| lookup(&d.tree, "general.lab").cloned();
        assert_eq!(lab(&drafts[0]), Some(text("LBL")));
        assert_eq!(lab(&drafts[1]), Some(text("ALS")));
    }

    #[test]
    fn split_errors() {
        assert_eq!(split(&MpFileDoc::default(), "p"), Err(PipelineError::EmptyDocument));
        let general_only = parse(">>> general\nk: v").unwrap();
        assert_eq!(split(&general_only, "p"), Err(PipelineError::GeneralOnly));
        let late_general = parse(">>> MP-1\nk: v\n>>> general\nk: v").unwrap();
        let err = split(&late_general, "p").unwrap_err();
        assert_eq!(err.code(), "MalformedIdentifier");
        assert_eq!(err.line(), Some(3));
        assert_eq!(split(&late_general, " "), Err(PipelineError::EmptyProject));
    }

    #[test]
    fn cid_is_lifted_out_of_the_tree() {
        let doc = parse(">>> MP-1\ncid: 0123456789abcdef01234567\nk: v").unwrap();
        let d = &split(&doc, "p").unwrap()[0];
        assert_eq!(d.cid.as_ref().unwrap().as_str(), "0123456789abcdef01234567");
        assert!(!d.tree.contains_key("cid"));

        let bad = parse(">>> MP-1\ncid: xyz").unwrap();
        assert!(matches!(split(&bad, "p"), Err(PipelineError::InvalidCid { .. })));
        let nested = parse(">>> MP-1\n>>>> s\ncid: 0123456789abcdef01234567").unwrap();
        assert!(matches!(split(&nested, "p"), Err(PipelineError::ReservedKey { .. })));
    }

    #[test]
    fn nested_tables_and_collisions() {
        let doc = parse(">>> MP-1\n>>>> a\n>>>>> t\nx,y\n1,2\n>>>> b\n>>>>> t\nx,y\n3,4").unwrap();
        let d = &split(&doc, "p").unwrap()[0];
        assert_eq!(d.tables.keys().collect::<Vec<_>>(), ["t", "b.t"]);

        let doc = parse(">>> MP-1\na: 1\n>>>> a\nb: 2").unwrap();
        assert!(matches!(split(&doc, "p"), Err(PipelineError::KeyCollision { .. })));
    }

    #[test]
    fn clean_types_numbers() {
        let raw = DataTable::new(
            vec!["a".into(), " b ".into()],
            vec![
                vec![Cell::from(" 418"), Cell::from("1")],
                vec![Cell::from("469"), Cell::from("10")],
            ],
        );
        let t = clean_table(&raw).unwrap();
        assert_eq!(t.columns, ["a", "b"]);
        assert_eq!(
            t.rows,
            vec![
                vec![Cell::Number(418.0), Cell::Number(1.0)],
                vec![Cell::Number(469.0), Cell::Number(10.0)]
            ]
        );
        let cfg = DataTable::new(vec!["configuration".into()], vec![vec![Cell::from("6s1/2")]]);
        assert_eq!(clean_table(&cfg).unwrap().rows[0][0], Cell::from("6s1/2"));
    }

    #[test]
    fn clean_drops_blank_rows_and_columns() {
        let raw = DataTable::new(
            vec!["x".into(), "y".into(), "".into()],
            vec![
                vec![Cell::from("1"), Cell::from("2"), Cell::from("")],
                vec![Cell::from(" "), Cell::from(""), Cell::from("")],
            ],
        );
        let t = clean_table(&raw).unwrap();
        assert_eq!(t.columns, ["x", "y"]);
        assert_eq!(t.rows.len(), 1);
    }

    #[test]
    fn clean_number_grammar() {
        for ok in ["1", "-2", "+3.5", ".5", "5.", "1e3", "2.5E-4"] {
            assert!(is_number(ok).is_some(), "{ok}");
        }
        for bad in ["1,5", "1.2.3", "nan", "inf", "1e", "", "1 000", "0x10", "1e999"] {
            assert!(is_number(bad).is_none(), "{bad}");
        }
    }

    #[test]
    fn clean_errors() {
        let dup = DataTable::new(vec!["x".into(), " x".into()], vec![vec![Cell::from("1"), Cell::from("2")]]);
        assert_eq!(clean_table(&dup), Err(CleanError::DuplicateColumn("x".into())));
        let empty = DataTable::new(vec!["x".into()], vec![vec![Cell::from(" ")]]);
        assert_eq!(clean_table(&empty), Err(CleanError::EmptyTable));
    }

    fn draft_with_rows(rows: usize) -> ContributionDraft {
        let table = DataTable::new(
            vec!["x".into(), "y".into()],
            (0..rows)
                .map(|i| vec![Cell::Number(i as f64), Cell::Number(1000.0 + i as f64)])
                .collect(),
        );
        ContributionDraft {
            cid: None,
            project: "p".into(),
            title: "MP-1".into(),
            material: MaterialId::MpId { id: 1 },
            tree: HierData::new(),
            tables: [("t".to_string(), table)].into_iter().collect(),
            line: 1,
        }
    }

    #[test]
    fn size_thresholds() {
        assert!(matches!(enforce_size(&draft_with_rows(10)), Ok(SizeCheck::Ok { .. })));
        // roughly 500 KiB and 2 MiB of rows
        let warn = draft_with_rows(500 * 1024 / 12);
        assert!(matches!(enforce_size(&warn), Ok(SizeCheck::Warning { .. })));
        let over = draft_with_rows(2 * 1024 * 1024 / 12);
        assert!(matches!(
            enforce_size(&over),
            Err(PipelineError::OversizeContribution { .. })
        ));
    }

    #[test]
    fn cid_format() {
        let cid = Cid::parse("eb0b94e1a2b3c4d5e6f70812").unwrap();
        assert_eq!(cid.display(), "eb0b94e");
        assert!(Cid::parse("EB0B94E1A2B3C4D5E6F70812").is_none());
        assert!(Cid::parse("eb0b94e").is_none());
        let a = new_cid(|_| false).unwrap();
        let b = new_cid(|_| false).unwrap();
        assert_ne!(a, b);
        assert!(Cid::parse(a.as_str()).is_some());
        assert_eq!(new_cid(|_| true), Err(PipelineError::IdExhaustion));
    }

    #[test]
    fn cid_birthday_bound() {
        // 96-bit ids: P(collision in 1e5 draws) ~ n^2 / 2^97, effectively zero
        let n = 100_000usize;
        let bound = (n as f64).powi(2) / 2f64.powi(97);
        assert!(bound < 1e-18);
        let mut seen = std::collections::HashSet::with_capacity(n);
        for _ in 0..n {
            assert!(seen.insert(Cid::random()));
        }
    }

    fn arb_tree() -> impl Strategy<Value = HierData> {
        let leaf = "[a-c]{1,2}".prop_map(HierValue::Text);
        let value = leaf.prop_recursive(3, 16, 3, |inner| {
            prop::collection::vec(("[a-d]", inner), 0..4)
                .prop_map(|kv| HierValue::Map(kv.into_iter().collect()))
        });
        prop::collection::vec(("[a-d]", value), 0..4).prop_map(|kv| kv.into_iter().collect())
    }

    proptest! {
        #[test]
        fn update_identity(x in arb_tree()) {
            prop_assert_eq!(recursive_update(&x, &HierData::new()), x.clone());
            prop_assert_eq!(recursive_update(&HierData::new(), &x), x);
        }

        #[test]
        fn update_idempotent_in_overlay(b in arb_tree(), o in arb_tree()) {
            let once = recursive_update(&b, &o);
            prop_assert_eq!(recursive_update(&once, &o), once);
        }

        #[test]
        fn clean_is_idempotent(rows in prop::collection::vec(
            prop::collection::vec(prop_oneof!["[ ]?-?[0-9]{1,3}(\\.[0-9])?[ ]?", "[ a-z]{0,3}"], 3),
            1..6,
        )) {
            let raw = DataTable::new(
                vec!["a".into(), "b".into(), "c".into()],
                rows.into_iter().map(|r| r.into_iter().map(Cell::Text).collect()).collect(),
            );
            if let Ok(once) = clean_table(&raw) {
                prop_assert_eq!(clean_table(&once).unwrap(), once);
            }
        }
    }
}
