//! The MPFile markup format.
//!
//! An MPFile is a sequence of sections. A section header is a run of at
//! least three `>` characters followed by the section name and an optional
//! `# comment`; three `>` open a root section and every additional `>`
//! nests one level deeper. Section content is made of `key: value` lines
//! and/or a CSV table whose first row is the header row.
//!
//! ```text
//! >>> MP-1 # caesium
//! >>>> physical properties
//! melting point: 301.7 K
//! >>>> table 1
//! T, vapor pressure
//! 418,1
//! ```
//!
//! [`parse`] produces an ordered AST and [`serialize`] writes it back in a
//! canonical form that reparses to the same AST.

use std::fmt::{self, Write as _};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of `>` characters that open a root section.
pub const ROOT_MARKER_LEN: usize = 3;

static HEADER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(>{3,})\s*(.*?)(\s*#\s*(.*))?$").unwrap());

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MpFileDoc {
    pub roots: Vec<Section>,
}

#[derive(Debug, Clone, Default)]
pub struct Section {
    pub name: String,
    pub depth: usize,
    pub comment: Option<String>,
    pub kv: Vec<(String, String)>,
    pub children: Vec<Section>,
    pub table: Option<DataTable>,
    /// 1-based line of the header in the parsed text, 0 for built sections.
    pub line: usize,
}

// Source line numbers are positional metadata, not content.
impl PartialEq for Section {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.depth == other.depth
            && self.comment == other.comment
            && self.kv == other.kv
            && self.children == other.children
            && self.table == other.table
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Number(f64),
    Text(String),
}

impl Cell {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(n) => Some(*n),
            Cell::Text(_) => None,
        }
    }

    pub fn is_number(&self) -> bool {
        matches!(self, Cell::Number(_))
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Number(n) => write!(f, "{n}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<f64> for Cell {
    fn from(n: f64) -> Self {
        Cell::Number(n)
    }
}

impl DataTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Cell>>) -> Self {
        DataTable { columns, rows }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, idx: usize) -> impl Iterator<Item = &Cell> {
        self.rows.iter().map(move |r| &r[idx])
    }

    /// Header row plus data rows as canonical comma-separated lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        write_table(&mut out, self);
        out
    }
}

impl Section {
    pub fn new(name: impl Into<String>, depth: usize) -> Self {
        Section {
            name: name.into(),
            depth,
            ..Default::default()
        }
    }

    pub fn child(&self, name: &str) -> Option<&Section> {
        self.children.iter().find(|c| c.name == name)
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.kv
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// True when the section holds nothing but a table.
    pub fn is_table_only(&self) -> bool {
        self.table.is_some() && self.kv.is_empty() && self.children.is_empty()
    }

    fn walk<'a>(&'a self, visit: &mut impl FnMut(&'a Section)) {
        visit(self);
        for child in &self.children {
            child.walk(visit);
        }
    }
}

impl MpFileDoc {
    pub fn root(&self, name: &str) -> Option<&Section> {
        self.roots.iter().find(|r| r.name == name)
    }

    /// Visits every section depth-first in document order.
    pub fn sections(&self) -> Vec<&Section> {
        let mut out = Vec::new();
        for root in &self.roots {
            root.walk(&mut |s| out.push(s));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("DepthJump at line {line}: section depth {found} exceeds the maximum allowed depth {max}")]
    DepthJump { line: usize, found: usize, max: usize },
    #[error("DuplicateSibling at line {line}: section '{name}' already exists at this level")]
    DuplicateSibling { line: usize, name: String },
    #[error("RaggedTable at line {line}: expected {expected} cells, found {found}")]
    RaggedTable {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("EmptySectionName at line {line}")]
    EmptySectionName { line: usize },
    #[error("MixedContent at line {line}: key/value line after table rows")]
    MixedContent { line: usize },
    #[error("DuplicateKey at line {line}: key '{key}' repeated within one section")]
    DuplicateKey { line: usize, key: String },
    #[error("HeaderOnlyTable at line {line}: table has a header row but no data rows")]
    HeaderOnlyTable { line: usize },
    #[error("ContentOutsideSection at line {line}: content before the first section header")]
    ContentOutsideSection { line: usize },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::DepthJump { line, .. }
            | ParseError::DuplicateSibling { line, .. }
            | ParseError::RaggedTable { line, .. }
            | ParseError::EmptySectionName { line }
            | ParseError::MixedContent { line }
            | ParseError::DuplicateKey { line, .. }
            | ParseError::HeaderOnlyTable { line }
            | ParseError::ContentOutsideSection { line } => *line,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ParseError::DepthJump { .. } => "DepthJump",
            ParseError::DuplicateSibling { .. } => "DuplicateSibling",
            ParseError::RaggedTable { .. } => "RaggedTable",
            ParseError::EmptySectionName { .. } => "EmptySectionName",
            ParseError::MixedContent { .. } => "MixedContent",
            ParseError::DuplicateKey { .. } => "DuplicateKey",
            ParseError::HeaderOnlyTable { .. } => "HeaderOnlyTable",
            ParseError::ContentOutsideSection { .. } => "ContentOutsideSection",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SerializeError {
    #[error("InvariantViolation: {0}")]
    InvariantViolation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("NotFound: {0}")]
    NotFound(String),
}

/// Classification of a single input line.
#[derive(Debug, Clone, PartialEq)]
pub enum LineKind {
    Blank,
    Comment,
    Header {
        depth: usize,
        name: String,
        comment: Option<String>,
    },
    Kv {
        key: String,
        value: String,
    },
    Row(Vec<String>),
}

pub fn classify_line(line: &str) -> LineKind {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return LineKind::Blank;
    }
    if trimmed.starts_with('#') {
        return LineKind::Comment;
    }
    if let Some(caps) = HEADER_RE.captures(trimmed) {
        let depth = caps[1].len() - ROOT_MARKER_LEN;
        let name = caps.get(2).map_or("", |m| m.as_str()).trim().to_string();
        let comment = caps
            .get(4)
            .map(|m| m.as_str().trim().to_string())
            .filter(|c| !c.is_empty());
        return LineKind::Header {
            depth,
            name,
            comment,
        };
    }
    match kv_split(trimmed) {
        Some(colon) => LineKind::Kv {
            key: trimmed[..colon].trim().to_string(),
            value: unquote_value(trimmed[colon + 1..].trim()).to_string(),
        },
        None => LineKind::Row(split_csv(trimmed)),
    }
}

/// Byte offset of the key/value colon, if the line is a key/value line:
/// the first unquoted ':' must come before any unquoted ','.
fn kv_split(line: &str) -> Option<usize> {
    let mut in_quotes = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_quotes = !in_quotes,
            ':' if !in_quotes => return Some(i),
            ',' if !in_quotes => return None,
            _ => {}
        }
    }
    None
}

fn unquote_value(v: &str) -> &str {
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

fn split_csv(line: &str) -> Vec<String> {
    let mut cells = Vec::new();
    let mut start = 0;
    let mut in_quotes = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => {
                cells.push(unquote_cell(&line[start..i]));
                start = i + 1;
            }
            _ => {}
        }
    }
    cells.push(unquote_cell(&line[start..]));
    cells
}

fn unquote_cell(raw: &str) -> String {
    let t = raw.trim();
    if t.len() >= 2 && t.starts_with('"') && t.ends_with('"') {
        t[1..t.len() - 1].replace("\"\"", "\"")
    } else {
        t.to_string()
    }
}

struct OpenSection {
    section: Section,
    table_line: usize,
}

impl OpenSection {
    fn close(self) -> Result<Section, ParseError> {
        if let Some(table) = &self.section.table {
            if table.rows.is_empty() {
                return Err(ParseError::HeaderOnlyTable {
                    line: self.table_line,
                });
            }
        }
        Ok(self.section)
    }
}

fn attach(stack: &mut [OpenSection], roots: &mut Vec<Section>, section: Section) {
    match stack.last_mut() {
        Some(parent) => parent.section.children.push(section),
        None => roots.push(section),
    }
}

pub fn parse(text: &str) -> Result<MpFileDoc, ParseError> {
    let mut roots: Vec<Section> = Vec::new();
    let mut stack: Vec<OpenSection> = Vec::new();

    for (idx, raw) in text.split('\n').enumerate() {
        let line = idx + 1;
        match classify_line(raw) {
            LineKind::Blank | LineKind::Comment => {}
            LineKind::Header {
                depth,
                name,
                comment,
            } => {
                // the open stack holds one section per level, so its length is
                // the deepest level a new header may open
                let max = stack.len();
                if depth > max {
                    return Err(ParseError::DepthJump {
                        line,
                        found: depth,
                        max,
                    });
                }
                if name.is_empty() {
                    return Err(ParseError::EmptySectionName { line });
                }
                while stack.len() > depth {
                    let closed = stack.pop().expect("non-empty stack").close()?;
                    attach(&mut stack, &mut roots, closed);
                }
                let siblings = match stack.last() {
                    Some(parent) => &parent.section.children,
                    None => &roots,
                };
                if siblings.iter().any(|s| s.name == name) {
                    return Err(ParseError::DuplicateSibling { line, name });
                }
                stack.push(OpenSection {
                    section: Section {
                        name,
                        depth,
                        comment,
                        line,
                        ..Default::default()
                    },
                    table_line: 0,
                });
            }
            LineKind::Kv { key, value } => {
                let open = stack
                    .last_mut()
                    .ok_or(ParseError::ContentOutsideSection { line })?;
                if open.section.table.is_some() {
                    return Err(ParseError::MixedContent { line });
                }
                if open.section.kv.iter().any(|(k, _)| *k == key) {
                    return Err(ParseError::DuplicateKey { line, key });
                }
                open.section.kv.push((key, value));
            }
            LineKind::Row(cells) => {
                let open = stack
                    .last_mut()
                    .ok_or(ParseError::ContentOutsideSection { line })?;
                match &mut open.section.table {
                    None => {
                        open.table_line = line;
                        open.section.table = Some(DataTable::new(cells, Vec::new()));
                    }
                    Some(table) => {
                        if cells.len() != table.columns.len() {
                            return Err(ParseError::RaggedTable {
                                line,
                                expected: table.columns.len(),
                                found: cells.len(),
                            });
                        }
                        table.rows.push(cells.into_iter().map(Cell::Text).collect());
                    }
                }
            }
        }
    }
    while let Some(open) = stack.pop() {
        let closed = open.close()?;
        attach(&mut stack, &mut roots, closed);
    }
    Ok(MpFileDoc { roots })
}

fn violation(msg: impl Into<String>) -> SerializeError {
    SerializeError::InvariantViolation(msg.into())
}

fn check_section(s: &Section, expected_depth: usize) -> Result<(), SerializeError> {
    if s.depth != expected_depth {
        return Err(violation(format!(
            "section '{}' has depth {} but sits at depth {}",
            s.name, s.depth, expected_depth
        )));
    }
    if s.name.is_empty() || s.name.trim() != s.name {
        return Err(violation(format!("section name '{}' is empty or padded", s.name)));
    }
    if s.name.contains(['#', '\n', '\r']) {
        return Err(violation(format!("section name '{}' contains '#' or a newline", s.name)));
    }
    if let Some(c) = &s.comment {
        if c.contains(['\n', '\r']) || c.trim() != c {
            return Err(violation(format!("comment of '{}' is padded or multi-line", s.name)));
        }
    }
    for (i, (k, v)) in s.kv.iter().enumerate() {
        if k.trim() != k
            || k.contains([':', ',', '"', '\n', '\r'])
            || k.starts_with('#')
            || k.starts_with(">>>")
        {
            return Err(violation(format!("key '{k}' cannot be written as a key/value line")));
        }
        if v.contains(['\n', '\r']) {
            return Err(violation(format!("value of key '{k}' spans lines")));
        }
        if s.kv[..i].iter().any(|(prev, _)| prev == k) {
            return Err(violation(format!("duplicate key '{k}' in section '{}'", s.name)));
        }
    }
    if let Some(t) = &s.table {
        if t.columns.is_empty() || t.rows.is_empty() {
            return Err(violation(format!("table in '{}' needs columns and rows", s.name)));
        }
        if let Some(row) = t.rows.iter().find(|r| r.len() != t.columns.len()) {
            return Err(violation(format!(
                "ragged row of {} cells in a {}-column table",
                row.len(),
                t.columns.len()
            )));
        }
        let texts = t.columns.iter().map(String::as_str).map(str::to_string);
        let cells = t.rows.iter().flatten().map(|c| c.to_string());
        if texts.chain(cells).any(|c| c.contains(['\n', '\r'])) {
            return Err(violation("table cell spans lines"));
        }
    }
    for (i, child) in s.children.iter().enumerate() {
        if s.children[..i].iter().any(|c| c.name == child.name) {
            return Err(violation(format!("duplicate sibling '{}'", child.name)));
        }
        check_section(child, expected_depth + 1)?;
    }
    Ok(())
}

fn needs_value_quotes(v: &str) -> bool {
    v.trim() != v || v.starts_with('"')
}

fn needs_cell_quotes(c: &str) -> bool {
    c.is_empty()
        || c.trim() != c
        || c.contains([',', ':', '"'])
        || c.starts_with('#')
        || c.starts_with('>')
}

fn write_cell(out: &mut String, cell: &str) {
    if needs_cell_quotes(cell) {
        out.push('"');
        out.push_str(&cell.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(cell);
    }
}

fn write_row<'a>(out: &mut String, cells: impl Iterator<Item = std::borrow::Cow<'a, str>>) {
    for (i, cell) in cells.enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_cell(out, &cell);
    }
    out.push('\n');
}

fn write_table(out: &mut String, t: &DataTable) {
    write_row(out, t.columns.iter().map(|c| c.as_str().into()));
    for row in &t.rows {
        write_row(
            out,
            row.iter().map(|c| match c {
                Cell::Text(s) => s.as_str().into(),
                Cell::Number(n) => n.to_string().into(),
            }),
        );
    }
}

fn write_section(out: &mut String, s: &Section) {
    out.push_str(&">".repeat(s.depth + ROOT_MARKER_LEN));
    out.push(' ');
    out.push_str(&s.name);
    if let Some(c) = s.comment.as_deref().filter(|c| !c.is_empty()) {
        let _ = write!(out, " # {c}");
    }
    out.push('\n');
    for (k, v) in &s.kv {
        if needs_value_quotes(v) {
            let _ = writeln!(out, "{k}: \"{v}\"");
        } else if v.is_empty() {
            let _ = writeln!(out, "{k}:");
        } else {
            let _ = writeln!(out, "{k}: {v}");
        }
    }
    if let Some(t) = &s.table {
        write_table(out, t);
    }
    for child in &s.children {
        write_section(out, child);
    }
}

/// Canonical text of one section and its descendants, without invariant
/// checks.
pub fn render_section(s: &Section) -> String {
    let mut out = String::new();
    write_section(&mut out, s);
    out
}

/// Writes `doc` in canonical form.
pub fn serialize(doc: &MpFileDoc) -> Result<String, SerializeError> {
    for (i, root) in doc.roots.iter().enumerate() {
        if doc.roots[..i].iter().any(|r| r.name == root.name) {
            return Err(violation(format!("duplicate root section '{}'", root.name)));
        }
        check_section(root, 0)?;
    }
    let mut out = String::new();
    for (i, root) in doc.roots.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write_section(&mut out, root);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathTarget<'a> {
    Section(&'a Section),
    Value(&'a str),
    Table(&'a DataTable),
}

/// Resolves section names level by level; a final key name resolves to its
/// value and a section holding only a table resolves to the table.
pub fn get_path<'a, S: AsRef<str>>(
    doc: &'a MpFileDoc,
    path: &[S],
) -> Result<PathTarget<'a>, PathError> {
    let not_found = || {
        PathError::NotFound(
            path.iter()
                .map(|p| p.as_ref())
                .collect::<Vec<_>>()
                .join(" > "),
        )
    };
    let (first, rest) = path.split_first().ok_or_else(not_found)?;
    let mut current = doc.root(first.as_ref()).ok_or_else(not_found)?;
    for (i, step) in rest.iter().enumerate() {
        let step = step.as_ref();
        if let Some(child) = current.child(step) {
            current = child;
        } else if i + 1 == rest.len() {
            return current
                .value(step)
                .map(PathTarget::Value)
                .ok_or_else(not_found);
        } else {
            return Err(not_found());
        }
    }
    match &current.table {
        Some(t) if current.is_table_only() => Ok(PathTarget::Table(t)),
        _ => Ok(PathTarget::Section(current)),
    }
}
