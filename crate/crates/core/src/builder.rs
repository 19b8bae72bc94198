//! Plot generation and per-material aggregation.
//!
//! Every table with at least one numeric column besides the first gets a
//! default line plot of the remaining numeric columns against the first.
//! Children of the reserved `plots` section adjust those defaults (a name
//! starting with `default`) or request extra plots (any other name).
//! [`build_material`] groups all contributions for one material by project
//! and renders their plots into [`PlotDocument`]s.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mpfile::{Cell, DataTable};
use crate::pipeline::{Cid, Contribution, HierData, HierValue, Visibility};
use crate::refs::{extract_references, Reference, Resolver};

pub const PLOTS: &str = "plots";
/// Name prefix marking a `plots` child as an override of a default plot.
pub const OVERRIDE_PREFIX: &str = "default";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    #[default]
    Line,
    Bar,
    Scatter,
}

impl FromStr for PlotKind {
    type Err = PlotError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "line" => Ok(PlotKind::Line),
            "bar" => Ok(PlotKind::Bar),
            "scatter" => Ok(PlotKind::Scatter),
            other => Err(PlotError::UnknownKind(other.to_string())),
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlotKind::Line => "line",
            PlotKind::Bar => "bar",
            PlotKind::Scatter => "scatter",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotLayout {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub kind: PlotKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub plot_id: String,
    pub name: String,
    pub table: String,
    pub x: String,
    pub y: Vec<String>,
    pub kind: PlotKind,
    pub is_default: bool,
    #[serde(default)]
    pub customized: bool,
    /// Layout set by the contributor; survives rebuilds and resubmissions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_layout: Option<PlotLayout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x: Vec<Cell>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotDocument {
    pub plot_id: String,
    pub layout: PlotLayout,
    pub series: Vec<Series>,
    pub source_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedContribution {
    pub cid: Cid,
    pub title: String,
    pub visibility: Visibility,
    pub content_hash: String,
    pub tree: HierData,
    pub tables: IndexMap<String, DataTable>,
    pub plots: Vec<PlotDocument>,
    pub references: Vec<Reference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedMaterialDoc {
    pub material_key: String,
    pub projects: IndexMap<String, Vec<DerivedContribution>>,
    pub built_at: DateTime<Utc>,
}

impl DerivedMaterialDoc {
    pub fn contributions(&self) -> impl Iterator<Item = &DerivedContribution> {
        self.projects.values().flatten()
    }

    pub fn find(&self, cid: &Cid) -> Option<&DerivedContribution> {
        self.contributions().find(|c| &c.cid == cid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlotError {
    #[error("UnknownTable: plot '{plot}' refers to missing table '{table}'")]
    UnknownTable { plot: String, table: String },
    #[error("UnknownColumn: plot '{plot}' refers to missing column '{column}'")]
    UnknownColumn { plot: String, column: String },
    #[error("UnknownKind: '{0}' is not one of line, bar, scatter")]
    UnknownKind(String),
    #[error("MissingTable: plot '{0}' needs a 'table' key")]
    MissingTable(String),
    #[error("InvalidPlot: {0}")]
    InvalidPlot(String),
    #[error("NonNumericSeries: column '{column}' of plot '{plot}' holds text")]
    NonNumericSeries { plot: String, column: String },
}

impl PlotError {
    pub fn code(&self) -> &'static str {
        match self {
            PlotError::UnknownTable { .. } => "UnknownTable",
            PlotError::UnknownColumn { .. } => "UnknownColumn",
            PlotError::UnknownKind(_) => "UnknownKind",
            PlotError::MissingTable(_) => "MissingTable",
            PlotError::InvalidPlot(_) => "InvalidPlot",
            PlotError::NonNumericSeries { .. } => "NonNumericSeries",
        }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("KeyMismatch: contribution {cid} belongs to '{found}', not '{expected}'")]
    KeyMismatch {
        cid: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error(transparent)]
    Reference(#[from] crate::refs::RefError),
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

fn numeric_column(table: &DataTable, idx: usize) -> bool {
    table.column(idx).all(Cell::is_number)
}

fn numeric_columns_except(table: &DataTable, x: &str) -> Vec<String> {
    table
        .columns
        .iter()
        .enumerate()
        .filter(|(i, c)| c.as_str() != x && numeric_column(table, *i))
        .map(|(_, c)| c.clone())
        .collect()
}

/// Default line plots: first column against every other numeric column.
pub fn default_plots(tables: &IndexMap<String, DataTable>) -> Vec<PlotSpec> {
    tables
        .iter()
        .filter(|(_, t)| t.columns.len() >= 2)
        .filter_map(|(name, t)| {
            let x = t.columns[0].clone();
            let y: Vec<String> = (1..t.columns.len())
                .filter(|&i| numeric_column(t, i))
                .map(|i| t.columns[i].clone())
                .collect();
            (!y.is_empty()).then(|| PlotSpec {
                plot_id: format!("{OVERRIDE_PREFIX}-{}", slug(name)),
                name: format!("{OVERRIDE_PREFIX} {name}"),
                table: name.clone(),
                x,
                y,
                kind: PlotKind::Line,
                is_default: true,
                customized: false,
                custom_layout: None,
            })
        })
        .collect()
}

fn text_field<'a>(plot: &str, fields: &'a HierData, key: &str) -> Result<Option<&'a str>, PlotError> {
    match fields.get(key) {
        None => Ok(None),
        Some(HierValue::Text(s)) => Ok(Some(s.trim())),
        Some(HierValue::Map(_)) => Err(PlotError::InvalidPlot(format!(
            "'{key}' of plot '{plot}' must be a value, not a section"
        ))),
    }
}

fn check_spec(spec: &PlotSpec, table: &DataTable) -> Result<(), PlotError> {
    for column in std::iter::once(&spec.x).chain(&spec.y) {
        if table.column_index(column).is_none() {
            return Err(PlotError::UnknownColumn {
                plot: spec.name.clone(),
                column: column.clone(),
            });
        }
    }
    if spec.y.is_empty() {
        return Err(PlotError::InvalidPlot(format!("plot '{}' has no y column", spec.name)));
    }
    if spec.y.contains(&spec.x) {
        return Err(PlotError::InvalidPlot(format!(
            "plot '{}' uses '{}' on both axes",
            spec.name, spec.x
        )));
    }
    Ok(())
}

fn unique_id(base: String, taken: &[PlotSpec]) -> String {
    if !taken.iter().any(|s| s.plot_id == base) {
        return base;
    }
    (2..)
        .map(|n| format!("{base}-{n}"))
        .find(|id| !taken.iter().any(|s| &s.plot_id == id))
        .expect("unbounded suffixes")
}

/// Applies the children of a `plots` section to the default specs.
pub fn apply_overrides(
    defaults: Vec<PlotSpec>,
    plots_section: Option<&HierData>,
    tables: &IndexMap<String, DataTable>,
) -> Result<Vec<PlotSpec>, PlotError> {
    let mut specs = defaults;
    let Some(section) = plots_section else {
        return Ok(specs);
    };
    for (name, value) in section {
        let HierValue::Map(fields) = value else {
            return Err(PlotError::InvalidPlot(format!(
                "'{name}' in the plots section must be a subsection"
            )));
        };
        let table_name =
            text_field(name, fields, "table")?.ok_or_else(|| PlotError::MissingTable(name.clone()))?;
        let table = tables.get(table_name).ok_or_else(|| PlotError::UnknownTable {
            plot: name.clone(),
            table: table_name.to_string(),
        })?;
        let x = text_field(name, fields, "x")?;
        let y = text_field(name, fields, "y")?.map(|y| {
            y.split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect::<Vec<_>>()
        });
        let kind = text_field(name, fields, "kind")?.map(PlotKind::from_str).transpose()?;

        let is_override = name.starts_with(OVERRIDE_PREFIX);
        let existing = specs
            .iter()
            .position(|s| is_override && s.is_default && s.table == table_name);
        let mut spec = match existing {
            Some(i) => specs[i].clone(),
            None => {
                let base_id = if is_override {
                    format!("{OVERRIDE_PREFIX}-{}", slug(table_name))
                } else {
                    slug(name)
                };
                PlotSpec {
                    plot_id: unique_id(base_id, &specs),
                    name: if is_override {
                        format!("{OVERRIDE_PREFIX} {table_name}")
                    } else {
                        name.clone()
                    },
                    table: table_name.to_string(),
                    x: table.columns[0].clone(),
                    y: Vec::new(),
                    kind: PlotKind::Line,
                    is_default: is_override,
                    customized: false,
                    custom_layout: None,
                }
            }
        };
        if let Some(x) = x {
            spec.x = x.to_string();
        }
        match y {
            Some(y) => spec.y = y,
            None if x.is_some() || spec.y.is_empty() => {
                spec.y = numeric_columns_except(table, &spec.x);
            }
            None => {}
        }
        if let Some(kind) = kind {
            spec.kind = kind;
        }
        check_spec(&spec, table)?;
        match existing {
            Some(i) => specs[i] = spec,
            None => specs.push(spec),
        }
    }
    Ok(specs)
}

/// Default specs with the contribution's `plots` section applied.
pub fn plot_specs(
    tree: &HierData,
    tables: &IndexMap<String, DataTable>,
) -> Result<Vec<PlotSpec>, PlotError> {
    let section = match tree.get(PLOTS) {
        None => None,
        Some(HierValue::Map(m)) => Some(m),
        Some(HierValue::Text(_)) => {
            return Err(PlotError::InvalidPlot("'plots' must be a section".into()))
        }
    };
    apply_overrides(default_plots(tables), section, tables)
}

pub fn table_hash(table: &DataTable) -> String {
    hex::encode(Sha256::digest(table.to_csv().as_bytes()))
}

pub fn default_layout(spec: &PlotSpec) -> PlotLayout {
    PlotLayout {
        title: if spec.is_default {
            spec.table.clone()
        } else {
            spec.name.clone()
        },
        x_label: spec.x.clone(),
        y_label: spec.y.join(", "),
        kind: spec.kind,
    }
}

pub fn render_plot(spec: &PlotSpec, table: &DataTable) -> Result<PlotDocument, PlotError> {
    check_spec(spec, table)?;
    let xi = table.column_index(&spec.x).expect("checked");
    let x: Vec<Cell> = table.column(xi).cloned().collect();
    if spec.kind != PlotKind::Bar && !x.iter().all(Cell::is_number) {
        return Err(PlotError::NonNumericSeries {
            plot: spec.name.clone(),
            column: spec.x.clone(),
        });
    }
    let mut series = Vec::with_capacity(spec.y.len());
    for column in &spec.y {
        let yi = table.column_index(column).expect("checked");
        let y = table
            .column(yi)
            .map(Cell::as_number)
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| PlotError::NonNumericSeries {
                plot: spec.name.clone(),
                column: column.clone(),
            })?;
        series.push(Series {
            name: column.clone(),
            x: x.clone(),
            y,
        });
    }
    Ok(PlotDocument {
        plot_id: spec.plot_id.clone(),
        layout: spec.custom_layout.clone().unwrap_or_else(|| default_layout(spec)),
        series,
        source_hash: table_hash(table),
        url: None,
    })
}

/// External plotting service: receives a rendered plot, returns a URL.
pub trait PlotPublisher: Send + Sync {
    fn publish(&self, spec: &PlotSpec, doc: &PlotDocument) -> Result<String, String>;
}

/// Posts `{spec, document}` as JSON and expects `{"url": ...}` back.
pub struct HttpPlotPublisher {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpPlotPublisher {
    pub fn new(endpoint: impl Into<String>) -> Result<Self, reqwest::Error> {
        Ok(HttpPlotPublisher {
            endpoint: endpoint.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(10))
                .build()?,
        })
    }
}

#[derive(Deserialize)]
struct PublishReply {
    url: String,
}

impl PlotPublisher for HttpPlotPublisher {
    fn publish(&self, spec: &PlotSpec, doc: &PlotDocument) -> Result<String, String> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "spec": spec, "document": doc }))
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("plot service answered {}", resp.status()));
        }
        resp.json::<PublishReply>()
            .map(|r| r.url)
            .map_err(|e| e.to_string())
    }
}

#[derive(Clone, Default)]
pub struct BuildContext<'a> {
    pub resolver: Resolver,
    pub publisher: Option<&'a dyn PlotPublisher>,
}

fn render_contribution(
    c: &Contribution,
    previous: Option<&DerivedContribution>,
    ctx: &BuildContext<'_>,
) -> Result<DerivedContribution, BuildError> {
    let mut plots = Vec::with_capacity(c.plots.len());
    for spec in &c.plots {
        let table = c.tables.get(&spec.table).ok_or_else(|| PlotError::UnknownTable {
            plot: spec.name.clone(),
            table: spec.table.clone(),
        })?;
        let mut doc = render_plot(spec, table)?;
        let before = previous.and_then(|p| p.plots.iter().find(|d| d.plot_id == spec.plot_id));
        if let Some(before) = before {
            if spec.customized && spec.custom_layout.is_none() {
                doc.layout = before.layout.clone();
            }
            if before.source_hash == doc.source_hash && before.layout == doc.layout {
                doc.url = before.url.clone();
            }
        }
        if doc.url.is_none() {
            if let Some(publisher) = ctx.publisher {
                doc.url = publisher.publish(spec, &doc).ok();
            }
        }
        plots.push(doc);
    }
    let references = extract_references(&c.tree)?;
    let references = match previous {
        // keep earlier resolutions; resolution is cached in the derived doc
        Some(p) if p.content_hash == c.content_hash => {
            let cached = p.references.clone();
            ctx.resolver.resolve_all(&cached)
        }
        _ => ctx.resolver.resolve_all(&references),
    };
    Ok(DerivedContribution {
        cid: c.cid.clone(),
        title: c.title.clone(),
        visibility: c.visibility,
        content_hash: c.content_hash.clone(),
        tree: c.tree.clone(),
        tables: c.tables.clone(),
        plots,
        references,
    })
}

/// Aggregates every contribution for `key`. Returns `None` when there is
/// nothing to aggregate, meaning the derived document should be removed.
pub fn build_material(
    key: &str,
    contributions: &[Contribution],
    previous: Option<&DerivedMaterialDoc>,
    ctx: &BuildContext<'_>,
    built_at: DateTime<Utc>,
) -> Result<Option<DerivedMaterialDoc>, BuildError> {
    if let Some(c) = contributions.iter().find(|c| c.material_key() != key) {
        return Err(BuildError::KeyMismatch {
            cid: c.cid.to_string(),
            expected: key.to_string(),
            found: c.material_key(),
        });
    }
    if contributions.is_empty() {
        return Ok(None);
    }
    let mut projects: IndexMap<String, Vec<DerivedContribution>> = IndexMap::new();
    for c in contributions {
        let group = projects.entry(c.project.clone()).or_default();
        if group.iter().any(|d| d.cid == c.cid) {
            continue;
        }
        let before = previous.and_then(|p| p.find(&c.cid));
        group.push(render_contribution(c, before, ctx)?);
    }
    Ok(Some(DerivedMaterialDoc {
        material_key: key.to_string(),
        projects,
        built_at,
    }))
}
