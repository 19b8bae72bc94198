//! Plain-text rendering for `mgc view`.

use std::fmt::Write;

use indexmap::IndexMap;
use matcontrib_core::builder::{DerivedContribution, DerivedMaterialDoc, PlotSpec};
use matcontrib_core::mpfile::DataTable;
use matcontrib_core::pipeline::{Contribution, HierData, HierValue};

const INDENT: &str = "  ";

pub fn tree(out: &mut String, data: &HierData, depth: usize) {
    for (key, value) in data {
        let pad = INDENT.repeat(depth);
        match value {
            HierValue::Text(v) => {
                let _ = writeln!(out, "{pad}{key}: {v}");
            }
            HierValue::Map(m) => {
                let _ = writeln!(out, "{pad}{key}");
                tree(out, m, depth + 1);
            }
        }
    }
}

/// Columns padded to their widest cell, separated by two spaces.
pub fn table(out: &mut String, t: &DataTable, depth: usize) {
    let mut grid: Vec<Vec<String>> = vec![t.columns.clone()];
    grid.extend(t.rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()));
    let widths: Vec<usize> = (0..t.columns.len())
        .map(|i| grid.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let pad = INDENT.repeat(depth);
    for row in &grid {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{pad}{}", cells.join("  ").trim_end());
    }
}

fn tables(out: &mut String, tables: &IndexMap<String, DataTable>, depth: usize) {
    for (name, t) in tables {
        let _ = writeln!(out, "{}table {name} ({} rows)", INDENT.repeat(depth), t.rows.len());
        table(out, t, depth + 1);
    }
}

fn plot_specs(out: &mut String, plots: &[PlotSpec], depth: usize) {
    if plots.is_empty() {
        return;
    }
    let pad = INDENT.repeat(depth);
    let _ = writeln!(out, "{pad}plots");
    for p in plots {
        let mark = if p.customized { " (customized)" } else { "" };
        let _ = writeln!(
            out,
            "{pad}{INDENT}{}  {}  {}: {} vs {}{mark}",
            p.plot_id,
            p.kind,
            p.table,
            p.y.join(", "),
            p.x
        );
    }
}

pub fn contribution(c: &Contribution) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}  {}  {}  {}  {}",
        c.cid.display(),
        c.title,
        c.material_key(),
        c.project,
        c.visibility
    );
    tree(&mut out, &c.tree, 1);
    tables(&mut out, &c.tables, 1);
    plot_specs(&mut out, &c.plots, 1);
    out
}

fn derived(out: &mut String, c: &DerivedContribution) {
    let _ = writeln!(out, "{INDENT}{}  {}  {}", c.cid.display(), c.title, c.visibility);
    tree(out, &c.tree, 2);
    tables(out, &c.tables, 2);
    if !c.plots.is_empty() {
        let _ = writeln!(out, "{}plots", INDENT.repeat(2));
        for p in &c.plots {
            let url = p.url.as_deref().map(|u| format!("  {u}")).unwrap_or_default();
            let _ = writeln!(out, "{}{}  {}  {}{url}", INDENT.repeat(3), p.plot_id, p.layout.kind, p.layout.title);
        }
    }
    for r in &c.references {
        let shown = r.display.as_deref().unwrap_or(&r.value);
        let _ = writeln!(out, "{}[{}] {shown}", INDENT.repeat(2), r.key);
    }
}

pub fn material(doc: &DerivedMaterialDoc) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}  built {}", doc.material_key, doc.built_at.to_rfc3339());
    for (project, group) in &doc.projects {
        let _ = writeln!(out, "project {project}");
        for c in group {
            derived(&mut out, c);
        }
    }
    out
}
