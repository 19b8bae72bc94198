//! Writes server-assigned cids back into the submitted file.
//!
//! Each material root gets a `cid: <hex>` line directly under its header,
//! or has its existing root-level `cid` line replaced. Nothing else in the
//! file changes, including comments and line endings.

use matcontrib_core::mpfile::{classify_line, parse, LineKind, ParseError};
use matcontrib_core::pipeline::{Cid, CID_KEY, GENERAL};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("file has {roots} material sections but {cids} ids were returned")]
    CountMismatch { roots: usize, cids: usize },
}

/// 1-based header lines of the roots that become contributions.
fn material_roots(text: &str) -> Result<Vec<usize>, ParseError> {
    let doc = parse(text)?;
    let skip = usize::from(doc.roots.first().is_some_and(|r| r.name == GENERAL));
    Ok(doc.roots.iter().skip(skip).map(|r| r.line).collect())
}

/// Index of the root-level `cid` line belonging to the header at `header`,
/// scanning the key/value block that follows it.
fn existing_cid_line(lines: &[&str], header: usize) -> Option<usize> {
    for (i, line) in lines.iter().enumerate().skip(header + 1) {
        match classify_line(line) {
            LineKind::Blank | LineKind::Comment => continue,
            LineKind::Kv { key, .. } if key == CID_KEY => return Some(i),
            LineKind::Kv { .. } => continue,
            LineKind::Header { .. } | LineKind::Row(_) => return None,
        }
    }
    None
}

fn terminator(line: &str) -> &str {
    if line.ends_with("\r\n") {
        "\r\n"
    } else {
        "\n"
    }
}

pub fn embed_cids(text: &str, cids: &[Cid]) -> Result<String, EmbedError> {
    let roots = material_roots(text)?;
    if roots.len() != cids.len() {
        return Err(EmbedError::CountMismatch {
            roots: roots.len(),
            cids: cids.len(),
        });
    }
    let mut lines: Vec<String> = text.split_inclusive('\n').map(str::to_string).collect();
    // Work bottom-up so earlier line indices stay valid after insertions.
    for (header_line, cid) in roots.iter().zip(cids).rev() {
        let header = header_line - 1;
        let view: Vec<&str> = lines.iter().map(String::as_str).collect();
        let eol = terminator(view[header]).to_string();
        let entry = format!("{CID_KEY}: {}", cid.as_str());
        match existing_cid_line(&view, header) {
            Some(i) => {
                let end = if lines[i].ends_with('\n') { terminator(&lines[i]).to_string() } else { String::new() };
                let indent: String = lines[i].chars().take_while(|c| c.is_whitespace()).collect();
                lines[i] = format!("{indent}{entry}{end}");
            }
            None => {
                if !lines[header].ends_with('\n') {
                    lines[header].push_str(&eol);
                }
                lines.insert(header + 1, format!("{entry}{eol}"));
            }
        }
    }
    Ok(lines.concat())
}
