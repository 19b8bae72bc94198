//! The reserved `references` section: url, doi and bibtex entries.
//!
//! References are validated at submission time and resolved into display
//! strings when a material is built. Resolution never fails a build; a
//! reference that cannot be resolved keeps `display` empty and carries a
//! warning instead.

use std::sync::{Arc, Condvar, LazyLock, Mutex};
use std::time::Duration;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{HierData, HierValue};

pub const REFERENCES: &str = "references";
pub const DEFAULT_DOI_RESOLVER: &str = "https://doi.org";
/// Media type asking a DOI resolver for a formatted citation.
pub const BIBLIOGRAPHY_MEDIA_TYPE: &str = "text/x-bibliography";
pub const RESOLVE_TIMEOUT: Duration = Duration::from_secs(5);
pub const MAX_REQUESTS_PER_HOST: usize = 4;

static DOI_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^10\.\d{4,9}/\S+$").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    Url,
    Doi,
    Bibtex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub key: String,
    pub kind: ReferenceKind,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RefError {
    #[error("UnknownReferenceKind: key '{0}' is not a url, doi or bibtex entry")]
    UnknownReferenceKind(String),
    #[error("MalformedUrl: '{0}' is not an absolute url")]
    MalformedUrl(String),
    #[error("MalformedDoi: '{0}' is not a DOI")]
    MalformedDoi(String),
    #[error("MalformedReference: '{0}' must be a key/value entry")]
    MalformedReference(String),
}

impl RefError {
    pub fn code(&self) -> &'static str {
        match self {
            RefError::UnknownReferenceKind(_) => "UnknownReferenceKind",
            RefError::MalformedUrl(_) => "MalformedUrl",
            RefError::MalformedDoi(_) => "MalformedDoi",
            RefError::MalformedReference(_) => "MalformedReference",
        }
    }
}

fn kind_of(key: &str) -> Result<ReferenceKind, RefError> {
    let prefix = key.split('-').next().unwrap_or(key);
    match prefix {
        "url" => Ok(ReferenceKind::Url),
        "doi" => Ok(ReferenceKind::Doi),
        "bibtex" => Ok(ReferenceKind::Bibtex),
        _ => Err(RefError::UnknownReferenceKind(key.to_string())),
    }
}

/// Reads the `references` subtree of a contribution, in entry order.
pub fn extract_references(tree: &HierData) -> Result<Vec<Reference>, RefError> {
    let Some(section) = tree.get(REFERENCES) else {
        return Ok(Vec::new());
    };
    let HierValue::Map(entries) = section else {
        return Err(RefError::MalformedReference(REFERENCES.to_string()));
    };
    let mut out = Vec::with_capacity(entries.len());
    for (key, value) in entries {
        let HierValue::Text(value) = value else {
            return Err(RefError::MalformedReference(key.clone()));
        };
        let kind = kind_of(key)?;
        match kind {
            ReferenceKind::Url => {
                url::Url::parse(value).map_err(|_| RefError::MalformedUrl(value.clone()))?;
            }
            ReferenceKind::Doi if !DOI_RE.is_match(value) => {
                return Err(RefError::MalformedDoi(value.clone()));
            }
            _ => {}
        }
        out.push(Reference {
            key: key.clone(),
            kind,
            value: value.clone(),
            display: None,
            warning: None,
        });
    }
    Ok(out)
}

/// Field map of a single BibTeX entry. Only braced or quoted values and
/// top-level commas are understood; braces inside values are dropped.
pub fn parse_bibtex(entry: &str) -> Option<IndexMap<String, String>> {
    let body_start = entry.find('{')?;
    let body_end = entry.rfind('}')?;
    if !entry[..body_start].trim_start().starts_with('@') || body_end <= body_start {
        return None;
    }
    let body = &entry[body_start + 1..body_end];

    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut in_quotes = false;
    let mut start = 0;
    for (i, ch) in body.char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => depth -= 1,
            '"' if depth == 0 => in_quotes = !in_quotes,
            ',' if depth == 0 && !in_quotes => {
                parts.push(&body[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&body[start..]);

    let mut fields = IndexMap::new();
    // the first part is the citation key
    for part in parts.iter().skip(1) {
        let Some((name, value)) = part.split_once('=') else {
            continue;
        };
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        let value: String = value.chars().filter(|c| *c != '{' && *c != '}').collect();
        fields.insert(name.trim().to_ascii_lowercase(), value.trim().to_string());
    }
    Some(fields)
}

/// "Author. Title (Year)", omitting missing parts.
pub fn format_citation(fields: &IndexMap<String, String>) -> Option<String> {
    let mut out = String::new();
    if let Some(author) = fields.get("author").filter(|a| !a.is_empty()) {
        out.push_str(author);
        if !author.ends_with('.') {
            out.push('.');
        }
    }
    if let Some(title) = fields.get("title").filter(|t| !t.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(title);
    }
    if let Some(year) = fields.get("year").filter(|y| !y.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push('(');
        out.push_str(year);
        out.push(')');
    }
    (!out.is_empty()).then_some(out)
}

/// Something that turns a DOI into a formatted citation.
pub trait CitationSource: Send + Sync {
    fn fetch(&self, doi: &str) -> Result<String, String>;
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn new(limit: usize) -> Self {
        Gate {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            limit,
        }
    }

    fn enter(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// DOI content negotiation over HTTP.
pub struct HttpCitationSource {
    base_url: String,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpCitationSource {
    pub fn new(base_url: impl Into<String>) -> Result<Self, reqwest::Error> {
        let client = reqwest::blocking::Client::builder()
            .timeout(RESOLVE_TIMEOUT)
            .build()?;
        Ok(HttpCitationSource {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client,
            gate: Gate::new(MAX_REQUESTS_PER_HOST),
        })
    }
}

impl CitationSource for HttpCitationSource {
    fn fetch(&self, doi: &str) -> Result<String, String> {
        let _slot = self.gate.enter();
        let resp = self
            .client
            .get(format!("{}/{}", self.base_url, doi))
            .header(reqwest::header::ACCEPT, BIBLIOGRAPHY_MEDIA_TYPE)
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("resolver answered {}", resp.status()));
        }
        let text = resp.text().map_err(|e| e.to_string())?;
        let text = text.trim();
        if text.is_empty() {
            Err("empty citation".to_string())
        } else {
            Ok(text.to_string())
        }
    }
}

#[derive(Clone, Default)]
pub struct Resolver {
    source: Option<Arc<dyn CitationSource>>,
}

impl Resolver {
    /// A resolver that never goes online.
    pub fn offline() -> Self {
        Resolver { source: None }
    }

    pub fn online(source: Arc<dyn CitationSource>) -> Self {
        Resolver {
            source: Some(source),
        }
    }

    pub fn is_online(&self) -> bool {
        self.source.is_some()
    }

    pub fn resolve(&self, r: &Reference) -> Reference {
        let mut out = r.clone();
        if r.display.is_some() {
            return out;
        }
        out.warning = None;
        match r.kind {
            ReferenceKind::Url => out.display = Some(r.value.clone()),
            ReferenceKind::Bibtex => {
                match parse_bibtex(&r.value).and_then(|f| format_citation(&f)) {
                    Some(c) => out.display = Some(c),
                    None => out.warning = Some("bibtex entry has no author, title or year".into()),
                }
            }
            ReferenceKind::Doi => match &self.source {
                None => out.warning = Some("offline: DOI not resolved".into()),
                Some(source) => match source.fetch(&r.value) {
                    Ok(c) => out.display = Some(c),
                    Err(e) => out.warning = Some(format!("DOI not resolved: {e}")),
                },
            },
        }
        out
    }

    /// Resolves a contribution's references. A DOI that also appears as the
    /// `doi` field of a manual bibtex entry takes the bibtex citation.
    pub fn resolve_all(&self, refs: &[Reference]) -> Vec<Reference> {
        let mut manual: IndexMap<String, String> = IndexMap::new();
        for r in refs.iter().filter(|r| r.kind == ReferenceKind::Bibtex) {
            if let Some(fields) = parse_bibtex(&r.value) {
                if let (Some(doi), Some(c)) = (fields.get("doi"), format_citation(&fields)) {
                    manual.insert(doi.to_ascii_lowercase(), c);
                }
            }
        }
        refs.iter()
            .map(|r| match manual.get(&r.value.to_ascii_lowercase()) {
                Some(c) if r.kind == ReferenceKind::Doi && r.display.is_none() => Reference {
                    display: Some(c.clone()),
                    warning: None,
                    ..r.clone()
                },
                _ => self.resolve(r),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn refs_tree(pairs: &[(&str, &str)]) -> HierData {
        let entries: HierData = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), HierValue::Text(v.to_string())))
            .collect();
        [(REFERENCES.to_string(), HierValue::Map(entries))]
            .into_iter()
            .collect()
    }

    #[test]
    fn extracts_in_order() {
        let tree = refs_tree(&[
            ("url-1", "https://en.wikipedia.org/wiki/Caesium"),
            ("url-2", "http://education.jlab.org/itselemental/ele055.html"),
            ("doi", "10.1109/eScience.2015.10"),
        ]);
        let refs = extract_references(&tree).unwrap();
        let kinds: Vec<_> = refs.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, [ReferenceKind::Url, ReferenceKind::Url, ReferenceKind::Doi]);
        assert_eq!(refs[1].value, "http://education.jlab.org/itselemental/ele055.html");
        assert!(extract_references(&HierData::new()).unwrap().is_empty());
    }

    #[test]
    fn extract_errors() {
        assert_eq!(
            extract_references(&refs_tree(&[("isbn-1", "123")])),
            Err(RefError::UnknownReferenceKind("isbn-1".into()))
        );
        assert!(matches!(
            extract_references(&refs_tree(&[("url", "not a url")])),
            Err(RefError::MalformedUrl(_))
        ));
        assert!(matches!(
            extract_references(&refs_tree(&[("doi-1", "11.1/x")])),
            Err(RefError::MalformedDoi(_))
        ));
    }

    // Independent reading of the literal: pull braced fields with a regex.
    fn oracle_citation(entry: &str) -> String {
        let re = Regex::new(r"(\w+)\s*=\s*\{([^{}]*)\}").unwrap();
        let field = |name: &str| {
            re.captures_iter(entry)
                .find(|c| &c[1] == name)
                .map(|c| c[2].to_string())
                .unwrap()
        };
        let author = field("author");
        let sep = if author.ends_with('.') { " " } else { ". " };
        format!("{author}{sep}{} ({})", field("title"), field("year"))
    }

    #[test]
    fn bibtex_display() {
        let entry = "@article{x, author={Doe, J.}, title={T}, year={2015}}";
        let expected = oracle_citation(entry);
        assert_eq!(expected, "Doe, J. T (2015)");
        let r = Reference {
            key: "bibtex".into(),
            kind: ReferenceKind::Bibtex,
            value: entry.into(),
            display: None,
            warning: None,
        };
        assert_eq!(Resolver::offline().resolve(&r).display.as_deref(), Some(expected.as_str()));
    }

    #[test]
    fn bibtex_parsing_details() {
        let f = parse_bibtex("@book{k,\n  title = \"A {Nested} Title\",\n  year = 1999 }").unwrap();
        assert_eq!(f["title"], "A Nested Title");
        assert_eq!(f["year"], "1999");
        assert!(parse_bibtex("no entry here").is_none());
        assert_eq!(format_citation(&f).unwrap(), "A Nested Title (1999)");
    }

    #[test]
    fn url_and_offline_doi() {
        let url = extract_references(&refs_tree(&[("url", "https://example.org/a")])).unwrap();
        let r = Resolver::offline().resolve(&url[0]);
        assert_eq!(r.display.as_deref(), Some("https://example.org/a"));

        let doi = extract_references(&refs_tree(&[("doi", "10.1000/182")])).unwrap();
        let r = Resolver::offline().resolve(&doi[0]);
        assert!(r.display.is_none());
        assert!(r.warning.is_some());
    }

    struct Counting(AtomicUsize);

    impl CitationSource for Counting {
        fn fetch(&self, doi: &str) -> Result<String, String> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(format!("cited {doi}"))
        }
    }

    struct Failing;

    impl CitationSource for Failing {
        fn fetch(&self, _: &str) -> Result<String, String> {
            Err("connection refused".into())
        }
    }

    #[test]
    fn resolve_is_idempotent() {
        let source = Arc::new(Counting(AtomicUsize::new(0)));
        let resolver = Resolver::online(source.clone());
        let refs = extract_references(&refs_tree(&[
            ("doi", "10.1000/182"),
            ("url", "https://example.org"),
            ("bibtex", "@misc{k, title={T}}"),
        ]))
        .unwrap();
        for r in &refs {
            let once = resolver.resolve(r);
            assert_eq!(resolver.resolve(&once), once);
        }
        assert_eq!(source.0.load(Ordering::SeqCst), 1);
        let failing = Resolver::online(Arc::new(Failing));
        let once = failing.resolve(&refs[0]);
        assert!(once.warning.as_deref().unwrap().contains("connection refused"));
        assert_eq!(failing.resolve(&once), once);
        assert_eq!(Resolver::offline().resolve(&Resolver::offline().resolve(&refs[0])), Resolver::offline().resolve(&refs[0]));
    }

    #[test]
    fn manual_bibtex_wins_over_doi_lookup() {
        let source = Arc::new(Counting(AtomicUsize::new(0)));
        let refs = extract_references(&refs_tree(&[
            ("doi", "10.1000/182"),
            ("bibtex", "@article{k, author={Roe, R}, title={Manual}, year={2001}, doi={10.1000/182}}"),
        ]))
        .unwrap();
        let out = Resolver::online(source.clone()).resolve_all(&refs);
        assert_eq!(out[0].display.as_deref(), Some("Roe, R. Manual (2001)"));
        assert_eq!(source.0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn gate_caps_concurrency() {
        let gate = Arc::new(Gate::new(MAX_REQUESTS_PER_HOST));
        let peak = Arc::new(AtomicUsize::new(0));
        let current = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..16)
            .map(|_| {
                let (gate, peak, current) = (gate.clone(), peak.clone(), current.clone());
                std::thread::spawn(move || {
                    let _g = gate.enter();
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    current.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= MAX_REQUESTS_PER_HOST);
    }
}
