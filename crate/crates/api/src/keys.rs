//! API key file: one `key = project` pair per line, `#` starts a comment.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyFileError {
    #[error("line {line}: expected `key = project`")]
    Malformed { line: usize },
    #[error("line {line}: key or project is empty")]
    Empty { line: usize },
    #[error("line {line}: key listed twice")]
    DuplicateKey { line: usize },
    #[error("cannot read key file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default)]
pub struct ApiKeys {
    projects: HashMap<String, String>,
}

impl ApiKeys {
    pub fn parse(text: &str) -> Result<ApiKeys, KeyFileError> {
        let mut projects = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, project) = content
                .split_once('=')
                .ok_or(KeyFileError::Malformed { line })?;
            let (key, project) = (key.trim(), project.trim());
            if key.is_empty() || project.is_empty() {
                return Err(KeyFileError::Empty { line });
            }
            if projects.insert(key.to_string(), project.to_string()).is_some() {
                return Err(KeyFileError::DuplicateKey { line });
            }
        }
        Ok(ApiKeys { projects })
    }

    pub fn load(path: &Path) -> Result<ApiKeys, KeyFileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KeyFileError::Io(format!("{}: {e}", path.display())))?;
        ApiKeys::parse(&text)
    }

    pub fn from_pairs<K: Into<String>, P: Into<String>>(pairs: impl IntoIterator<Item = (K, P)>) -> ApiKeys {
        ApiKeys {
            projects: pairs.into_iter().map(|(k, p)| (k.into(), p.into())).collect(),
        }
    }

    pub fn project(&self, key: &str) -> Option<&str> {
        self.projects.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.projects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projects.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let keys = ApiKeys::parse("# keys\nabc = demo\n\n  k2=other # trailing\n").unwrap();
        assert_eq!(keys.len(), 2);
        assert_eq!(keys.project("abc"), Some("demo"));
        assert_eq!(keys.project("k2"), Some("other"));
        assert_eq!(keys.project("nope"), None);
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(ApiKeys::parse("abc").unwrap_err(), KeyFileError::Malformed { line: 1 });
        assert_eq!(ApiKeys::parse("\na =").unwrap_err(), KeyFileError::Empty { line: 2 });
        assert_eq!(
            ApiKeys::parse("a = x\na = y").unwrap_err(),
            KeyFileError::DuplicateKey { line: 2 }
        );
    }
}
