//! File-backed record store.
//!
//! Layout under the data directory:
//!
//! ```text
//! contributions/<cid>.json      one record per contribution
//! contributions/index.log       append-only log of puts and deletes
//! derived/<material-key>.json   one record per derived material document
//! derived/index.log
//! ```
//!
//! A record is `{collection, id, version, checksum, body}` where `checksum`
//! is the SHA-256 of the exact body bytes. Writes go to a temporary file
//! that is synced and then renamed over the record, so a crash leaves
//! either the old or the new record on disk. Record files are the source
//! of truth; the index log is rebuilt on open when it is missing or torn.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::builder::DerivedMaterialDoc;
use crate::pipeline::{lookup, Cid, Contribution, Visibility};

const RECORD_EXT: &str = "json";
const TMP_EXT: &str = "tmp";
const INDEX_FILE: &str = "index.log";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("NotFound: {0}")]
    NotFound(String),
    #[error("Corrupt: record '{id}' failed verification: {reason}")]
    Corrupt { id: String, reason: String },
    #[error("EmptyFilter: a query needs at least one filter field")]
    EmptyFilter,
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectionName {
    Contributions,
    Derived,
}

impl CollectionName {
    fn dir(self) -> &'static str {
        match self {
            CollectionName::Contributions => "contributions",
            CollectionName::Derived => "derived",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RecordFile<'a> {
    collection: CollectionName,
    id: String,
    version: u64,
    checksum: String,
    #[serde(borrow)]
    body: &'a RawValue,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    op: IndexOp,
    id: String,
    version: u64,
}

#[derive(Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum IndexOp {
    Put,
    Delete,
}

enum Slot<T> {
    Live { version: u64, body: Arc<T> },
    Corrupt(String),
}

impl<T> Clone for Slot<T> {
    fn clone(&self) -> Self {
        match self {
            Slot::Live { version, body } => Slot::Live {
                version: *version,
                body: body.clone(),
            },
            Slot::Corrupt(r) => Slot::Corrupt(r.clone()),
        }
    }
}

fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// File name for a record id; anything outside `[A-Za-z0-9_.-]` is escaped
/// as `%XX` so material keys like `Fe*-O*` are safe on every filesystem.
fn file_stem(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn id_from_stem(stem: &str) -> Option<String> {
    let bytes = stem.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = stem.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

/// Writes `bytes` to `path` through a synced temporary file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(TMP_EXT);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        sync_dir(path.parent().unwrap_or(Path::new(".")))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

struct Collection<T> {
    name: CollectionName,
    dir: PathBuf,
    records: RwLock<BTreeMap<String, Slot<T>>>,
    writer: Mutex<()>,
    _body: PhantomData<T>,
}

impl<T: Serialize + DeserializeOwned> Collection<T> {
    fn open(root: &Path, name: CollectionName) -> Result<Self, StoreError> {
        let dir = root.join(name.dir());
        fs::create_dir_all(&dir)?;
        let mut records = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            match path.extension().and_then(|e| e.to_str()) {
                // leftovers of an interrupted write; the rename never happened
                Some(TMP_EXT) => fs::remove_file(&path)?,
                Some(RECORD_EXT) => {
                    let Some(id) = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .and_then(id_from_stem)
                    else {
                        continue;
                    };
                    let slot = match Self::read_record(name, &id, &path) {
                        Ok((version, body)) => Slot::Live {
                            version,
                            body: Arc::new(body),
                        },
                        Err(reason) => Slot::Corrupt(reason),
                    };
                    records.insert(id, slot);
                }
                _ => {}
            }
        }
        let collection = Collection {
            name,
            dir,
            records: RwLock::new(records),
            writer: Mutex::new(()),
            _body: PhantomData,
        };
        collection.reconcile_index()?;
        Ok(collection)
    }

    fn read_record(name: CollectionName, id: &str, path: &Path) -> Result<(u64, T), String> {
        let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
        let record: RecordFile<'_> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        if record.collection != name || record.id != id {
            return Err("record header does not match its location".into());
        }
        if checksum(record.body.get().as_bytes()) != record.checksum {
            return Err("checksum mismatch".into());
        }
        let body = serde_json::from_str(record.body.get()).map_err(|e| e.to_string())?;
        Ok((record.version, body))
    }

    fn index_path(&self) -> PathBuf {
        self.dir.join(INDEX_FILE)
    }

    fn record_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{}.{RECORD_EXT}", file_stem(id)))
    }

    /// Replays the index log and rewrites it from the record files when it
    /// is missing, torn, or disagrees with them.
    fn reconcile_index(&self) -> Result<(), StoreError> {
        let live: BTreeMap<String, u64> = self
            .records
            .read()
            .unwrap()
            .iter()
            .filter_map(|(id, slot)| match slot {
                Slot::Live { version, .. } => Some((id.clone(), *version)),
                Slot::Corrupt(_) => None,
            })
            .collect();
        let replayed = fs::read_to_string(self.index_path()).ok().and_then(|text| {
            if !text.is_empty() && !text.ends_with('\n') {
                return None;
            }
            let mut state = BTreeMap::new();
            for line in text.lines() {
                let entry: IndexEntry = serde_json::from_str(line).ok()?;
                match entry.op {
                    IndexOp::Put => state.insert(entry.id, entry.version),
                    IndexOp::Delete => state.remove(&entry.id),
                };
            }
            Some(state)
        });
        if replayed.as_ref() == Some(&live) {
            return Ok(());
        }
        let mut text = String::new();
        for (id, version) in &live {
            let entry = IndexEntry {
                op: IndexOp::Put,
                id: id.clone(),
                version: *version,
            };
            text.push_str(&serde_json::to_string(&entry)?);
            text.push('\n');
        }
        atomic_write(&self.index_path(), text.as_bytes())?;
        Ok(())
    }

    fn append_index(&self, op: IndexOp, id: &str, version: u64) -> io::Result<()> {
        let mut line = serde_json::to_string(&IndexEntry {
            op,
            id: id.to_string(),
            version,
        })
        .expect("index entry serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.index_path())?;
        f.write_all(line.as_bytes())?;
        f.sync_data()
    }

    fn put(&self, id: &str, body: &T) -> Result<u64, StoreError> {
        let _w = self.writer.lock().unwrap();
        let version = match self.records.read().unwrap().get(id) {
            Some(Slot::Live { version, .. }) => version + 1,
            _ => 1,
        };
        let body_text = serde_json::to_string(body)?;
        let raw = RawValue::from_string(body_text)?;
        let record = RecordFile {
            collection: self.name,
            id: id.to_string(),
            version,
            checksum: checksum(raw.get().as_bytes()),
            body: &raw,
        };
        atomic_write(&self.record_path(id), &serde_json::to_vec(&record)?)?;
        self.append_index(IndexOp::Put, id, version)?;
        let parsed: T = serde_json::from_str(raw.get())?;
        self.records.write().unwrap().insert(
            id.to_string(),
            Slot::Live {
                version,
                body: Arc::new(parsed),
            },
        );
        Ok(version)
    }

    fn get(&self, id: &str) -> Result<(u64, Arc<T>), StoreError> {
        match self.records.read().unwrap().get(id) {
            Some(Slot::Live { version, body }) => Ok((*version, body.clone())),
            Some(Slot::Corrupt(reason)) => Err(StoreError::Corrupt {
                id: id.to_string(),
                reason: reason.clone(),
            }),
            None => Err(StoreError::NotFound(id.to_string())),
        }
    }

    fn delete(&self, id: &str) -> Result<bool, StoreError> {
        let _w = self.writer.lock().unwrap();
        if !self.records.read().unwrap().contains_key(id) {
            return Ok(false);
        }
        match fs::remove_file(self.record_path(id)) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        sync_dir(&self.dir)?;
        self.append_index(IndexOp::Delete, id, 0)?;
        self.records.write().unwrap().remove(id);
        Ok(true)
    }

    fn contains(&self, id: &str) -> bool {
        self.records.read().unwrap().contains_key(id)
    }

    fn snapshot(&self) -> Vec<(String, Arc<T>)> {
        self.records
            .read()
            .unwrap()
            .iter()
            .filter_map(|(id, slot)| match slot {
                Slot::Live { body, .. } => Some((id.clone(), body.clone())),
                Slot::Corrupt(_) => None,
            })
            .collect()
    }

    fn ids(&self) -> Vec<String> {
        self.records.read().unwrap().keys().cloned().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    pub material: Option<String>,
    pub project: Option<String>,
    pub key_path: Option<String>,
    pub visibility: Option<Visibility>,
}

impl Filter {
    pub fn is_empty(&self) -> bool {
        self.material.is_none()
            && self.project.is_none()
            && self.key_path.is_none()
            && self.visibility.is_none()
    }

    pub fn matches(&self, c: &Contribution) -> bool {
        self.material.as_ref().is_none_or(|m| c.material_key() == *m)
            && self.project.as_ref().is_none_or(|p| c.project == *p)
            && self.visibility.is_none_or(|v| c.visibility == v)
            && self
                .key_path
                .as_ref()
                .is_none_or(|k| lookup(&c.tree, k).is_some())
    }
}

/// Contributions and derived material documents on disk.
pub struct Store {
    root: PathBuf,
    contributions: Collection<Contribution>,
    derived: Collection<DerivedMaterialDoc>,
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Store, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(Store {
            contributions: Collection::open(&root, CollectionName::Contributions)?,
            derived: Collection::open(&root, CollectionName::Derived)?,
            root,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn put_contribution(&self, c: &Contribution) -> Result<u64, StoreError> {
        self.contributions.put(c.cid.as_str(), c)
    }

    pub fn get_contribution(&self, cid: &Cid) -> Result<Contribution, StoreError> {
        self.contributions.get(cid.as_str()).map(|(_, c)| (*c).clone())
    }

    pub fn contribution_version(&self, cid: &Cid) -> Result<u64, StoreError> {
        self.contributions.get(cid.as_str()).map(|(v, _)| v)
    }

    pub fn delete_contribution(&self, cid: &Cid) -> Result<bool, StoreError> {
        self.contributions.delete(cid.as_str())
    }

    pub fn contains_cid(&self, cid: &Cid) -> bool {
        self.contributions.contains(cid.as_str())
    }

    /// Contributions matching every set filter field, oldest first.
    pub fn query(&self, filter: &Filter) -> Result<Vec<Contribution>, StoreError> {
        if filter.is_empty() {
            return Err(StoreError::EmptyFilter);
        }
        let mut out: Vec<Contribution> = self
            .contributions
            .snapshot()
            .into_iter()
            .filter(|(_, c)| filter.matches(c))
            .map(|(_, c)| (*c).clone())
            .collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.cid.cmp(&b.cid)));
        Ok(out)
    }

    pub fn contributions_for(&self, material_key: &str) -> Result<Vec<Contribution>, StoreError> {
        self.query(&Filter {
            material: Some(material_key.to_string()),
            ..Default::default()
        })
    }

    pub fn all_contributions(&self) -> Vec<Contribution> {
        let mut out: Vec<Contribution> = self
            .contributions
            .snapshot()
            .into_iter()
            .map(|(_, c)| (*c).clone())
            .collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.cid.cmp(&b.cid)));
        out
    }

    pub fn put_derived(&self, d: &DerivedMaterialDoc) -> Result<u64, StoreError> {
        self.derived.put(&d.material_key, d)
    }

    pub fn get_derived(&self, material_key: &str) -> Result<DerivedMaterialDoc, StoreError> {
        self.derived.get(material_key).map(|(_, d)| (*d).clone())
    }

    pub fn delete_derived(&self, material_key: &str) -> Result<bool, StoreError> {
        self.derived.delete(material_key)
    }

    pub fn list_materials(&self) -> Vec<String> {
        self.derived.ids()
    }

    /// Material keys that have at least one stored contribution.
    pub fn contributed_materials(&self) -> Vec<String> {
        let mut keys: Vec<String> = self
            .contributions
            .snapshot()
            .iter()
            .map(|(_, c)| c.material_key())
            .collect();
        keys.sort();
        keys.dedup();
        keys
    }

    pub fn list_projects(&self) -> Vec<String> {
        let mut projects: Vec<String> = self
            .contributions
            .snapshot()
            .iter()
            .map(|(_, c)| c.project.clone())
            .collect();
        projects.sort();
        projects.dedup();
        projects
    }
}
