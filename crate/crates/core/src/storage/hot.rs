//! Document-style hot tier: versioned JSON documents per collection, backed
//! by an append-only log of one JSON record per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::staging::{write_dataset_dir, RawTable, SourceManifest};
use super::StorageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotDocument {
    pub collection: String,
    pub doc_id: String,
    pub body: Json,
    pub version: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LoggedDoc {
    doc_id: String,
    version: u64,
    body: Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogRecord {
    Upsert(LoggedDoc),
    /// Full replacement of the collection, written as a single line.
    Refresh { docs: Vec<LoggedDoc> },
}

type Collection = BTreeMap<String, HotDocument>;

#[derive(Default)]
pub struct HotStore {
    root: Option<PathBuf>,
    collections: RwLock<BTreeMap<String, Collection>>,
    reserved: RwLock<BTreeSet<String>>,
    writer: Mutex<()>,
}

impl HotStore {
    pub fn in_memory() -> HotStore {
        HotStore::default()
    }

    /// Opens `<root>/hot/`, replaying every collection log.
    pub fn open(root: impl AsRef<Path>) -> Result<HotStore, StorageError> {
        let dir = root.as_ref().join("hot");
        fs::create_dir_all(&dir)?;
        let mut collections = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("log") {
                continue;
            }
            let name = path.file_stem().unwrap().to_string_lossy().to_string();
            collections.insert(name.clone(), replay(&path, &name)?);
        }
        Ok(HotStore { root: Some(dir), collections: RwLock::new(collections), ..Default::default() })
    }

    /// Marks `collection` as a sync target: direct upserts are rejected.
    pub fn reserve(&self, collection: &str) {
        self.reserved.write().insert(collection.to_string());
    }

    pub fn is_reserved(&self, collection: &str) -> bool {
        self.reserved.read().contains(collection)
    }

    pub fn collection_names(&self) -> Vec<String> {
        self.collections.read().keys().cloned().collect()
    }

    /// Inserts or replaces a document; returns its new version (1 for a new id).
    pub fn upsert(&self, collection: &str, doc_id: &str, body: Json) -> Result<u64, StorageError> {
        if self.is_reserved(collection) {
            return Err(StorageError::SyncTargetWriteRejected(collection.to_string()));
        }
        let _w = self.writer.lock();
        let version = self.collections.read().get(collection).and_then(|c| c.get(doc_id)).map_or(1, |d| d.version + 1);
        let logged = LoggedDoc { doc_id: doc_id.to_string(), version, body };
        self.append(collection, &LogRecord::Upsert(logged.clone()))?;
        self.collections.write().entry(collection.to_string()).or_default().insert(
            doc_id.to_string(),
            HotDocument { collection: collection.to_string(), doc_id: logged.doc_id, body: logged.body, version },
        );
        Ok(version)
    }

    pub fn get(&self, collection: &str, doc_id: &str) -> Option<HotDocument> {
        self.collections.read().get(collection)?.get(doc_id).cloned()
    }

    /// All documents of a collection in doc_id order.
    pub fn documents(&self, collection: &str) -> Vec<HotDocument> {
        self.collections.read().get(collection).map(|c| c.values().cloned().collect()).unwrap_or_default()
    }

    /// Documents whose numeric `ts` field is at least `since` and whose body
    /// matches every `filter` field exactly.
    pub fn recent(&self, collection: &str, since: i64, filter: &BTreeMap<String, Json>) -> Vec<HotDocument> {
        self.documents(collection)
            .into_iter()
            .filter(|d| d.body.get("ts").and_then(Json::as_i64).is_some_and(|ts| ts >= since))
            .filter(|d| filter.iter().all(|(k, v)| d.body.get(k) == Some(v)))
            .collect()
    }

    /// Replaces the whole collection atomically (one log line). Versions
    /// continue from the previous document with the same id. Allowed on
    /// reserved collections; this is the sync path.
    pub fn refresh(&self, collection: &str, docs: Vec<(String, Json)>) -> Result<usize, StorageError> {
        let _w = self.writer.lock();
        let previous = self.collections.read().get(collection).cloned().unwrap_or_default();
        let docs: Vec<LoggedDoc> = docs
            .into_iter()
            .map(|(doc_id, body)| {
                let version = previous.get(&doc_id).map_or(1, |d| d.version + 1);
                LoggedDoc { doc_id, version, body }
            })
            .collect();
        self.append(collection, &LogRecord::Refresh { docs: docs.clone() })?;
        let fresh: Collection = docs
            .into_iter()
            .map(|d| {
                let doc = HotDocument { collection: collection.to_string(), doc_id: d.doc_id.clone(), body: d.body, version: d.version };
                (d.doc_id, doc)
            })
            .collect();
        let n = fresh.len();
        self.collections.write().insert(collection.to_string(), fresh);
        Ok(n)
    }

    fn append(&self, collection: &str, record: &LogRecord) -> Result<(), StorageError> {
        if let Some(dir) = &self.root {
            let mut line = serde_json::to_vec(record)?;
            line.push(b'\n');
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(format!("{collection}.log")))?;
            f.write_all(&line)?;
            f.sync_data()?;
        }
        Ok(())
    }

    /// Exports collections as a source dataset directory for a later ETL run.
    /// Each collection becomes one table: `doc_id`, `version`, then the
    /// union of top-level body fields (scalars rendered as text, nested
    /// values as JSON).
    pub fn export_dataset(&self, collections: &[&str], dir: &Path, dataset_id: &str) -> Result<SourceManifest, StorageError> {
        let mut tables = BTreeMap::new();
        for &name in collections {
            let docs = self.documents(name);
            let fields: BTreeSet<String> =
                docs.iter().filter_map(|d| d.body.as_object()).flat_map(|o| o.keys().cloned()).collect();
            let mut header = vec!["doc_id".to_string(), "version".to_string()];
            header.extend(fields.iter().cloned());
            let mut table = RawTable::new(header);
            for d in &docs {
                let mut row = vec![d.doc_id.clone(), d.version.to_string()];
                for f in &fields {
                    row.push(match d.body.get(f) {
                        None | Some(Json::Null) => String::new(),
                        Some(Json::String(s)) => s.clone(),
                        Some(other) => other.to_string(),
                    });
                }
                table.push(row.iter().map(String::as_str));
            }
            tables.insert(name.to_string(), table);
        }
        write_dataset_dir(dir, dataset_id, &tables)
    }
}

fn replay(path: &Path, collection: &str) -> Result<Collection, StorageError> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut docs = Collection::new();
    for (i, line) in lines.iter().enumerate() {
        let record: LogRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            // A torn final line is an unacknowledged write.
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
            Err(e) => {
                return Err(StorageError::Malformed { file: path.display().to_string(), line: i as u64 + 1, detail: e.to_string() })
            }
        };
        let to_doc = |d: LoggedDoc| HotDocument { collection: collection.to_string(), doc_id: d.doc_id, body: d.body, version: d.version };
        match record {
            LogRecord::Upsert(d) => {
                docs.insert(d.doc_id.clone(), to_doc(d));
            }
            LogRecord::Refresh { docs: fresh } => {
                docs = fresh.into_iter().map(|d| (d.doc_id.clone(), to_doc(d))).collect();
            }
        }
    }
    Ok(docs)
}
