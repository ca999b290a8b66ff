//! Raw staging tier: verbatim, append-only landing zone for source datasets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::StorageError;

/// `manifest.json` of one source dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceManifest {
    pub dataset_id: String,
    pub tables: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub rows: usize,
    pub crc32c: u32,
}

impl SourceManifest {
    pub fn read(dir: &Path) -> Result<SourceManifest, StorageError> {
        let path = dir.join("manifest.json");
        let bytes = fs::read(&path).map_err(|e| StorageError::Malformed {
            file: path.display().to_string(),
            line: 0,
            detail: e.to_string(),
        })?;
        serde_json::from_slice(&bytes).map_err(|e| StorageError::Malformed {
            file: path.display().to_string(),
            line: e.line() as u64,
            detail: e.to_string(),
        })
    }
}

/// CSV records of one table, stored verbatim in one buffer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawTable {
    pub header: Vec<String>,
    buf: String,
    ends: Vec<u32>,
    rows: usize,
}

/// Borrowed view of one raw record.
#[derive(Debug, Clone, Copy)]
pub struct RawRecord<'a> {
    table: &'a RawTable,
    index: usize,
}

impl<'a> RawRecord<'a> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn field(&self, i: usize) -> &'a str {
        let w = self.table.header.len();
        let k = self.index * w + i;
        let end = self.table.ends[k] as usize;
        let begin = if k == 0 { 0 } else { self.table.ends[k - 1] as usize };
        &self.table.buf[begin..end]
    }

    pub fn get(&self, name: &str) -> Option<&'a str> {
        self.table.header.iter().position(|h| h == name).map(|i| self.field(i))
    }

    pub fn fields(&self) -> Vec<&'a str> {
        (0..self.table.header.len()).map(|i| self.field(i)).collect()
    }

    pub fn to_map(&self) -> BTreeMap<&'a str, &'a str> {
        self.table.header.iter().map(String::as_str).zip(self.fields()).collect()
    }
}

impl RawTable {
    pub fn new(header: Vec<String>) -> RawTable {
        RawTable { header, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn push<'s>(&mut self, fields: impl IntoIterator<Item = &'s str>) {
        for f in fields {
            self.buf.push_str(f);
            self.ends.push(self.buf.len() as u32);
        }
        self.rows += 1;
    }

    pub fn record(&self, index: usize) -> RawRecord<'_> {
        RawRecord { table: self, index }
    }

    pub fn records(&self) -> impl Iterator<Item = RawRecord<'_>> {
        (0..self.rows).map(move |i| self.record(i))
    }

    /// Parses RFC 4180 CSV with a header row. Every record must have the
    /// header's arity.
    pub fn parse_csv(bytes: &[u8], file_label: &str) -> Result<RawTable, StorageError> {
        let malformed = |line: u64, detail: String| StorageError::Malformed { file: file_label.to_string(), line, detail };
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(bytes);
        let header: Vec<String> =
            rdr.headers().map_err(|e| malformed(1, e.to_string()))?.iter().map(str::to_string).collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(malformed(1, "missing header row".into()));
        }
        let mut table = RawTable::new(header);
        let mut record = csv::StringRecord::new();
        loop {
            match rdr.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {
                    let line = record.position().map(|p| p.line()).unwrap_or(0);
                    if record.len() != table.header.len() {
                        return Err(malformed(
                            line,
                            format!("expected {} fields, found {}", table.header.len(), record.len()),
                        ));
                    }
                    table.push(record.iter());
                }
                Err(e) => {
                    let line = e.position().map(|p| p.line()).unwrap_or(0);
                    return Err(malformed(line, e.to_string()));
                }
            }
        }
        Ok(table)
    }

    /// Renders back to CSV (header + records).
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in self.records() {
            w.write_record(r.fields()).expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedDataset {
    pub dataset_id: String,
    pub tables: BTreeMap<String, RawTable>,
    pub source_manifest: SourceManifest,
    pub source_path: PathBuf,
}

/// Reads one source dataset directory, verifying checksums and row counts.
pub fn stage_raw_dataset(dir: &Path) -> Result<StagedDataset, StorageError> {
    let manifest = SourceManifest::read(dir)?;
    let mut tables = BTreeMap::new();
    for (table, entry) in &manifest.tables {
        let path = dir.join(&entry.file);
        let label = path.display().to_string();
        let bytes = fs::read(&path).map_err(|e| StorageError::Malformed { file: label.clone(), line: 0, detail: e.to_string() })?;
        let crc = crc32c::crc32c(&bytes);
        if crc != entry.crc32c {
            return Err(StorageError::ChecksumMismatch { file: label, expected: entry.crc32c, actual: crc });
        }
        let raw = RawTable::parse_csv(&bytes, &label)?;
        if raw.len() != entry.rows {
            return Err(StorageError::RowCountMismatch { file: label, expected: entry.rows, actual: raw.len() });
        }
        tables.insert(table.clone(), raw);
    }
    Ok(StagedDataset { dataset_id: manifest.dataset_id.clone(), tables, source_manifest: manifest, source_path: dir.to_path_buf() })
}

/// Staged datasets by id. Disk-backed stores keep a verbatim copy of every
/// source file under `<root>/raw/<dataset_id>/`; nothing is ever rewritten.
#[derive(Default)]
pub struct RawStore {
    root: Option<PathBuf>,
    datasets: RwLock<BTreeMap<String, Arc<StagedDataset>>>,
}

impl RawStore {
    pub fn in_memory() -> RawStore {
        RawStore::default()
    }

    pub fn open(root: impl AsRef<Path>) -> Result<RawStore, StorageError> {
        let dir = root.as_ref().join("raw");
        fs::create_dir_all(&dir)?;
        Ok(RawStore { root: Some(dir), datasets: RwLock::new(BTreeMap::new()) })
    }

    /// Stages `dir`. Re-staging a dataset with an identical manifest returns
    /// the existing entry; a different manifest under the same id is refused.
    pub fn stage(&self, dir: &Path) -> Result<Arc<StagedDataset>, StorageError> {
        let manifest = SourceManifest::read(dir)?;
        if let Some(existing) = self.get(&manifest.dataset_id)? {
            if existing.source_manifest == manifest {
                return Ok(existing);
            }
            return Err(StorageError::DuplicateDataset(manifest.dataset_id));
        }
        let staged = Arc::new(stage_raw_dataset(dir)?);
        if let Some(root) = &self.root {
            let target = root.join(&staged.dataset_id);
            let tmp = root.join(format!(".{}.tmp", staged.dataset_id));
            if tmp.exists() {
                fs::remove_dir_all(&tmp)?;
            }
            fs::create_dir_all(&tmp)?;
            for entry in staged.source_manifest.tables.values() {
                fs::copy(dir.join(&entry.file), tmp.join(&entry.file))?;
            }
            fs::copy(dir.join("manifest.json"), tmp.join("manifest.json"))?;
            fs::rename(&tmp, &target)?;
        }
        self.datasets.write().insert(staged.dataset_id.clone(), staged.clone());
        Ok(staged)
    }

    /// Looks a dataset up in memory, then on disk.
    pub fn get(&self, id: &str) -> Result<Option<Arc<StagedDataset>>, StorageError> {
        if let Some(d) = self.datasets.read().get(id) {
            return Ok(Some(d.clone()));
        }
        let Some(root) = &self.root else { return Ok(None) };
        let dir = root.join(id);
        if !dir.join("manifest.json").exists() {
            return Ok(None);
        }
        let staged = Arc::new(stage_raw_dataset(&dir)?);
        self.datasets.write().insert(id.to_string(), staged.clone());
        Ok(Some(staged))
    }

    pub fn dataset_ids(&self) -> Result<Vec<String>, StorageError> {
        let mut ids: Vec<String> = self.datasets.read().keys().cloned().collect();
        if let Some(root) = &self.root {
            for e in fs::read_dir(root)? {
                let name = e?.file_name().to_string_lossy().to_string();
                if !name.starts_with('.') && !ids.contains(&name) {
                    ids.push(name);
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// Writes a dataset directory (CSV files + manifest) from raw tables.
pub fn write_dataset_dir(dir: &Path, dataset_id: &str, tables: &BTreeMap<String, RawTable>) -> Result<SourceManifest, StorageError> {
    fs::create_dir_all(dir)?;
    let mut manifest = SourceManifest { dataset_id: dataset_id.to_string(), tables: BTreeMap::new() };
    for (name, table) in tables {
        let bytes = table.to_csv();
        let file = format!("{name}.csv");
        fs::write(dir.join(&file), &bytes)?;
        manifest.tables.insert(name.clone(), ManifestEntry { file, rows: table.len(), crc32c: crc32c::crc32c(&bytes) });
    }
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
