use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::schema::{ColumnDef, TableSchema};
use crate::value::Value;

use super::predicate::ScanPredicate;
use super::segfile;
use super::table::{Partition, Projection, Scan, Table};
use super::{write_atomic, StorageError, DEFAULT_PARTITION_SIZE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionEntry {
    pub id: u32,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub columns: Vec<ColumnDef>,
    pub partitions: Vec<PartitionEntry>,
    pub row_count: usize,
}

/// On-disk and in-memory description of the analytical store.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub tables: BTreeMap<String, CatalogEntry>,
    pub snapshots: Vec<String>,
}

impl Catalog {
    pub fn row_count(&self, table: &str) -> Option<usize> {
        self.tables.get(table).map(|t| t.row_count)
    }
}

type TableMap = BTreeMap<String, Arc<Table>>;

/// Partitioned columnar analytical store.
///
/// Writers are serialized; scans capture the table version current at scan
/// start and never observe a later write.
pub struct Warehouse {
    root: Option<PathBuf>,
    tables: RwLock<TableMap>,
    snapshots: Mutex<BTreeMap<String, Arc<TableMap>>>,
    snapshot_ids: RwLock<Vec<String>>,
    write_lock: Mutex<()>,
    active_writers: AtomicUsize,
}

/// Marks a write in progress; snapshots are refused while one is alive.
pub struct WriteGuard<'a> {
    wh: &'a Warehouse,
    _lock: parking_lot::MutexGuard<'a, ()>,
}

impl Drop for WriteGuard<'_> {
    fn drop(&mut self) {
        self.wh.active_writers.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Default for Warehouse {
    fn default() -> Self {
        Warehouse::in_memory()
    }
}

impl Warehouse {
    pub fn in_memory() -> Warehouse {
        Warehouse {
            root: None,
            tables: RwLock::new(BTreeMap::new()),
            snapshots: Mutex::new(BTreeMap::new()),
            snapshot_ids: RwLock::new(Vec::new()),
            write_lock: Mutex::new(()),
            active_writers: AtomicUsize::new(0),
        }
    }

    /// Opens (or creates) a store rooted at `root`, loading every table.
    pub fn open(root: impl AsRef<Path>) -> Result<Warehouse, StorageError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("tables"))?;
        let mut wh = Warehouse::in_memory();
        let catalog_path = root.join("catalog.json");
        if catalog_path.exists() {
            let catalog: Catalog = serde_json::from_slice(&fs::read(&catalog_path)?)?;
            let tables = load_tables(&root.join("tables"), &catalog)?;
            *wh.tables.get_mut() = tables;
            *wh.snapshot_ids.get_mut() = catalog.snapshots;
        }
        wh.root = Some(root);
        Ok(wh)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn begin_write(&self) -> WriteGuard<'_> {
        let lock = self.write_lock.lock();
        self.active_writers.fetch_add(1, Ordering::SeqCst);
        WriteGuard { wh: self, _lock: lock }
    }

    pub fn catalog(&self) -> Catalog {
        let tables = self
            .tables
            .read()
            .iter()
            .map(|(name, t)| {
                let entry = CatalogEntry {
                    columns: t.schema.columns.clone(),
                    partitions: t.partitions.iter().map(|p| PartitionEntry { id: p.id, rows: p.rows }).collect(),
                    row_count: t.row_count(),
                };
                (name.clone(), entry)
            })
            .collect();
        Catalog { tables, snapshots: self.snapshot_ids.read().clone() }
    }

    pub fn table(&self, name: &str) -> Result<Arc<Table>, StorageError> {
        self.tables.read().get(name).cloned().ok_or_else(|| StorageError::UnknownTable(name.to_string()))
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables.read().keys().cloned().collect()
    }

    pub fn has_table(&self, name: &str) -> bool {
        self.tables.read().contains_key(name)
    }

    pub fn row_count(&self, name: &str) -> Result<usize, StorageError> {
        Ok(self.table(name)?.row_count())
    }

    /// Replaces `schema.name` with `rows`, split into partitions of
    /// `partition_size`. Returns the new partition ids.
    pub fn load_partitioned_table(
        &self,
        schema: &TableSchema,
        rows: &[Vec<Value>],
        partition_size: usize,
    ) -> Result<Vec<u32>, StorageError> {
        let guard = self.begin_write();
        self.load_with_guard(&guard, schema, rows, partition_size)
    }

    pub fn load_with_guard(
        &self,
        _guard: &WriteGuard<'_>,
        schema: &TableSchema,
        rows: &[Vec<Value>],
        partition_size: usize,
    ) -> Result<Vec<u32>, StorageError> {
        let partitions = Table::build_partitions(schema, rows, partition_size, 0)?;
        let ids = partitions.iter().map(|p| p.id).collect();
        let table = Arc::new(Table { schema: schema.clone(), partitions });
        self.install(table)?;
        Ok(ids)
    }

    /// Appends rows to an existing table as new partitions.
    pub fn append_rows(&self, table: &str, rows: &[Vec<Value>]) -> Result<Vec<u32>, StorageError> {
        let _guard = self.begin_write();
        let current = self.table(table)?;
        let new = Table::build_partitions(&current.schema, rows, DEFAULT_PARTITION_SIZE, current.next_partition_id())?;
        let ids = new.iter().map(|p| p.id).collect();
        let mut partitions = current.partitions.clone();
        partitions.extend(new);
        self.install(Arc::new(Table { schema: current.schema.clone(), partitions }))?;
        Ok(ids)
    }

    /// Replaces several tables at once. Either every table becomes visible
    /// or, on a persistence failure, none does and the previous versions are
    /// written back.
    pub fn replace_tables(&self, tables: Vec<Table>) -> Result<(), StorageError> {
        let _guard = self.begin_write();
        if let Some(root) = &self.root {
            let dir = root.join("tables");
            let mut written: Vec<&str> = Vec::new();
            for t in &tables {
                if let Err(e) = write_table_dir(&dir, t) {
                    let old = self.tables.read().clone();
                    for name in written {
                        match old.get(name) {
                            Some(prev) => {
                                let _ = write_table_dir(&dir, prev);
                            }
                            None => {
                                let _ = fs::remove_dir_all(dir.join(name));
                            }
                        }
                    }
                    return Err(e);
                }
                written.push(&t.schema.name);
            }
        }
        {
            let mut map = self.tables.write();
            for t in tables {
                map.insert(t.schema.name.clone(), Arc::new(t));
            }
        }
        self.persist_catalog()
    }

    /// Makes `table` visible, persisting it first when disk-backed. The old
    /// version stays in place if persisting fails.
    fn install(&self, table: Arc<Table>) -> Result<(), StorageError> {
        if let Some(root) = &self.root {
            write_table_dir(&root.join("tables"), &table)?;
        }
        self.tables.write().insert(table.schema.name.clone(), table);
        self.persist_catalog()
    }

    fn persist_catalog(&self) -> Result<(), StorageError> {
        if let Some(root) = &self.root {
            let bytes = serde_json::to_vec_pretty(&self.catalog())?;
            write_atomic(&root.join("catalog.json"), &bytes)?;
        }
        Ok(())
    }

    pub fn scan(&self, table: &str, predicate: Option<&ScanPredicate>, projection: &Projection) -> Result<Scan, StorageError> {
        Scan::new(self.table(table)?, predicate, projection)
    }

    /// Captures every table. Refused while a writer is active.
    pub fn snapshot(&self) -> Result<String, StorageError> {
        let Some(_lock) = self.write_lock.try_lock() else {
            return Err(StorageError::SnapshotDuringWrite);
        };
        if self.active_writers.load(Ordering::SeqCst) > 0 {
            return Err(StorageError::SnapshotDuringWrite);
        }
        let tables: TableMap = self.tables.read().clone();
        let id = {
            let ids = self.snapshot_ids.read();
            let n = ids.iter().filter_map(|s| s.strip_prefix("snap-")?.parse::<u64>().ok()).max().unwrap_or(0) + 1;
            format!("snap-{n:06}")
        };
        if let Some(root) = &self.root {
            let dir = root.join("snapshots").join(&id);
            let tables_dir = dir.join("tables");
            fs::create_dir_all(&tables_dir)?;
            for t in tables.values() {
                write_table_dir(&tables_dir, t)?;
            }
            let mut catalog = self.catalog();
            catalog.snapshots.clear();
            write_atomic(&dir.join("catalog.json"), &serde_json::to_vec_pretty(&catalog)?)?;
        }
        self.snapshots.lock().insert(id.clone(), Arc::new(tables));
        self.snapshot_ids.write().push(id.clone());
        self.persist_catalog()?;
        log::info!("snapshot {id} taken");
        Ok(id)
    }

    pub fn snapshot_ids(&self) -> Vec<String> {
        self.snapshot_ids.read().clone()
    }

    /// Restores every table to its state at `id`; tables created after the
    /// snapshot are dropped.
    pub fn recover(&self, id: &str) -> Result<(), StorageError> {
        if !self.snapshot_ids.read().iter().any(|s| s == id) {
            return Err(StorageError::UnknownSnapshot(id.to_string()));
        }
        let _guard = self.begin_write();
        let cached = self.snapshots.lock().get(id).cloned();
        let tables: TableMap = match cached {
            Some(t) => (*t).clone(),
            None => {
                let root = self.root.as_ref().ok_or_else(|| StorageError::UnknownSnapshot(id.to_string()))?;
                let dir = root.join("snapshots").join(id);
                let catalog: Catalog = serde_json::from_slice(&fs::read(dir.join("catalog.json"))?)?;
                load_tables(&dir.join("tables"), &catalog)?
            }
        };
        if let Some(root) = &self.root {
            let live = root.join("tables");
            let existing: Vec<String> = self.tables.read().keys().cloned().collect();
            for name in existing.iter().filter(|n| !tables.contains_key(*n)) {
                let _ = fs::remove_dir_all(live.join(name));
            }
            for t in tables.values() {
                write_table_dir(&live, t)?;
            }
        }
        *self.tables.write() = tables;
        log::info!("recovered snapshot {id}");
        self.persist_catalog()
    }
}

fn write_table_dir(tables_dir: &Path, table: &Table) -> Result<(), StorageError> {
    let name = &table.schema.name;
    let tmp = tables_dir.join(format!(".{name}.tmp"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    for p in &table.partitions {
        fs::write(tmp.join(format!("{}.seg", p.id)), segfile::encode(p, name))?;
    }
    let dst = tables_dir.join(name);
    if dst.exists() {
        fs::remove_dir_all(&dst)?;
    }
    fs::rename(&tmp, &dst)?;
    Ok(())
}

fn load_tables(tables_dir: &Path, catalog: &Catalog) -> Result<TableMap, StorageError> {
    let mut out = BTreeMap::new();
    for (name, entry) in &catalog.tables {
        let mut partitions = Vec::with_capacity(entry.partitions.len());
        for pe in &entry.partitions {
            let path = tables_dir.join(name).join(format!("{}.seg", pe.id));
            let bytes = fs::read(&path)?;
            let (table, p): (String, Partition) =
                segfile::decode(&bytes).map_err(|e| StorageError::Corrupt(format!("{}: {e}", path.display())))?;
            if table != *name || p.rows != pe.rows || p.id != pe.id {
                return Err(StorageError::Corrupt(format!("{} does not match the catalog", path.display())));
            }
            partitions.push(Arc::new(p));
        }
        let schema = TableSchema { name: name.clone(), columns: entry.columns.clone() };
        out.insert(name.clone(), Arc::new(Table { schema, partitions }));
    }
    Ok(out)
}
