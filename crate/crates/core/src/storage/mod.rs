//! Tiered storage: a raw staging area for source datasets, a partitioned
//! columnar analytical store, and a document-style hot store.

mod column;
pub mod hot;
mod predicate;
pub mod segfile;
pub mod staging;
mod table;
mod warehouse;

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub use column::{ColumnData, ColumnSegment, NullMask};
pub use hot::{HotDocument, HotStore};
pub use predicate::{CompareOp, ScanPredicate};
pub use staging::{stage_raw_dataset, write_dataset_dir, RawRecord, RawStore, RawTable, SourceManifest, StagedDataset};
pub use table::{Partition, Projection, Scan, Table};
pub use warehouse::{Catalog, CatalogEntry, PartitionEntry, Warehouse, WriteGuard};

pub const DEFAULT_PARTITION_SIZE: usize = 65_536;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {table}.{column}")]
    UnknownColumn { table: String, column: String },
    #[error("type mismatch in {table} row {row} column {column}: {detail}")]
    TypeMismatch { table: String, row: usize, column: String, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("snapshot refused while a write is in progress")]
    SnapshotDuringWrite,
    #[error("unknown snapshot {0}")]
    UnknownSnapshot(String),
    #[error("corrupt storage: {0}")]
    Corrupt(String),
    #[error("malformed {file} line {line}: {detail}")]
    Malformed { file: String, line: u64, detail: String },
    #[error("checksum mismatch for {file}: manifest {expected:08x}, file {actual:08x}")]
    ChecksumMismatch { file: String, expected: u32, actual: u32 },
    #[error("row count mismatch for {file}: manifest {expected}, file {actual}")]
    RowCountMismatch { file: String, expected: usize, actual: usize },
    #[error("dataset {0} already staged with different contents")]
    DuplicateDataset(String),
    #[error("collection {0} is a sync target and rejects direct writes")]
    SyncTargetWriteRejected(String),
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let name = path.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests;
