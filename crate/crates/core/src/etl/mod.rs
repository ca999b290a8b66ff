//! Extract-transform-load from staged source datasets into the constellation
//! schema: dimension conformance across datasets, surrogate keys, fact key
//! resolution and quarantine of rejected rows.

pub mod generator;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ConstellationSchema, DimensionDef, FactDef, TableSchema};
use crate::storage::{RawRecord, RawStore, RawTable, StagedDataset, StorageError, Table, Warehouse, DEFAULT_PARTITION_SIZE};
use crate::value::Value;

pub use generator::{
    generate_datasets, generate_synthetic_sources, GenerationSummary, InjectedFault, InjectionLog, SourceGenSpec,
};

#[derive(Debug, Error)]
pub enum EtlError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("no source datasets found under {0}")]
    NoSources(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuarantineReason {
    UnresolvedFk,
    TypeError,
    DuplicateNaturalKeyConflict,
}

impl QuarantineReason {
    pub fn as_str(self) -> &'static str {
        match self {
            QuarantineReason::UnresolvedFk => "unresolved_fk",
            QuarantineReason::TypeError => "type_error",
            QuarantineReason::DuplicateNaturalKeyConflict => "duplicate_natural_key_conflict",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub dataset_id: String,
    pub table: String,
    pub row: usize,
    pub reason: QuarantineReason,
    pub detail: String,
    /// Source fields keyed by source column name.
    pub payload: BTreeMap<String, String>,
}

impl QuarantineRecord {
    fn new(dataset_id: &str, table: &str, rec: &RawRecord<'_>, reason: QuarantineReason, detail: String) -> QuarantineRecord {
        QuarantineRecord {
            dataset_id: dataset_id.to_string(),
            table: table.to_string(),
            row: rec.index(),
            reason,
            detail,
            payload: rec.to_map().into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

/// One dimension after deduplication across datasets.
#[derive(Debug, Clone, Default)]
pub struct ConformedDimension {
    pub dimension: String,
    /// (dataset, natural key) of every accepted source row → surrogate key.
    pub key_map: BTreeMap<(String, Vec<Value>), i64>,
    /// (dataset, source-local id) → surrogate key, used to resolve references.
    pub local_ids: HashMap<(String, i64), i64>,
    /// Conformed rows in surrogate order; surrogate k is `rows[k - 1]`.
    pub rows: Vec<Vec<Value>>,
}

impl ConformedDimension {
    pub fn resolve(&self, dataset: &str, local: i64) -> Option<i64> {
        self.local_ids.get(&(dataset.to_string(), local)).copied()
    }
}

/// A non-fatal problem found while reading sources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EtlIssue {
    pub dataset_id: String,
    pub table: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCounts {
    pub staged: usize,
    pub loaded: usize,
    pub quarantined: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EtlReport {
    pub datasets: Vec<String>,
    pub tables: BTreeMap<String, TableCounts>,
    pub quarantine_by_reason: BTreeMap<String, usize>,
    pub issues: Vec<EtlIssue>,
    pub duration_secs: f64,
}

impl EtlReport {
    pub fn total(&self) -> TableCounts {
        self.tables.values().fold(TableCounts::default(), |acc, c| TableCounts {
            staged: acc.staged + c.staged,
            loaded: acc.loaded + c.loaded,
            quarantined: acc.quarantined + c.quarantined,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Maps each schema column to its position in the source header.
fn column_positions(table: &RawTable, columns: &[crate::schema::ColumnDef]) -> Vec<Option<usize>> {
    columns.iter().map(|c| table.column_index(&c.name)).collect()
}

fn parse_row(
    rec: &RawRecord<'_>,
    columns: &[crate::schema::ColumnDef],
    positions: &[Option<usize>],
) -> Result<Vec<Value>, String> {
    columns
        .iter()
        .zip(positions)
        .map(|(c, pos)| {
            let raw = pos.map_or("", |p| rec.field(p));
            let v = Value::parse_as(c.kind, raw).map_err(|e| format!("{}: {e}", c.name))?;
            if v.is_null() && !c.nullable {
                return Err(format!("{}: missing required value", c.name));
            }
            Ok(v)
        })
        .collect()
}

fn missing_table_issue(ds: &StagedDataset, table: &str) -> EtlIssue {
    EtlIssue { dataset_id: ds.dataset_id.clone(), table: table.to_string(), message: "table missing from dataset".into() }
}

/// Deduplicates every dimension across `staged` (processed in dataset id
/// order). Rows with the same natural key and identical attributes merge;
/// later rows with a conflicting attribute are quarantined.
pub fn conform_dimensions(
    staged: &[&StagedDataset],
    schema: &ConstellationSchema,
) -> (BTreeMap<String, ConformedDimension>, Vec<QuarantineRecord>, Vec<EtlIssue>) {
    let mut order: Vec<&StagedDataset> = staged.to_vec();
    order.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));
    let mut out: BTreeMap<String, ConformedDimension> = BTreeMap::new();
    let mut quarantine = Vec::new();
    let mut issues = Vec::new();
    for dim in schema.dimension_load_order() {
        let conformed = conform_one(dim, schema, &order, &out, &mut quarantine, &mut issues);
        out.insert(dim.name.clone(), conformed);
    }
    (out, quarantine, issues)
}

fn conform_one(
    dim: &DimensionDef,
    schema: &ConstellationSchema,
    datasets: &[&StagedDataset],
    parents: &BTreeMap<String, ConformedDimension>,
    quarantine: &mut Vec<QuarantineRecord>,
    issues: &mut Vec<EtlIssue>,
) -> ConformedDimension {
    let key_col = dim.columns.iter().position(|c| c.name == dim.surrogate_key).expect("dimension has its surrogate key column");
    let natural: Vec<usize> =
        dim.natural_key.iter().filter_map(|n| dim.columns.iter().position(|c| &c.name == n)).collect();
    let links: Vec<(usize, &ConformedDimension)> = schema
        .dimension_links(dim)
        .into_iter()
        .filter_map(|(col, parent)| Some((dim.columns.iter().position(|c| c.name == col)?, parents.get(&parent)?)))
        .collect();

    let mut conformed = ConformedDimension { dimension: dim.name.clone(), ..Default::default() };
    let mut by_natural: HashMap<Vec<Value>, i64> = HashMap::new();
    for ds in datasets {
        let Some(raw) = ds.tables.get(&dim.name) else {
            issues.push(missing_table_issue(ds, &dim.name));
            continue;
        };
        let positions = column_positions(raw, &dim.columns);
        for rec in raw.records() {
            let reject = |reason, detail: String| QuarantineRecord::new(&ds.dataset_id, &dim.name, &rec, reason, detail);
            let mut row = match parse_row(&rec, &dim.columns, &positions) {
                Ok(r) => r,
                Err(e) => {
                    quarantine.push(reject(QuarantineReason::TypeError, e));
                    continue;
                }
            };
            let local = row[key_col].as_i64().expect("key column is a non-null int");
            let mut unresolved = None;
            for (col, parent) in &links {
                let Some(local_parent) = row[*col].as_i64() else { continue };
                match parent.resolve(&ds.dataset_id, local_parent) {
                    Some(sk) => row[*col] = Value::Int(sk),
                    None => unresolved = Some(format!("{} {local_parent} not found", dim.columns[*col].name)),
                }
            }
            if let Some(detail) = unresolved {
                quarantine.push(reject(QuarantineReason::UnresolvedFk, detail));
                continue;
            }
            let nk: Vec<Value> = natural.iter().map(|&i| row[i].clone()).collect();
            let sk = match by_natural.get(&nk) {
                Some(&sk) => {
                    let existing = &conformed.rows[sk as usize - 1];
                    let same = row.iter().zip(existing).enumerate().all(|(i, (a, b))| i == key_col || a == b);
                    if !same {
                        quarantine.push(reject(
                            QuarantineReason::DuplicateNaturalKeyConflict,
                            format!("attributes differ from surrogate {sk}"),
                        ));
                        continue;
                    }
                    sk
                }
                None => {
                    let sk = conformed.rows.len() as i64 + 1;
                    row[key_col] = Value::Int(sk);
                    conformed.rows.push(row);
                    by_natural.insert(nk.clone(), sk);
                    sk
                }
            };
            let local_key = (ds.dataset_id.clone(), local);
            if conformed.local_ids.get(&local_key).is_some_and(|&prev| prev != sk) {
                quarantine.push(reject(
                    QuarantineReason::DuplicateNaturalKeyConflict,
                    format!("local id {local} already used for another entity"),
                ));
                continue;
            }
            conformed.local_ids.insert(local_key, sk);
            conformed.key_map.insert((ds.dataset_id.clone(), nk), sk);
        }
    }
    conformed
}

/// Resolves every fact row's dimension references to surrogate keys.
/// Returns the loaded rows (in schema column order) and per-dataset staged counts.
pub fn load_fact_table(
    fact: &FactDef,
    staged: &[&StagedDataset],
    dims: &BTreeMap<String, ConformedDimension>,
    schema: &ConstellationSchema,
    quarantine: &mut Vec<QuarantineRecord>,
    issues: &mut Vec<EtlIssue>,
) -> (Vec<Vec<Value>>, usize) {
    let columns = schema.fact_columns(fact);
    let refs: Vec<Option<&ConformedDimension>> = fact.dimension_refs.iter().map(|d| dims.get(d)).collect();
    let mut order: Vec<&StagedDataset> = staged.to_vec();
    order.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));
    let mut loaded = Vec::new();
    let mut staged_count = 0;
    for ds in order {
        let Some(raw) = ds.tables.get(&fact.name) else {
            issues.push(missing_table_issue(ds, &fact.name));
            continue;
        };
        staged_count += raw.len();
        loaded.reserve(raw.len());
        let positions = column_positions(raw, &columns);
        'rows: for rec in raw.records() {
            let mut row = match parse_row(&rec, &columns, &positions) {
                Ok(r) => r,
                Err(e) => {
                    quarantine.push(QuarantineRecord::new(&ds.dataset_id, &fact.name, &rec, QuarantineReason::TypeError, e));
                    continue;
                }
            };
            for (i, dim) in refs.iter().enumerate() {
                let local = row[i].as_i64().expect("fact keys are non-null ints");
                match dim.and_then(|d| d.resolve(&ds.dataset_id, local)) {
                    Some(sk) => row[i] = Value::Int(sk),
                    None => {
                        let detail = format!("{} {local} not found", columns[i].name);
                        quarantine.push(QuarantineRecord::new(
                            &ds.dataset_id,
                            &fact.name,
                            &rec,
                            QuarantineReason::UnresolvedFk,
                            detail,
                        ));
                        continue 'rows;
                    }
                }
            }
            loaded.push(row);
        }
    }
    (loaded, staged_count)
}

#[derive(Debug, Clone, Copy)]
pub struct EtlOptions {
    pub partition_size: usize,
}

impl Default for EtlOptions {
    fn default() -> Self {
        EtlOptions { partition_size: DEFAULT_PARTITION_SIZE }
    }
}

/// Rebuilds every warehouse table from `staged`. Tables are replaced as a
/// unit, so a failure leaves the previous contents in place. Running twice
/// on the same inputs yields identical tables.
pub fn etl_from_staged(
    staged: &[&StagedDataset],
    warehouse: &Warehouse,
    schema: &ConstellationSchema,
    options: EtlOptions,
) -> Result<(EtlReport, Vec<QuarantineRecord>), EtlError> {
    let started = Instant::now();
    let mut report = EtlReport::default();
    let mut ids: Vec<String> = staged.iter().map(|d| d.dataset_id.clone()).collect();
    ids.sort();
    report.datasets = ids;

    let (dims, mut quarantine, mut issues) = conform_dimensions(staged, schema);
    let mut tables: Vec<Table> = Vec::new();
    for dim in &schema.dimensions {
        let c = &dims[&dim.name];
        let ts = TableSchema { name: dim.name.clone(), columns: dim.columns.clone() };
        let staged_rows: usize = staged.iter().filter_map(|d| d.tables.get(&dim.name)).map(RawTable::len).sum();
        let partitions = Table::build_partitions(&ts, &c.rows, options.partition_size, 0)?;
        tables.push(Table { schema: ts, partitions });
        let quarantined = quarantine.iter().filter(|q| q.table == dim.name).count();
        // Merged duplicates count as loaded: they resolve to a conformed row.
        report.tables.insert(dim.name.clone(), TableCounts { staged: staged_rows, loaded: staged_rows - quarantined, quarantined });
    }
    for fact in &schema.facts {
        let before = quarantine.len();
        let (rows, staged_rows) = load_fact_table(fact, staged, &dims, schema, &mut quarantine, &mut issues);
        let ts = schema.table_schema(&fact.name).expect("fact schema");
        let partitions = Table::build_partitions(&ts, &rows, options.partition_size, 0)?;
        report
            .tables
            .insert(fact.name.clone(), TableCounts { staged: staged_rows, loaded: rows.len(), quarantined: quarantine.len() - before });
        drop(rows);
        tables.push(Table { schema: ts, partitions });
    }
    warehouse.replace_tables(tables)?;

    for q in &quarantine {
        *report.quarantine_by_reason.entry(q.reason.as_str().to_string()).or_default() += 1;
    }
    report.issues = issues;
    report.duration_secs = started.elapsed().as_secs_f64();
    log::info!(
        "loaded {} datasets in {:.2}s, {} rows quarantined",
        report.datasets.len(),
        report.duration_secs,
        quarantine.len()
    );
    if let Some(root) = warehouse.root() {
        write_quarantine(&root.join("quarantine"), &quarantine, schema)?;
        std::fs::write(root.join("etl_report.json"), report.to_json()).map_err(StorageError::from)?;
    }
    Ok((report, quarantine))
}

/// Generates the synthetic sources in memory and loads them. Returns the
/// run report, the quarantine and the log of injected faults.
pub fn load_synthetic(
    spec: &SourceGenSpec,
    warehouse: &Warehouse,
    schema: &ConstellationSchema,
    options: EtlOptions,
) -> Result<(EtlReport, Vec<QuarantineRecord>, InjectionLog), EtlError> {
    let (datasets, log) = generate_datasets(spec, schema)?;
    let refs: Vec<&StagedDataset> = datasets.iter().collect();
    let (report, quarantine) = etl_from_staged(&refs, warehouse, schema, options)?;
    Ok((report, quarantine, log))
}

/// Stages every dataset directory under `source_root` (each holding a
/// `manifest.json`) into `raw`, then runs the pipeline over all staged data.
pub fn etl_run(
    source_root: &Path,
    raw: &RawStore,
    warehouse: &Warehouse,
    schema: &ConstellationSchema,
    options: EtlOptions,
) -> Result<(EtlReport, Vec<QuarantineRecord>), EtlError> {
    let mut dirs: Vec<_> = std::fs::read_dir(source_root)
        .map_err(StorageError::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").exists())
        .collect();
    dirs.sort();
    for dir in &dirs {
        raw.stage(dir)?;
    }
    let ids = raw.dataset_ids()?;
    if ids.is_empty() {
        return Err(EtlError::NoSources(source_root.display().to_string()));
    }
    let datasets: Vec<Arc<StagedDataset>> = ids.iter().filter_map(|id| raw.get(id).transpose()).collect::<Result<_, _>>()?;
    let refs: Vec<&StagedDataset> = datasets.iter().map(|d| d.as_ref()).collect();
    etl_from_staged(&refs, warehouse, schema, options)
}

/// One CSV per table: `dataset_id,row,<schema columns>,reason,detail`.
pub fn write_quarantine(dir: &Path, records: &[QuarantineRecord], schema: &ConstellationSchema) -> Result<(), StorageError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;
    let mut by_table: BTreeMap<&str, Vec<&QuarantineRecord>> = BTreeMap::new();
    for q in records {
        by_table.entry(q.table.as_str()).or_default().push(q);
    }
    for (table, recs) in by_table {
        let columns: Vec<String> =
            schema.table_schema(table).map(|t| t.columns.into_iter().map(|c| c.name).collect()).unwrap_or_default();
        let mut w = csv::Writer::from_path(dir.join(format!("{table}.csv"))).map_err(csv_err)?;
        let mut header = vec!["dataset_id".to_string(), "row".to_string()];
        header.extend(columns.iter().cloned());
        header.extend(["reason".to_string(), "detail".to_string()]);
        w.write_record(&header).map_err(csv_err)?;
        for q in recs {
            let mut rec = vec![q.dataset_id.clone(), q.row.to_string()];
            rec.extend(columns.iter().map(|c| q.payload.get(c).cloned().unwrap_or_default()));
            rec.extend([q.reason.as_str().to_string(), q.detail.clone()]);
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> StorageError {
    StorageError::Io(std::io::Error::other(e.to_string()))
}

/// Checks that every fact foreign key matches exactly one dimension row.
/// Returns the number of dangling references per fact table.
pub fn referential_violations(warehouse: &Warehouse, schema: &ConstellationSchema) -> Result<BTreeMap<String, usize>, StorageError> {
    let mut out = BTreeMap::new();
    for fact in &schema.facts {
        let table = warehouse.table(&fact.name)?;
        let mut bad = 0;
        for (i, dim) in fact.dimension_refs.iter().enumerate() {
            let d = schema.dimension(dim).expect("referenced dimension");
            let dt = warehouse.table(dim)?;
            let col = dt.schema.column_index(&d.surrogate_key).expect("key column");
            let mut keys: HashMap<i64, usize> = HashMap::new();
            for p in &dt.partitions {
                for r in 0..p.rows {
                    if let Some(k) = p.segments[col].get(r).as_i64() {
                        *keys.entry(k).or_default() += 1;
                    }
                }
            }
            for p in &table.partitions {
                for r in 0..p.rows {
                    let ok = p.segments[i].get(r).as_i64().is_some_and(|k| keys.get(&k) == Some(&1));
                    bad += usize::from(!ok);
                }
            }
        }
        out.insert(fact.name.clone(), bad);
    }
    Ok(out)
}
