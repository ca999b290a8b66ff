use std::sync::Arc;

use crate::schema::TableSchema;
use crate::value::{Kind, Value};

use super::column::ColumnSegment;
use super::predicate::{BoundPredicate, ScanPredicate};
use super::StorageError;

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub id: u32,
    pub rows: usize,
    /// One segment per table column, in schema order.
    pub segments: Vec<ColumnSegment>,
}

impl Partition {
    pub fn row(&self, i: usize) -> Vec<Value> {
        self.segments.iter().map(|s| s.get(i)).collect()
    }
}

/// Immutable table contents. Writers replace the whole `Arc<Table>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: TableSchema,
    pub partitions: Vec<Arc<Partition>>,
}

impl Table {
    pub fn empty(schema: TableSchema) -> Table {
        Table { schema, partitions: Vec::new() }
    }

    pub fn row_count(&self) -> usize {
        self.partitions.iter().map(|p| p.rows).sum()
    }

    pub fn next_partition_id(&self) -> u32 {
        self.partitions.iter().map(|p| p.id + 1).max().unwrap_or(0)
    }

    /// Checks types and splits `rows` into partitions of at most `partition_size` rows.
    pub fn build_partitions(
        schema: &TableSchema,
        rows: &[Vec<Value>],
        partition_size: usize,
        first_id: u32,
    ) -> Result<Vec<Arc<Partition>>, StorageError> {
        if partition_size == 0 {
            return Err(StorageError::InvalidArgument("partition_size must be at least 1".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            check_row(schema, i, row)?;
        }
        Ok(rows
            .chunks(partition_size)
            .enumerate()
            .map(|(k, chunk)| {
                let id = first_id + k as u32;
                let segments = schema
                    .columns
                    .iter()
                    .enumerate()
                    .map(|(c, col)| ColumnSegment::from_values(&schema.name, &col.name, id, col.kind, chunk.iter().map(|r| &r[c])))
                    .collect();
                Arc::new(Partition { id, rows: chunk.len(), segments })
            })
            .collect())
    }
}

fn check_row(schema: &TableSchema, index: usize, row: &[Value]) -> Result<(), StorageError> {
    if row.len() != schema.columns.len() {
        return Err(StorageError::TypeMismatch {
            table: schema.name.clone(),
            row: index,
            column: format!("<arity {} ≠ {}>", row.len(), schema.columns.len()),
            detail: "wrong number of values".into(),
        });
    }
    for (col, v) in schema.columns.iter().zip(row) {
        let ok = match v {
            Value::Null => col.nullable,
            Value::Int(_) => matches!(col.kind, Kind::Int64 | Kind::Float64),
            other => other.kind() == Some(col.kind),
        };
        if !ok {
            let detail = if v.is_null() {
                "NULL in non-nullable column".to_string()
            } else {
                format!("{} value in {} column", v.kind().unwrap(), col.kind)
            };
            return Err(StorageError::TypeMismatch { table: schema.name.clone(), row: index, column: col.name.clone(), detail });
        }
    }
    Ok(())
}

/// Columns produced by a scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Projection {
    All,
    Columns(Vec<String>),
}

impl Projection {
    pub fn of(cols: &[&str]) -> Projection {
        Projection::Columns(cols.iter().map(|s| s.to_string()).collect())
    }

    pub(crate) fn resolve(&self, schema: &TableSchema) -> Result<Vec<usize>, StorageError> {
        match self {
            Projection::All => Ok((0..schema.columns.len()).collect()),
            Projection::Columns(cols) => cols
                .iter()
                .map(|c| {
                    schema.column_index(c).ok_or_else(|| StorageError::UnknownColumn { table: schema.name.clone(), column: c.clone() })
                })
                .collect(),
        }
    }
}

/// Streaming scan over a table version captured at scan start. Rows come in
/// partition order; the predicate runs on column segments before any row
/// is materialized.
pub struct Scan {
    table: Arc<Table>,
    predicate: Option<BoundPredicate>,
    columns: Vec<usize>,
    partition: usize,
    selection: Vec<u32>,
    cursor: usize,
    pruned: usize,
}

impl Scan {
    pub(crate) fn new(table: Arc<Table>, predicate: Option<&ScanPredicate>, projection: &Projection) -> Result<Scan, StorageError> {
        let columns = projection.resolve(&table.schema)?;
        let predicate = predicate.map(|p| BoundPredicate::bind(p, &table.schema)).transpose()?;
        Ok(Scan { table, predicate, columns, partition: 0, selection: Vec::new(), cursor: 0, pruned: 0 })
    }

    pub fn schema(&self) -> &TableSchema {
        &self.table.schema
    }

    /// Names of the projected columns, in output order.
    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|&c| self.table.schema.columns[c].name.clone()).collect()
    }

    /// Partitions skipped by zone-map pruning so far.
    pub fn pruned_partitions(&self) -> usize {
        self.pruned
    }

    fn load_next_partition(&mut self) -> bool {
        while self.partition < self.table.partitions.len() {
            let p = &self.table.partitions[self.partition];
            self.partition += 1;
            self.cursor = 0;
            self.selection.clear();
            match &self.predicate {
                None => self.selection.extend(0..p.rows as u32),
                Some(pred) => {
                    if pred.prunes(&p.segments) {
                        self.pruned += 1;
                        continue;
                    }
                    let sel = pred.evaluate(&p.segments, p.rows);
                    self.selection.extend(sel.iter().enumerate().filter(|(_, s)| **s).map(|(i, _)| i as u32));
                }
            }
            if !self.selection.is_empty() {
                return true;
            }
        }
        false
    }
}

impl Iterator for Scan {
    type Item = Vec<Value>;

    fn next(&mut self) -> Option<Vec<Value>> {
        if self.cursor >= self.selection.len() && !self.load_next_partition() {
            return None;
        }
        let p = &self.table.partitions[self.partition - 1];
        let i = self.selection[self.cursor] as usize;
        self.cursor += 1;
        Some(self.columns.iter().map(|&c| p.segments[c].get(i)).collect())
    }
}
