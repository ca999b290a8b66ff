//! Column-level filters evaluated segment-wise during scans.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::sync::Arc;

use crate::schema::TableSchema;
use crate::value::{sql_cmp, Kind, LikePattern, Value};

use super::column::{ColumnData, ColumnSegment};
use super::StorageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    Ge,
}

impl CompareOp {
    #[inline]
    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CompareOp::Eq => ord == Ordering::Equal,
            CompareOp::Ge => ord != Ordering::Less,
        }
    }
}

/// Filter over the columns of a single table. NULL fails every leaf.
#[derive(Debug, Clone)]
pub enum ScanPredicate {
    Compare { column: String, op: CompareOp, value: Value },
    Like { column: String, pattern: String },
    InSet { column: String, values: Arc<HashSet<Value>> },
    And(Vec<ScanPredicate>),
    Or(Vec<ScanPredicate>),
}

impl ScanPredicate {
    pub fn eq(column: &str, value: Value) -> ScanPredicate {
        ScanPredicate::Compare { column: column.to_string(), op: CompareOp::Eq, value }
    }

    pub fn ge(column: &str, value: Value) -> ScanPredicate {
        ScanPredicate::Compare { column: column.to_string(), op: CompareOp::Ge, value }
    }

    pub fn like(column: &str, pattern: &str) -> ScanPredicate {
        ScanPredicate::Like { column: column.to_string(), pattern: pattern.to_string() }
    }

    /// Evaluates against a materialized row of `schema` (the reference semantics
    /// the segment-wise path must agree with).
    pub fn matches_row(&self, schema: &TableSchema, row: &[Value]) -> bool {
        match self {
            ScanPredicate::Compare { column, op, value } => {
                let Some(i) = schema.column_index(column) else { return false };
                sql_cmp(&row[i], value).is_some_and(|o| op.holds(o))
            }
            ScanPredicate::Like { column, pattern } => {
                let Some(i) = schema.column_index(column) else { return false };
                LikePattern::new(pattern).matches_value(&row[i])
            }
            ScanPredicate::InSet { column, values } => {
                let Some(i) = schema.column_index(column) else { return false };
                !row[i].is_null() && values.iter().any(|v| sql_cmp(&row[i], v) == Some(Ordering::Equal))
            }
            ScanPredicate::And(ps) => ps.iter().all(|p| p.matches_row(schema, row)),
            ScanPredicate::Or(ps) => ps.iter().any(|p| p.matches_row(schema, row)),
        }
    }

    pub fn columns(&self, out: &mut Vec<String>) {
        match self {
            ScanPredicate::Compare { column, .. } | ScanPredicate::Like { column, .. } | ScanPredicate::InSet { column, .. } => {
                if !out.contains(column) {
                    out.push(column.clone())
                }
            }
            ScanPredicate::And(ps) | ScanPredicate::Or(ps) => ps.iter().for_each(|p| p.columns(out)),
        }
    }
}

/// A predicate resolved against a table schema, literals coerced to column kinds.
#[derive(Debug, Clone)]
pub(crate) enum BoundPredicate {
    Compare { col: usize, op: CompareOp, value: Value },
    /// Literal can never compare with this column (e.g. unparsable date text).
    Never,
    Like { col: usize, pattern: LikePattern },
    InSet { col: usize, values: Arc<HashSet<Value>> },
    And(Vec<BoundPredicate>),
    Or(Vec<BoundPredicate>),
}

impl BoundPredicate {
    pub(crate) fn bind(p: &ScanPredicate, schema: &TableSchema) -> Result<BoundPredicate, StorageError> {
        let col_of = |name: &str| {
            schema.column_index(name).ok_or_else(|| StorageError::UnknownColumn {
                table: schema.name.clone(),
                column: name.to_string(),
            })
        };
        Ok(match p {
            ScanPredicate::Compare { column, op, value } => {
                let col = col_of(column)?;
                let kind = schema.columns[col].kind;
                match coerce_literal(value, kind) {
                    Some(value) => BoundPredicate::Compare { col, op: *op, value },
                    None => BoundPredicate::Never,
                }
            }
            ScanPredicate::Like { column, pattern } => {
                BoundPredicate::Like { col: col_of(column)?, pattern: LikePattern::new(pattern) }
            }
            ScanPredicate::InSet { column, values } => {
                let col = col_of(column)?;
                let kind = schema.columns[col].kind;
                let coerced: HashSet<Value> = values.iter().filter_map(|v| coerce_literal(v, kind)).collect();
                BoundPredicate::InSet { col, values: Arc::new(coerced) }
            }
            ScanPredicate::And(ps) => BoundPredicate::And(ps.iter().map(|p| Self::bind(p, schema)).collect::<Result<_, _>>()?),
            ScanPredicate::Or(ps) => BoundPredicate::Or(ps.iter().map(|p| Self::bind(p, schema)).collect::<Result<_, _>>()?),
        })
    }

    /// True when zone-map statistics prove no row of the partition can match.
    pub(crate) fn prunes(&self, segments: &[ColumnSegment]) -> bool {
        match self {
            BoundPredicate::Never => true,
            BoundPredicate::Compare { col, op, value } => {
                let seg = &segments[*col];
                if seg.null_mask.null_count() == seg.len() {
                    return true;
                }
                let Some((min, max)) = &seg.stats else { return false };
                let (Some(lo), Some(hi)) = (sql_cmp(value, min), sql_cmp(value, max)) else { return false };
                match op {
                    CompareOp::Eq => lo == Ordering::Less || hi == Ordering::Greater,
                    CompareOp::Ge => hi == Ordering::Greater,
                }
            }
            BoundPredicate::Like { col, .. } | BoundPredicate::InSet { col, .. } => {
                let seg = &segments[*col];
                seg.null_mask.null_count() == seg.len()
            }
            BoundPredicate::And(ps) => ps.iter().any(|p| p.prunes(segments)),
            BoundPredicate::Or(ps) => ps.iter().all(|p| p.prunes(segments)),
        }
    }

    /// Segment-wise evaluation into a selection vector.
    pub(crate) fn evaluate(&self, segments: &[ColumnSegment], n: usize) -> Vec<bool> {
        match self {
            BoundPredicate::Never => vec![false; n],
            BoundPredicate::Compare { col, op, value } => eval_compare(&segments[*col], *op, value),
            BoundPredicate::Like { col, pattern } => {
                let seg = &segments[*col];
                match &seg.values {
                    ColumnData::Text(vals) => {
                        (0..n).map(|i| !seg.null_mask.is_null(i) && pattern.matches(&vals[i])).collect()
                    }
                    _ => (0..n).map(|i| pattern.matches_value(&seg.get(i))).collect(),
                }
            }
            BoundPredicate::InSet { col, values } => {
                let seg = &segments[*col];
                (0..n).map(|i| !seg.null_mask.is_null(i) && values.contains(&seg.get(i))).collect()
            }
            BoundPredicate::And(ps) => {
                let mut sel = vec![true; n];
                for p in ps {
                    let s = p.evaluate(segments, n);
                    sel.iter_mut().zip(s).for_each(|(a, b)| *a &= b);
                }
                sel
            }
            BoundPredicate::Or(ps) => {
                let mut sel = vec![false; n];
                for p in ps {
                    let s = p.evaluate(segments, n);
                    sel.iter_mut().zip(s).for_each(|(a, b)| *a |= b);
                }
                sel
            }
        }
    }
}

fn coerce_literal(v: &Value, kind: Kind) -> Option<Value> {
    match (v, kind) {
        (Value::Text(_), Kind::Date) => v.coerce_to(Kind::Date),
        (Value::Int(i), Kind::Float64) => Some(Value::Float(*i as f64)),
        (Value::Float(f), Kind::Int64) if f.fract() == 0.0 && f.abs() < 9.0e15 => Some(Value::Int(*f as i64)),
        _ => Some(v.clone()),
    }
}

fn eval_compare(seg: &ColumnSegment, op: CompareOp, value: &Value) -> Vec<bool> {
    let nulls = &seg.null_mask;
    macro_rules! typed {
        ($vals:expr, $lit:expr) => {{
            let lit = $lit;
            match op {
                CompareOp::Eq => $vals.iter().enumerate().map(|(i, x)| *x == lit && !nulls.is_null(i)).collect(),
                CompareOp::Ge => $vals.iter().enumerate().map(|(i, x)| *x >= lit && !nulls.is_null(i)).collect(),
            }
        }};
    }
    match (&seg.values, value) {
        (ColumnData::Int(v), Value::Int(x)) => typed!(v, *x),
        (ColumnData::Date(v), Value::Date(x)) => typed!(v, *x),
        (ColumnData::Float(v), Value::Float(x)) => typed!(v, *x),
        (ColumnData::Float(v), Value::Int(x)) => typed!(v, *x as f64),
        _ => (0..seg.len()).map(|i| sql_cmp(&seg.get(i), value).is_some_and(|o| op.holds(o))).collect(),
    }
}
