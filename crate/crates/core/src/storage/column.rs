use std::sync::Arc;

use crate::value::{Kind, Value};

/// Bitset marking null slots.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NullMask {
    words: Vec<u64>,
    len: usize,
}

impl NullMask {
    pub fn with_len(len: usize) -> NullMask {
        NullMask { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, null: bool) {
        if self.len % 64 == 0 {
            self.words.push(0);
        }
        if null {
            self.words[self.len / 64] |= 1 << (self.len % 64);
        }
        self.len += 1;
    }

    #[inline]
    pub fn is_null(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn null_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in 0..self.len {
            if self.is_null(i) {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> NullMask {
        let mut m = NullMask::with_len(len);
        for i in 0..len {
            if bytes[i / 8] >> (i % 8) & 1 == 1 {
                m.set(i);
            }
        }
        m
    }
}

/// Typed value vector; null slots hold a default value.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Int(Vec<i64>),
    Float(Vec<f64>),
    Bool(Vec<bool>),
    Date(Vec<i64>),
    Text(Vec<Arc<str>>),
}

impl ColumnData {
    pub fn with_capacity(kind: Kind, cap: usize) -> ColumnData {
        match kind {
            Kind::Int64 => ColumnData::Int(Vec::with_capacity(cap)),
            Kind::Float64 => ColumnData::Float(Vec::with_capacity(cap)),
            Kind::Bool => ColumnData::Bool(Vec::with_capacity(cap)),
            Kind::Date => ColumnData::Date(Vec::with_capacity(cap)),
            Kind::Text => ColumnData::Text(Vec::with_capacity(cap)),
        }
    }

    pub fn kind(&self) -> Kind {
        match self {
            ColumnData::Int(_) => Kind::Int64,
            ColumnData::Float(_) => Kind::Float64,
            ColumnData::Bool(_) => Kind::Bool,
            ColumnData::Date(_) => Kind::Date,
            ColumnData::Text(_) => Kind::Text,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Int(v) | ColumnData::Date(v) => v.len(),
            ColumnData::Float(v) => v.len(),
            ColumnData::Bool(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends a value already checked against the column kind; NULL pushes a placeholder.
    fn push(&mut self, v: &Value) {
        match (self, v) {
            (ColumnData::Int(c), Value::Int(x)) => c.push(*x),
            (ColumnData::Float(c), Value::Float(x)) => c.push(*x),
            (ColumnData::Float(c), Value::Int(x)) => c.push(*x as f64),
            (ColumnData::Bool(c), Value::Bool(x)) => c.push(*x),
            (ColumnData::Date(c), Value::Date(x)) => c.push(*x),
            (ColumnData::Text(c), Value::Text(x)) => c.push(x.clone()),
            (ColumnData::Int(c), _) | (ColumnData::Date(c), _) => c.push(0),
            (ColumnData::Float(c), _) => c.push(0.0),
            (ColumnData::Bool(c), _) => c.push(false),
            (ColumnData::Text(c), _) => c.push(Arc::from("")),
        }
    }

    #[inline]
    fn get(&self, i: usize) -> Value {
        match self {
            ColumnData::Int(c) => Value::Int(c[i]),
            ColumnData::Float(c) => Value::Float(c[i]),
            ColumnData::Bool(c) => Value::Bool(c[i]),
            ColumnData::Date(c) => Value::Date(c[i]),
            ColumnData::Text(c) => Value::Text(c[i].clone()),
        }
    }
}

/// One column of one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSegment {
    pub table: String,
    pub column: String,
    pub partition_id: u32,
    pub values: ColumnData,
    pub null_mask: NullMask,
    /// Min/max over non-null values, for pruning.
    pub stats: Option<(Value, Value)>,
}

impl ColumnSegment {
    pub fn new(table: &str, column: &str, partition_id: u32, values: ColumnData, null_mask: NullMask) -> ColumnSegment {
        let mut seg = ColumnSegment {
            table: table.to_string(),
            column: column.to_string(),
            partition_id,
            values,
            null_mask,
            stats: None,
        };
        seg.stats = seg.compute_stats();
        seg
    }

    /// Builds a segment from values already validated against `kind`.
    pub fn from_values<'a>(
        table: &str,
        column: &str,
        partition_id: u32,
        kind: Kind,
        values: impl ExactSizeIterator<Item = &'a Value>,
    ) -> ColumnSegment {
        let mut data = ColumnData::with_capacity(kind, values.len());
        let mut nulls = NullMask::with_len(0);
        for v in values {
            nulls.push(v.is_null());
            data.push(v);
        }
        ColumnSegment::new(table, column, partition_id, data, nulls)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> Value {
        if self.null_mask.is_null(i) {
            Value::Null
        } else {
            self.values.get(i)
        }
    }

    fn compute_stats(&self) -> Option<(Value, Value)> {
        let mut min: Option<Value> = None;
        let mut max: Option<Value> = None;
        match &self.values {
            ColumnData::Int(_) | ColumnData::Float(_) | ColumnData::Date(_) => {}
            _ => return None,
        }
        for i in 0..self.len() {
            if self.null_mask.is_null(i) {
                continue;
            }
            let v = self.values.get(i);
            if min.as_ref().map_or(true, |m| v < *m) {
                min = Some(v.clone());
            }
            if max.as_ref().map_or(true, |m| v > *m) {
                max = Some(v);
            }
        }
        Some((min?, max?))
    }
}
