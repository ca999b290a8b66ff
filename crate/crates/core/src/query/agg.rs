//! Aggregate accumulators shared by both executors and the cube builder.

use crate::value::{ExactSum, Kind, Value};

use super::ast::AggFunc;

#[derive(Debug, Clone)]
pub enum Accumulator {
    Count(i64),
    SumInt { total: i128, seen: bool },
    SumFloat { total: ExactSum, seen: bool },
    Max(Option<Value>),
}

impl Accumulator {
    /// `input` is the argument column's kind (None for `COUNT(*)`).
    pub fn new(func: AggFunc, input: Option<Kind>) -> Accumulator {
        match func {
            AggFunc::Count => Accumulator::Count(0),
            AggFunc::Max => Accumulator::Max(None),
            AggFunc::Sum if input == Some(Kind::Int64) => Accumulator::SumInt { total: 0, seen: false },
            AggFunc::Sum => Accumulator::SumFloat { total: ExactSum::new(), seen: false },
        }
    }

    /// Feeds one argument value (`COUNT(*)` callers pass any non-null value).
    pub fn update(&mut self, v: &Value) {
        if v.is_null() {
            return;
        }
        match self {
            Accumulator::Count(n) => *n += 1,
            Accumulator::SumInt { total, seen } => {
                if let Value::Int(i) = v {
                    *total += *i as i128;
                    *seen = true;
                }
            }
            Accumulator::SumFloat { total, seen } => {
                if let Some(f) = v.as_f64() {
                    total.add(f);
                    *seen = true;
                }
            }
            Accumulator::Max(m) => {
                if m.as_ref().is_none_or(|cur| v > cur) {
                    *m = Some(v.clone());
                }
            }
        }
    }

    pub fn count_row(&mut self) {
        if let Accumulator::Count(n) = self {
            *n += 1;
        }
    }

    pub fn merge(&mut self, other: &Accumulator) {
        match (self, other) {
            (Accumulator::Count(a), Accumulator::Count(b)) => *a += b,
            (Accumulator::SumInt { total: a, seen: sa }, Accumulator::SumInt { total: b, seen: sb }) => {
                *a += b;
                *sa |= sb;
            }
            (Accumulator::SumFloat { total: a, seen: sa }, Accumulator::SumFloat { total: b, seen: sb }) => {
                a.merge(b);
                *sa |= sb;
            }
            (Accumulator::Max(a), Accumulator::Max(b)) => {
                if let Some(bv) = b {
                    if a.as_ref().is_none_or(|av| bv > av) {
                        *a = Some(bv.clone());
                    }
                }
            }
            _ => panic!("merging accumulators of different aggregates"),
        }
    }

    /// Final value; the flag reports an int64 SUM that did not fit and was
    /// returned as float64.
    pub fn finish(&self) -> (Value, bool) {
        match self {
            Accumulator::Count(n) => (Value::Int(*n), false),
            Accumulator::SumInt { seen: false, .. } | Accumulator::SumFloat { seen: false, .. } => (Value::Null, false),
            Accumulator::SumInt { total, .. } => match i64::try_from(*total) {
                Ok(i) => (Value::Int(i), false),
                Err(_) => (Value::Float(*total as f64), true),
            },
            Accumulator::SumFloat { total, .. } => (Value::Float(total.value()), false),
            Accumulator::Max(m) => (m.clone().unwrap_or(Value::Null), false),
        }
    }
}

/// Result kind of an aggregate over a column of kind `input`.
pub fn result_kind(func: AggFunc, input: Option<Kind>) -> Kind {
    match func {
        AggFunc::Count => Kind::Int64,
        AggFunc::Sum => {
            if input == Some(Kind::Int64) {
                Kind::Int64
            } else {
                Kind::Float64
            }
        }
        AggFunc::Max => input.unwrap_or(Kind::Int64),
    }
}

/// Whether `func` accepts an argument of kind `input`.
pub fn accepts(func: AggFunc, input: Kind) -> bool {
    func != AggFunc::Sum || input.is_numeric()
}

/// Promotes the int values of `column` to float (after a SUM overflow in
/// any of its groups) so the column keeps a single kind.
pub fn promote_column(rows: &mut [Vec<Value>], column: usize) {
    for r in rows {
        if let Value::Int(i) = r[column] {
            r[column] = Value::Float(i as f64);
        }
    }
}

/// After an overflow somewhere in the pipeline, makes every int64 output
/// column that carries a float value a float64 column.
pub fn settle_overflow(columns: &mut [super::result::ResultColumn], rows: &mut [Vec<Value>]) {
    for (i, c) in columns.iter_mut().enumerate() {
        if c.kind == Kind::Int64 && rows.iter().any(|r| matches!(r[i], Value::Float(_))) {
            c.kind = Kind::Float64;
            promote_column(rows, i);
        }
    }
}
