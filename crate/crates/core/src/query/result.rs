use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::value::{Kind, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultColumn {
    pub name: String,
    pub kind: Kind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    pub columns: Vec<ResultColumn>,
    pub rows: Vec<Vec<Value>>,
    /// True iff the query had ORDER BY.
    pub ordered: bool,
    /// Set when an int64 SUM overflowed and was promoted to float64.
    pub sum_overflow: bool,
}

impl ResultSet {
    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Multiset equality of rows (column names and kinds must match too).
    pub fn bag_equal(&self, other: &ResultSet) -> bool {
        if self.columns != other.columns || self.rows.len() != other.rows.len() {
            return false;
        }
        let mut a = self.rows.clone();
        let mut b = other.rows.clone();
        a.sort();
        b.sort();
        a == b
    }

    /// Sequence equality for ordered results, bag equality otherwise.
    pub fn equivalent(&self, other: &ResultSet) -> bool {
        if self.ordered || other.ordered {
            self.ordered == other.ordered && self.columns == other.columns && self.rows == other.rows
        } else {
            self.bag_equal(other)
        }
    }

    /// RFC 4180 CSV with a header row. NULL is an empty field.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| c.name.as_str())).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(Value::render)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| serde_json::Value::Array(r.iter().map(value_to_json).collect()))
            .collect();
        serde_json::json!({
            "columns": self.columns,
            "rows": rows,
            "ordered": self.ordered,
            "sum_overflow": self.sum_overflow,
        })
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Value::render).collect()).collect();
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.name.chars().count()).collect();
        for r in &cells {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, fields: &mut dyn Iterator<Item = &str>| {
            let parts: Vec<String> = fields.zip(&widths).map(|(f, w)| format!("{f:<w$}")).collect();
            let _ = writeln!(out, "| {} |", parts.join(" | "));
        };
        line(&mut out, &mut self.columns.iter().map(|c| c.name.as_str()));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
        for r in &cells {
            line(&mut out, &mut r.iter().map(String::as_str));
        }
        let _ = writeln!(out, "({} row{})", self.rows.len(), if self.rows.len() == 1 { "" } else { "s" });
        out
    }
}

pub fn value_to_json(v: &Value) -> serde_json::Value {
    match v {
        Value::Null => serde_json::Value::Null,
        Value::Bool(b) => (*b).into(),
        Value::Int(i) => (*i).into(),
        Value::Float(f) => serde_json::Number::from_f64(*f).map_or(serde_json::Value::Null, serde_json::Value::Number),
        Value::Date(_) | Value::Text(_) => v.render().into(),
    }
}
