//! Scalar values shared by every tier: typed cells, SQL comparison rules,
//! `LIKE` matching and calendar helpers.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

/// Column type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Int64,
    Float64,
    Text,
    Date,
    Bool,
}

impl Kind {
    pub fn is_numeric(self) -> bool {
        matches!(self, Kind::Int64 | Kind::Float64)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Int64 => "int64",
            Kind::Float64 => "float64",
            Kind::Text => "text",
            Kind::Date => "date",
            Kind::Bool => "bool",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single cell. Dates are days since 1970-01-01.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Date(i64),
    Text(Arc<str>),
}

impl Value {
    pub fn text(s: impl AsRef<str>) -> Value {
        Value::Text(Arc::from(s.as_ref()))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn kind(&self) -> Option<Kind> {
        match self {
            Value::Null => None,
            Value::Bool(_) => Some(Kind::Bool),
            Value::Int(_) => Some(Kind::Int64),
            Value::Float(_) => Some(Kind::Float64),
            Value::Date(_) => Some(Kind::Date),
            Value::Text(_) => Some(Kind::Text),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) | Value::Date(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Parses a raw field into `kind`. Empty input is NULL.
    pub fn parse_as(kind: Kind, raw: &str) -> Result<Value, String> {
        if raw.is_empty() {
            return Ok(Value::Null);
        }
        match kind {
            Kind::Text => Ok(Value::text(raw)),
            Kind::Int64 => raw
                .trim()
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|_| format!("'{raw}' is not an int64")),
            Kind::Float64 => match raw.trim().parse::<f64>() {
                Ok(f) if f.is_finite() => Ok(Value::Float(f)),
                _ => Err(format!("'{raw}' is not a finite float64")),
            },
            Kind::Date => parse_date(raw.trim())
                .map(Value::Date)
                .ok_or_else(|| format!("'{raw}' is not an ISO-8601 date")),
            Kind::Bool => match raw.trim().to_ascii_lowercase().as_str() {
                "true" | "t" | "1" | "yes" => Ok(Value::Bool(true)),
                "false" | "f" | "0" | "no" => Ok(Value::Bool(false)),
                _ => Err(format!("'{raw}' is not a bool")),
            },
        }
    }

    /// Converts to `kind` if the value is compatible (int widens to float,
    /// ISO text narrows to date).
    pub fn coerce_to(&self, kind: Kind) -> Option<Value> {
        match (self, kind) {
            (Value::Null, _) => Some(Value::Null),
            (Value::Int(i), Kind::Float64) => Some(Value::Float(*i as f64)),
            (Value::Text(s), Kind::Date) => parse_date(s).map(Value::Date),
            (v, k) if v.kind() == Some(k) => Some(v.clone()),
            _ => None,
        }
    }

    /// Text rendering used by CSV output and `LIKE`. NULL renders empty.
    pub fn render(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => format_float(*f),
            Value::Date(d) => format_date(*d),
            Value::Text(s) => s.to_string(),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) => 2,
            Value::Float(_) => 3,
            Value::Date(_) => 4,
            Value::Text(_) => 5,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            other => f.write_str(&other.render()),
        }
    }
}

/// Total order used for canonical row ordering, sorting and grouping.
/// NULL sorts first; values of different kinds order by kind.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Date(a), Value::Date(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.as_bytes().cmp(b.as_bytes()),
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u8(self.rank());
        match self {
            Value::Null => {}
            Value::Bool(b) => b.hash(state),
            Value::Int(i) | Value::Date(i) => i.hash(state),
            Value::Float(f) => f.to_bits().hash(state),
            Value::Text(s) => s.hash(state),
        }
    }
}

/// SQL comparison: `None` when either side is NULL or the kinds are not
/// comparable. Int and float compare numerically; a date compares with ISO
/// text by parsing the text.
pub fn sql_cmp(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Null, _) | (_, Value::Null) => None,
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Int(x), Value::Float(y)) => (*x as f64).partial_cmp(y),
        (Value::Float(x), Value::Int(y)) => x.partial_cmp(&(*y as f64)),
        (Value::Float(x), Value::Float(y)) => x.partial_cmp(y),
        (Value::Date(x), Value::Date(y)) => Some(x.cmp(y)),
        (Value::Date(x), Value::Text(t)) => parse_date(t).map(|y| x.cmp(&y)),
        (Value::Text(t), Value::Date(y)) => parse_date(t).map(|x| x.cmp(y)),
        (Value::Text(x), Value::Text(y)) => Some(x.as_bytes().cmp(y.as_bytes())),
        (Value::Bool(x), Value::Bool(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

/// Whether two kinds may appear on either side of `=` / `>=`.
pub fn comparable(a: Kind, b: Kind) -> bool {
    a == b
        || (a.is_numeric() && b.is_numeric())
        || matches!((a, b), (Kind::Date, Kind::Text) | (Kind::Text, Kind::Date))
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(f: f64) -> String {
    let s = f.to_string();
    if s.contains(['.', 'e', 'E', 'N', 'i']) {
        s
    } else {
        format!("{s}.0")
    }
}

const EPOCH_CE_DAYS: i64 = 719_163;

pub fn parse_date(s: &str) -> Option<i64> {
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    Some(d.num_days_from_ce() as i64 - EPOCH_CE_DAYS)
}

pub fn date_from_ymd(year: i32, month: u32, day: u32) -> Option<i64> {
    let d = NaiveDate::from_ymd_opt(year, month, day)?;
    Some(d.num_days_from_ce() as i64 - EPOCH_CE_DAYS)
}

fn to_naive(days: i64) -> Option<NaiveDate> {
    NaiveDate::from_num_days_from_ce_opt(i32::try_from(days + EPOCH_CE_DAYS).ok()?)
}

pub fn format_date(days: i64) -> String {
    match to_naive(days) {
        Some(d) => d.format("%Y-%m-%d").to_string(),
        None => format!("#{days}"),
    }
}

pub fn year_of(days: i64) -> i64 {
    to_naive(days).map(|d| d.year() as i64).unwrap_or(0)
}

pub fn month_of(days: i64) -> u32 {
    to_naive(days).map(|d| d.month()).unwrap_or(0)
}

/// Compiled `LIKE` pattern: `%` matches any run, `_` one character.
/// Matching is case-insensitive.
#[derive(Debug, Clone, PartialEq)]
pub struct LikePattern {
    tokens: Vec<LikeToken>,
}

#[derive(Debug, Clone, PartialEq)]
enum LikeToken {
    Any,
    One,
    Lit(char),
}

impl LikePattern {
    pub fn new(pattern: &str) -> LikePattern {
        let mut tokens = Vec::new();
        for c in pattern.chars() {
            match c {
                '%' => {
                    if tokens.last() != Some(&LikeToken::Any) {
                        tokens.push(LikeToken::Any);
                    }
                }
                '_' => tokens.push(LikeToken::One),
                c => tokens.extend(c.to_lowercase().map(LikeToken::Lit)),
            }
        }
        LikePattern { tokens }
    }

    pub fn matches(&self, text: &str) -> bool {
        let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
        // Greedy matcher with single backtrack point for the last `%`.
        let (mut ti, mut pi) = (0usize, 0usize);
        let mut star: Option<(usize, usize)> = None;
        while ti < chars.len() {
            match self.tokens.get(pi) {
                Some(LikeToken::Any) => {
                    star = Some((pi, ti));
                    pi += 1;
                }
                Some(LikeToken::One) => {
                    ti += 1;
                    pi += 1;
                }
                Some(LikeToken::Lit(c)) if *c == chars[ti] => {
                    ti += 1;
                    pi += 1;
                }
                _ => match star {
                    Some((sp, st)) => {
                        pi = sp + 1;
                        ti = st + 1;
                        star = Some((sp, st + 1));
                    }
                    None => return false,
                },
            }
        }
        self.tokens[pi..].iter().all(|t| *t == LikeToken::Any)
    }

    /// Matches a non-null value by its text rendering.
    pub fn matches_value(&self, v: &Value) -> bool {
        match v {
            Value::Null => false,
            Value::Text(s) => self.matches(s),
            other => self.matches(&other.render()),
        }
    }
}

/// Order-independent, correctly rounded float summation (Shewchuk's
/// non-overlapping partials). Grouping or merge order never changes the
/// result, so every executor produces bit-identical sums.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> ExactSum {
        ExactSum::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    pub fn value(&self) -> f64 {
        let mut n = self.partials.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = self.partials[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = self.partials[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Half-way correction so the result is correctly rounded.
        if n > 0 && ((lo < 0.0 && self.partials[n - 1] < 0.0) || (lo > 0.0 && self.partials[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}
