//! Constellation schema catalog: fact and dimension definitions, OLAP
//! hierarchies and structural validation.

mod default;
mod dictionary;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::Kind;

pub use default::build_default_schema;
pub use dictionary::data_dictionary;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("unknown hierarchy '{0}'")]
    UnknownHierarchy(String),
    #[error("unknown table '{0}'")]
    UnknownTable(String),
    #[error("invalid schema JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: Kind,
    pub nullable: bool,
}

impl ColumnDef {
    pub fn new(name: &str, kind: Kind, nullable: bool) -> ColumnDef {
        ColumnDef { name: name.to_string(), kind, nullable }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionDef {
    pub name: String,
    pub surrogate_key: String,
    pub natural_key: Vec<String>,
    pub columns: Vec<ColumnDef>,
    /// Parent dimension for support tables (linked to no fact).
    pub supports: Option<String>,
}

impl DimensionDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactDef {
    pub name: String,
    pub dimension_refs: Vec<String>,
    pub measures: Vec<ColumnDef>,
}

/// How a level's member is derived from its source column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelDerive {
    /// The column value itself.
    #[default]
    Identity,
    /// `YYYY-MM` of a date column.
    Month,
    /// Calendar year of a date column.
    Year,
    /// `YYYY-<lowercased value>`, the year taken from the named date column
    /// of the same dimension.
    YearQualified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDef {
    pub name: String,
    pub dimension: String,
    pub column: String,
    #[serde(default)]
    pub derive: LevelDerive,
    /// Date column supplying the year for `YearQualified` levels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year_column: Option<String>,
}

impl LevelDef {
    pub fn member_kind(&self, source: Kind) -> Kind {
        match self.derive {
            LevelDerive::Identity => source,
            LevelDerive::Year => Kind::Int64,
            LevelDerive::Month | LevelDerive::YearQualified => Kind::Text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyDef {
    pub name: String,
    /// Finest level first.
    pub levels: Vec<LevelDef>,
}

/// Name, column list and role of one physical table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

impl TableSchema {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstellationSchema {
    pub facts: Vec<FactDef>,
    pub dimensions: Vec<DimensionDef>,
    pub hierarchies: Vec<HierarchyDef>,
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub table: String,
    pub column: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.column {
            Some(c) => write!(f, "{}.{}: {}", self.table, c, self.message),
            None => write!(f, "{}: {}", self.table, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, table: &str, column: Option<&str>, message: String) {
        self.violations.push(Violation {
            table: table.to_string(),
            column: column.map(str::to_string),
            message,
        });
    }
}

/// Expected (dimension count, measure count) per fact of the default shape.
pub const FACT_SHAPE: [(&str, usize, usize); 3] = [("FieldFact", 12, 6), ("Order", 4, 6), ("Sale", 4, 5)];
pub const DIMENSION_COUNT: usize = 19;
pub const SUPPORT_TABLES: [&str; 3] = ["CropState", "Inspection", "Site"];
pub const SHARED_DIMENSIONS: [&str; 2] = ["Crop", "Farmer"];

impl ConstellationSchema {
    pub fn from_json(text: &str) -> Result<ConstellationSchema, SchemaError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn dimension(&self, name: &str) -> Option<&DimensionDef> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    pub fn fact(&self, name: &str) -> Option<&FactDef> {
        self.facts.iter().find(|f| f.name == name)
    }

    pub fn hierarchy(&self, name: &str) -> Option<&HierarchyDef> {
        self.hierarchies.iter().find(|h| h.name == name)
    }

    /// Columns of a fact table: one foreign key per dimension reference
    /// (named after the dimension's surrogate key), then the measures.
    pub fn fact_columns(&self, fact: &FactDef) -> Vec<ColumnDef> {
        let mut cols: Vec<ColumnDef> = fact
            .dimension_refs
            .iter()
            .map(|d| {
                let key = self.dimension(d).map(|d| d.surrogate_key.clone()).unwrap_or_else(|| format!("{d}ID"));
                ColumnDef { name: key, kind: Kind::Int64, nullable: false }
            })
            .collect();
        cols.extend(fact.measures.iter().cloned());
        cols
    }

    pub fn table_schema(&self, name: &str) -> Option<TableSchema> {
        if let Some(d) = self.dimension(name) {
            return Some(TableSchema { name: d.name.clone(), columns: d.columns.clone() });
        }
        self.fact(name).map(|f| TableSchema { name: f.name.clone(), columns: self.fact_columns(f) })
    }

    /// All physical tables: dimensions first, then facts.
    pub fn table_names(&self) -> Vec<String> {
        self.dimensions.iter().map(|d| d.name.clone()).chain(self.facts.iter().map(|f| f.name.clone())).collect()
    }

    /// Dimension-to-dimension links, by convention: a column carrying another
    /// dimension's surrogate key name references that dimension.
    pub fn dimension_links(&self, dim: &DimensionDef) -> Vec<(String, String)> {
        dim.columns
            .iter()
            .filter(|c| c.name != dim.surrogate_key)
            .filter_map(|c| {
                self.dimensions
                    .iter()
                    .find(|other| other.name != dim.name && other.surrogate_key == c.name)
                    .map(|other| (c.name.clone(), other.name.clone()))
            })
            .collect()
    }

    /// Dimensions in an order where every linked parent precedes its children.
    pub fn dimension_load_order(&self) -> Vec<&DimensionDef> {
        let mut done: BTreeSet<&str> = BTreeSet::new();
        let mut out = Vec::new();
        while out.len() < self.dimensions.len() {
            let before = out.len();
            for d in &self.dimensions {
                if done.contains(d.name.as_str()) {
                    continue;
                }
                let ready = self.dimension_links(d).iter().all(|(_, p)| done.contains(p.as_str()));
                if ready {
                    done.insert(&d.name);
                    out.push(d);
                }
            }
            if out.len() == before {
                // Cycle: append the rest in declaration order.
                out.extend(self.dimensions.iter().filter(|d| !done.contains(d.name.as_str())));
                break;
            }
        }
        out
    }

    /// Path of links from `from` to `to` as (child dimension, fk column, parent dimension) hops.
    pub fn link_path(&self, from: &str, to: &str) -> Option<Vec<(String, String, String)>> {
        if from == to {
            return Some(Vec::new());
        }
        let mut queue = std::collections::VecDeque::from([from.to_string()]);
        let mut prev: BTreeMap<String, (String, String)> = BTreeMap::new();
        while let Some(cur) = queue.pop_front() {
            let Some(dim) = self.dimension(&cur) else { continue };
            for (col, parent) in self.dimension_links(dim) {
                if parent == from || prev.contains_key(&parent) {
                    continue;
                }
                prev.insert(parent.clone(), (cur.clone(), col));
                if parent == to {
                    let mut path = Vec::new();
                    let mut node = to.to_string();
                    while node != from {
                        let (child, col) = prev[&node].clone();
                        path.push((child.clone(), col, node.clone()));
                        node = child;
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(parent);
            }
        }
        None
    }

    /// Dimensions linked to at least one fact.
    pub fn linked_dimensions(&self) -> BTreeSet<&str> {
        self.facts.iter().flat_map(|f| f.dimension_refs.iter().map(String::as_str)).collect()
    }
}

/// Returns the levels of `hierarchy`, finest first.
pub fn hierarchy_levels<'a>(schema: &'a ConstellationSchema, hierarchy: &str) -> Result<&'a [LevelDef], SchemaError> {
    schema
        .hierarchy(hierarchy)
        .map(|h| h.levels.as_slice())
        .ok_or_else(|| SchemaError::UnknownHierarchy(hierarchy.to_string()))
}

/// Checks every structural invariant of the constellation shape. Violations
/// come back sorted so the report is deterministic.
pub fn validate_schema(schema: &ConstellationSchema) -> ValidationReport {
    let mut r = ValidationReport::default();

    if schema.facts.len() != FACT_SHAPE.len() {
        r.push("<schema>", None, format!("fact count {} ≠ {}", schema.facts.len(), FACT_SHAPE.len()));
    }
    if schema.dimensions.len() != DIMENSION_COUNT {
        r.push("<schema>", None, format!("dimension count {} ≠ {}", schema.dimensions.len(), DIMENSION_COUNT));
    }

    let mut seen_tables = BTreeSet::new();
    for name in schema.table_names() {
        if !seen_tables.insert(name.clone()) {
            r.push(&name, None, "duplicate table name".to_string());
        }
    }

    for dim in &schema.dimensions {
        check_columns(&mut r, &dim.name, &dim.columns);
        match dim.column(&dim.surrogate_key) {
            None => r.push(&dim.name, Some(&dim.surrogate_key), "surrogate key is not a column".into()),
            Some(c) if c.kind != Kind::Int64 || c.nullable => {
                r.push(&dim.name, Some(&c.name), "key column must be non-nullable int64".into())
            }
            _ => {}
        }
        if dim.natural_key.is_empty() {
            r.push(&dim.name, None, "natural key is empty".into());
        }
        for k in &dim.natural_key {
            if k == &dim.surrogate_key {
                r.push(&dim.name, Some(k), "natural key includes the surrogate key".into());
            } else if dim.column(k).is_none() {
                r.push(&dim.name, Some(k), "natural key column is not a column".into());
            }
        }
        for (col, _) in schema.dimension_links(dim) {
            if let Some(c) = dim.column(&col) {
                if c.kind != Kind::Int64 || c.nullable {
                    r.push(&dim.name, Some(&col), "key column must be non-nullable int64".into());
                }
            }
        }
        if let Some(parent) = &dim.supports {
            if schema.dimension(parent).is_none() {
                r.push(&dim.name, None, format!("supports unknown dimension '{parent}'"));
            }
            if schema.linked_dimensions().contains(dim.name.as_str()) {
                r.push(&dim.name, None, "support table is referenced by a fact".into());
            }
        }
    }

    for fact in &schema.facts {
        let cols = schema.fact_columns(fact);
        check_columns(&mut r, &fact.name, &cols);
        if let Some((_, dims, measures)) = FACT_SHAPE.iter().find(|(n, _, _)| *n == fact.name) {
            if fact.dimension_refs.len() != *dims {
                r.push(&fact.name, None, format!("{} dimension count {} ≠ {}", fact.name, fact.dimension_refs.len(), dims));
            }
            if fact.measures.len() != *measures {
                r.push(&fact.name, None, format!("{} measure count {} ≠ {}", fact.name, fact.measures.len(), measures));
            }
        } else {
            r.push(&fact.name, None, "not one of FieldFact, Order, Sale".into());
        }
        let mut refs = BTreeSet::new();
        for d in &fact.dimension_refs {
            if !refs.insert(d) {
                r.push(&fact.name, None, format!("dimension '{d}' referenced twice"));
            }
            if schema.dimension(d).is_none() {
                r.push(&fact.name, None, format!("references unknown dimension '{d}'"));
            }
        }
        for m in &fact.measures {
            if !m.kind.is_numeric() {
                r.push(&fact.name, Some(&m.name), format!("measure must be numeric, found {}", m.kind));
            }
        }
    }

    let mut fact_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for f in &schema.facts {
        for d in &f.dimension_refs {
            *fact_counts.entry(d.as_str()).or_default() += 1;
        }
    }
    for shared in SHARED_DIMENSIONS {
        if fact_counts.get(shared).copied().unwrap_or(0) < 2 {
            r.push(shared, None, "must be linked to at least two facts".into());
        }
    }
    let unlinked: BTreeSet<&str> =
        schema.dimensions.iter().map(|d| d.name.as_str()).filter(|d| !fact_counts.contains_key(d)).collect();
    let expected: BTreeSet<&str> = SUPPORT_TABLES.into_iter().collect();
    if unlinked != expected {
        r.push("<schema>", None, format!("dimensions linked to no fact {:?} ≠ {:?}", unlinked, expected));
    }

    for h in &schema.hierarchies {
        let Some(lowest) = h.levels.first() else {
            r.push(&h.name, None, "hierarchy has no levels".into());
            continue;
        };
        if !fact_counts.contains_key(lowest.dimension.as_str()) {
            r.push(&h.name, None, format!("lowest level dimension '{}' is referenced by no fact", lowest.dimension));
        }
        for level in &h.levels {
            let Some(dim) = schema.dimension(&level.dimension) else {
                r.push(&h.name, None, format!("level '{}' uses unknown dimension '{}'", level.name, level.dimension));
                continue;
            };
            match dim.column(&level.column) {
                None => r.push(&h.name, Some(&level.column), format!("level '{}' column missing from {}", level.name, dim.name)),
                Some(c) => {
                    if matches!(level.derive, LevelDerive::Month | LevelDerive::Year) && c.kind != Kind::Date {
                        r.push(&h.name, Some(&level.column), format!("level '{}' derives from a non-date column", level.name));
                    }
                }
            }
            if level.derive == LevelDerive::YearQualified {
                let ok = level
                    .year_column
                    .as_deref()
                    .and_then(|y| dim.column(y))
                    .map(|c| c.kind == Kind::Date)
                    .unwrap_or(false);
                if !ok {
                    r.push(&h.name, None, format!("level '{}' needs a date year_column", level.name));
                }
            }
            if schema.link_path(&lowest.dimension, &level.dimension).is_none() {
                r.push(&h.name, None, format!("level '{}' is not reachable from {}", level.name, lowest.dimension));
            }
        }
    }

    r.violations.sort();
    r
}

fn check_columns(r: &mut ValidationReport, table: &str, cols: &[ColumnDef]) {
    let mut names = BTreeSet::new();
    for c in cols {
        if !names.insert(c.name.as_str()) {
            r.push(table, Some(&c.name), "duplicate column name".into());
        }
    }
}
