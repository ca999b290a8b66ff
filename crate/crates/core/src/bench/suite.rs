//! Seeded generator for the 10 x 5 benchmark workload.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::query::ast::{Expr, Literal, Query};
use crate::query::{parse_query, run_sql, Engine};
use crate::storage::{Projection, Warehouse};
use crate::value::Value;

use super::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Command {
    Where,
    GroupBy,
    Having,
    Join,
    Union,
    OrderBy,
}

pub const GROUPS: usize = 10;
pub const QUERIES_PER_GROUP: usize = 5;

/// Command combination of each group, 1-based.
pub fn group_commands(group: u8) -> BTreeSet<Command> {
    use Command::*;
    let cmds: &[Command] = match group {
        1 => &[Where],
        2 => &[Where, GroupBy],
        3 => &[Where, Join],
        4 => &[Where, Union],
        5 => &[Where, OrderBy],
        6 => &[Where, Join, OrderBy],
        7 => &[Where, GroupBy, Having],
        8 => &[Where, GroupBy, Having, OrderBy],
        9 => &[Where, GroupBy, Having, Join, OrderBy],
        10 => &[Where, GroupBy, Having, Union, OrderBy],
        _ => &[],
    };
    cmds.iter().copied().collect()
}

/// Commands a parsed query uses.
pub fn command_set(q: &Query) -> BTreeSet<Command> {
    let mut out = BTreeSet::new();
    if q.branches.len() > 1 {
        out.insert(Command::Union);
    }
    if !q.order_by.is_empty() {
        out.insert(Command::OrderBy);
    }
    for s in &q.branches {
        if s.filter.is_some() {
            out.insert(Command::Where);
        }
        if !s.group_by.is_empty() {
            out.insert(Command::GroupBy);
        }
        if s.having.is_some() {
            out.insert(Command::Having);
        }
        if !s.joins.is_empty() {
            out.insert(Command::Join);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchQuery {
    /// 1..=50, numbered group by group.
    pub id: u32,
    pub group: u8,
    pub sql: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGroupSpec {
    pub group: u8,
    pub commands: BTreeSet<Command>,
    pub queries: Vec<BenchQuery>,
}

struct DimProfile {
    table: &'static str,
    alias: &'static str,
    key: &'static str,
    text: &'static [&'static str],
}

struct FactProfile {
    table: &'static str,
    alias: &'static str,
    measures: &'static [&'static str],
    keys: &'static [&'static str],
    dims: &'static [DimProfile],
}

const FACTS: [FactProfile; 3] = [
    FactProfile {
        table: "FieldFact",
        alias: "F",
        measures: &["appliedQuantity", "appliedCost", "areaTreated", "yieldEstimate", "durationHours", "waterVolume"],
        keys: &["CropID", "FieldID", "FertiliserID", "TaskID", "PestID"],
        dims: &[
            DimProfile { table: "Crop", alias: "C", key: "CropID", text: &["CropName", "VarietyName"] },
            DimProfile { table: "Fertiliser", alias: "Fe", key: "FertiliserID", text: &["Name", "GroupName"] },
            DimProfile { table: "Field", alias: "Fi", key: "FieldID", text: &["FieldName", "Block"] },
            DimProfile { table: "Task", alias: "T", key: "TaskID", text: &["TaskDesc", "TaskStatus"] },
        ],
    },
    FactProfile {
        table: "Sale",
        alias: "S",
        measures: &["quantitySold", "unitPrice", "revenue", "margin", "discount"],
        keys: &["FarmerID", "BusinessID", "CropID"],
        dims: &[
            DimProfile { table: "Farmer", alias: "Fa", key: "FarmerID", text: &["FarmerName"] },
            DimProfile { table: "Business", alias: "B", key: "BusinessID", text: &["Name"] },
        ],
    },
    FactProfile {
        table: "Order",
        alias: "O",
        measures: &["quantityOrdered", "unitPrice", "totalCost", "discount", "deliveryDays", "taxAmount"],
        keys: &["FarmerID", "SupplierID", "ProductID"],
        dims: &[
            DimProfile { table: "Supplier", alias: "Su", key: "SupplierID", text: &["SupplierName"] },
            DimProfile { table: "Product", alias: "P", key: "ProductID", text: &["ProductName", "GroupName"] },
        ],
    },
];

/// Fact used by query `i` of a group: FieldFact for three of the five.
fn fact_for(i: usize) -> &'static FactProfile {
    match i {
        3 => &FACTS[1],
        4 => &FACTS[2],
        _ => &FACTS[0],
    }
}

fn lit(v: &Value) -> String {
    match v {
        Value::Int(i) => Literal::Int(*i).to_string(),
        Value::Float(f) => Literal::Float(*f).to_string(),
        other => Literal::Str(other.render()).to_string(),
    }
}

fn quote_table(name: &str) -> String {
    crate::query::ast::Ident(name).to_string()
}

/// Draws literals from the loaded data.
struct Sampler<'a> {
    wh: &'a Warehouse,
    rng: ChaCha8Rng,
    columns: HashMap<(String, String), Vec<Value>>,
}

impl Sampler<'_> {
    /// Sorted non-null values of a column.
    fn column(&mut self, table: &str, col: &str) -> Result<&Vec<Value>, BenchError> {
        let key = (table.to_string(), col.to_string());
        if !self.columns.contains_key(&key) {
            let mut vals: Vec<Value> = self
                .wh
                .scan(table, None, &Projection::Columns(vec![col.to_string()]))?
                .filter_map(|mut r| Some(r.swap_remove(0)).filter(|v| !v.is_null()))
                .collect();
            vals.sort();
            self.columns.insert(key.clone(), vals);
        }
        Ok(&self.columns[&key])
    }

    fn quantile(&mut self, table: &str, col: &str, lo: f64, hi: f64) -> Result<String, BenchError> {
        let q = self.rng.gen_range(lo..hi);
        let vals = self.column(table, col)?;
        if vals.is_empty() {
            return Err(BenchError::EmptyWarehouse(format!("{table}.{col} has no values")));
        }
        let idx = ((vals.len() - 1) as f64 * q).round() as usize;
        Ok(lit(&vals[idx]))
    }

    /// LIKE pattern: a prefix of an existing value, or a short infix.
    fn pattern(&mut self, table: &str, col: &str) -> Result<String, BenchError> {
        let pick = self.rng.gen_range(0..usize::MAX);
        let infix = self.rng.gen_bool(0.3);
        let vals = self.column(table, col)?;
        if vals.is_empty() {
            return Err(BenchError::EmptyWarehouse(format!("{table}.{col} has no values")));
        }
        let text = vals[pick % vals.len()].render();
        let chars: Vec<char> = text.chars().filter(|c| *c != '%' && *c != '_' && *c != '\'').collect();
        let n = chars.len().clamp(1, 2);
        let p: String = if infix && chars.len() > 2 { chars[1..3].iter().collect() } else { chars[..n.min(chars.len())].iter().collect() };
        Ok(if infix { format!("'%{p}%'") } else { format!("'{p}%'") })
    }

    fn choose<'s>(&mut self, items: &'s [&'s str]) -> &'s str {
        items.choose(&mut self.rng).expect("non-empty choice")
    }

    /// Two distinct measures.
    fn two(&mut self, items: &'static [&'static str]) -> (&'static str, &'static str) {
        let mut v: Vec<&str> = items.to_vec();
        v.shuffle(&mut self.rng);
        (v[0], v[1])
    }

    /// A WHERE predicate on the fact alone, rotating through the operator
    /// shapes (>=, AND, OR).
    fn fact_predicate(&mut self, f: &FactProfile, shape: usize) -> Result<String, BenchError> {
        let (m1, m2) = self.two(f.measures);
        let a = f.alias;
        Ok(match shape % 3 {
            0 => format!("{a}.{m1} >= {}", self.quantile(f.table, m1, 0.5, 0.9)?),
            1 => format!(
                "{a}.{m1} >= {} AND {a}.{m2} >= {}",
                self.quantile(f.table, m1, 0.1, 0.5)?,
                self.quantile(f.table, m2, 0.1, 0.5)?
            ),
            _ => format!(
                "({a}.{m1} >= {} OR {a}.{m2} >= {})",
                self.quantile(f.table, m1, 0.8, 0.97)?,
                self.quantile(f.table, m2, 0.8, 0.97)?
            ),
        })
    }

    fn aggregate(&mut self, f: &FactProfile) -> String {
        let m = self.choose(f.measures);
        match self.rng.gen_range(0..3) {
            0 => format!("SUM({}.{m})", f.alias),
            1 => format!("MAX({}.{m})", f.alias),
            _ => "COUNT(*)".to_string(),
        }
    }
}

fn probe_values(sql: &str, wh: &Warehouse, col: usize) -> Result<Vec<Value>, BenchError> {
    let r = run_sql(sql, wh, Engine::Analytic)?;
    let mut v: Vec<Value> = r.rows.into_iter().map(|mut row| row.swap_remove(col)).filter(|v| !v.is_null()).collect();
    v.sort();
    Ok(v)
}

/// HAVING threshold from the actual group aggregates of `probe`.
fn having_threshold(s: &mut Sampler, probe: &str, col: usize) -> Result<Option<String>, BenchError> {
    let vals = probe_values(probe, s.wh, col)?;
    if vals.is_empty() {
        return Ok(None);
    }
    let q = s.rng.gen_range(0.2..0.7);
    Ok(Some(lit(&vals[((vals.len() - 1) as f64 * q).round() as usize])))
}

fn candidate(s: &mut Sampler, group: u8, i: usize) -> Result<Option<String>, BenchError> {
    let f = fact_for(i);
    let a = f.alias;
    let fact = quote_table(f.table);
    let shape = i + s.rng.gen_range(0..3);
    let where_ = s.fact_predicate(f, shape)?;
    let key = s.choose(f.keys).to_string();
    let m = s.choose(f.measures).to_string();
    let d = f.dims.choose(&mut s.rng).expect("profile has dims");
    let txt = s.choose(d.text).to_string();
    let (da, dt, dk) = (d.alias, quote_table(d.table), d.key);
    let join = |s: &mut Sampler| -> String {
        if s.rng.gen_bool(0.5) {
            format!("{fact} AS {a} LEFT JOIN {dt} AS {da} ON {a}.{dk} = {da}.{dk}")
        } else {
            format!("{dt} AS {da} RIGHT JOIN {fact} AS {a} ON {da}.{dk} = {a}.{dk}")
        }
    };
    Ok(Some(match group {
        1 => format!("SELECT {a}.{key}, {a}.{m} FROM {fact} AS {a} WHERE {where_}"),
        2 => {
            let agg = s.aggregate(f);
            format!("SELECT {a}.{key}, {agg} AS agg, COUNT(*) AS n FROM {fact} AS {a} WHERE {where_} GROUP BY {a}.{key}")
        }
        3 => {
            let from = join(s);
            let like = s.pattern(d.table, &txt)?;
            format!("SELECT {a}.{m}, {da}.{txt} FROM {from} WHERE {where_} AND {da}.{txt} LIKE {like}")
        }
        4 => {
            let other = s.fact_predicate(f, shape + 1)?;
            format!("SELECT {a}.{key}, {a}.{m} FROM {fact} AS {a} WHERE {where_} UNION SELECT {a}.{key}, {a}.{m} FROM {fact} AS {a} WHERE {other}")
        }
        5 => {
            let dir = if s.rng.gen_bool(0.5) { " DESC" } else { "" };
            format!("SELECT {a}.{key}, {a}.{m} FROM {fact} AS {a} WHERE {where_} ORDER BY {a}.{m}{dir}, {a}.{key}")
        }
        6 => {
            let from = join(s);
            let like = s.pattern(d.table, &txt)?;
            let cond = if s.rng.gen_bool(0.5) { format!("{where_} AND {da}.{txt} LIKE {like}") } else { format!("({where_} OR {da}.{txt} LIKE {like})") };
            format!("SELECT {da}.{txt}, {a}.{m} FROM {from} WHERE {cond} ORDER BY {da}.{txt}, {a}.{m} DESC")
        }
        7 | 8 => {
            let agg = s.aggregate(f);
            let base = format!("SELECT {a}.{key}, {agg} AS agg FROM {fact} AS {a} WHERE {where_} GROUP BY {a}.{key}");
            let Some(t) = having_threshold(s, &base, 1)? else { return Ok(None) };
            let order = if group == 8 { format!(" ORDER BY agg DESC, {a}.{key}") } else { String::new() };
            format!("{base} HAVING {agg} >= {t}{order}")
        }
        9 => {
            let agg = s.aggregate(f);
            let from = join(s);
            let base = format!("SELECT {da}.{txt}, {agg} AS agg, COUNT(*) AS n FROM {from} WHERE {where_} GROUP BY {da}.{txt}");
            let Some(t) = having_threshold(s, &base, 1)? else { return Ok(None) };
            format!("{base} HAVING agg >= {t} ORDER BY agg DESC")
        }
        10 => {
            let agg = s.aggregate(f);
            let other = s.fact_predicate(f, shape + 1)?;
            let b1 = format!("SELECT {a}.{key}, {agg} AS agg FROM {fact} AS {a} WHERE {where_} GROUP BY {a}.{key}");
            let b2 = format!("SELECT {a}.{key}, {agg} AS agg FROM {fact} AS {a} WHERE {other} GROUP BY {a}.{key}");
            let Some(t1) = having_threshold(s, &b1, 1)? else { return Ok(None) };
            let Some(t2) = having_threshold(s, &b2, 1)? else { return Ok(None) };
            format!("{b1} HAVING {agg} >= {t1} UNION {b2} HAVING {agg} >= {t2} ORDER BY agg DESC, {key}")
        }
        _ => return Ok(None),
    }))
}

/// Attempts per query before accepting an empty result.
const MAX_ATTEMPTS: usize = 25;

/// Deterministic suite for `seed`. Literals come from the loaded data and
/// are redrawn until the query returns rows.
pub fn generate_query_suite(seed: u64, wh: &Warehouse) -> Result<Vec<QueryGroupSpec>, BenchError> {
    for f in &FACTS {
        let n = wh.table(f.table).map(|t| t.row_count()).unwrap_or(0);
        if n == 0 {
            return Err(BenchError::EmptyWarehouse(format!("fact table {} is empty", f.table)));
        }
    }
    let mut s = Sampler { wh, rng: ChaCha8Rng::seed_from_u64(seed), columns: HashMap::new() };
    let mut groups = Vec::with_capacity(GROUPS);
    for g in 1..=GROUPS as u8 {
        let mut queries = Vec::with_capacity(QUERIES_PER_GROUP);
        for i in 0..QUERIES_PER_GROUP {
            let mut chosen = None;
            for _ in 0..MAX_ATTEMPTS {
                let Some(sql) = candidate(&mut s, g, i)? else { continue };
                let nonempty = !run_sql(&sql, wh, Engine::Analytic)?.is_empty();
                chosen = Some(sql);
                if nonempty {
                    break;
                }
            }
            let sql = chosen.ok_or_else(|| BenchError::EmptyWarehouse(format!("no candidate for group {g}")))?;
            queries.push(BenchQuery { id: ((g as usize - 1) * QUERIES_PER_GROUP + i + 1) as u32, group: g, sql });
        }
        groups.push(QueryGroupSpec { group: g, commands: group_commands(g), queries });
    }
    Ok(groups)
}

/// True when `e` uses one of the workload operators (AND, OR, >=, LIKE).
fn uses_operator(e: &Expr) -> bool {
    match e {
        Expr::And(..) | Expr::Or(..) | Expr::Like { .. } => true,
        Expr::Compare { op, .. } => *op == crate::query::ast::CmpOp::Ge,
        Expr::InSubquery { .. } => false,
    }
}

/// Checks a suite's shape: 10 groups of 5, each query with exactly its
/// group's commands and at least one workload operator.
pub fn validate_suite(suite: &[QueryGroupSpec]) -> Result<(), String> {
    if suite.len() != GROUPS {
        return Err(format!("expected {GROUPS} groups, found {}", suite.len()));
    }
    for g in suite {
        if g.queries.len() != QUERIES_PER_GROUP {
            return Err(format!("group {} has {} queries", g.group, g.queries.len()));
        }
        for q in &g.queries {
            let ast = parse_query(&q.sql).map_err(|e| format!("query {}: {e}", q.id))?;
            let cmds = command_set(&ast);
            if cmds != g.commands {
                return Err(format!("query {} uses {cmds:?}, group {} needs {:?}", q.id, g.group, g.commands));
            }
            let has_op = ast.branches.iter().any(|b| b.filter.iter().chain(&b.having).any(uses_operator))
                || ast.branches.iter().any(|b| b.items.iter().any(|i| matches!(i, crate::query::ast::SelectItem::Aggregate { .. })));
            if !has_op {
                return Err(format!("query {} uses none of the workload operators", q.id));
            }
        }
    }
    Ok(())
}
