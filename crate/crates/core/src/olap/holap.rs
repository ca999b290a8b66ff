//! Answers aggregate requests from a covering cube when one exists and
//! from the relational engine otherwise.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::query::agg::{self, Accumulator};
use crate::query::ast::{AggFunc, Ident};
use crate::query::{run_sql, Engine, ResultColumn, ResultSet};
use crate::schema::{ConstellationSchema, LevelDef};
use crate::storage::Warehouse;
use crate::value::{Kind, Value};

use super::{axis_root, level_index, level_kind, AxisSpec, Cube, CubeCache, MeasureSpec, OlapError};

/// Member restriction at a hierarchy level.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFilter {
    pub hierarchy: String,
    pub level: String,
    pub members: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeQuery {
    pub fact: String,
    pub axes: Vec<AxisSpec>,
    pub measures: Vec<MeasureSpec>,
    pub filters: Vec<QueryFilter>,
    /// Extra SQL condition over the fact and dimension tables. Cubes
    /// cannot evaluate it, so it always routes to the relational path.
    pub predicate: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Molap,
    Rolap,
}

#[derive(Debug, Clone)]
pub struct HolapAnswer {
    pub result: ResultSet,
    pub provenance: Provenance,
    /// Signature of the cube used, if any.
    pub cube: Option<String>,
}

fn level_of(schema: &ConstellationSchema, hierarchy: &str, level: &str) -> Result<usize, OlapError> {
    level_index(schema, &AxisSpec::new(hierarchy, level))
}

/// True when `cube` alone can answer `q`.
pub fn covers(cube: &Cube, q: &CubeQuery, schema: &ConstellationSchema) -> bool {
    if cube.fact != q.fact || q.predicate.is_some() || !cube.filters.is_empty() {
        return false;
    }
    if !q.measures.iter().all(|m| cube.measures.contains(m)) {
        return false;
    }
    let reach = |h: &str, l: &str| -> bool {
        let Ok(level) = level_of(schema, h, l) else { return false };
        cube.axes.iter().any(|a| a.hierarchy == h && a.can_climb(a.level, level))
    };
    q.axes.iter().all(|a| reach(&a.hierarchy, &a.level)) && q.filters.iter().all(|f| reach(&f.hierarchy, &f.level))
}

fn output_columns(schema: &ConstellationSchema, q: &CubeQuery) -> Result<Vec<ResultColumn>, OlapError> {
    let fdef = schema.fact(&q.fact).ok_or_else(|| OlapError::UnknownFact(q.fact.clone()))?;
    let mut cols = Vec::new();
    for a in &q.axes {
        let h = schema.hierarchy(&a.hierarchy).ok_or_else(|| OlapError::UnknownHierarchy(a.hierarchy.clone()))?;
        let l = &h.levels[level_index(schema, a)?];
        cols.push(ResultColumn { name: format!("{}:{}", a.hierarchy, a.level), kind: level_kind(schema, l) });
    }
    for m in &q.measures {
        let input = if m.column == "*" {
            None
        } else {
            let c = fdef.measures.iter().find(|c| c.name == m.column).ok_or_else(|| OlapError::UnknownMeasure {
                fact: q.fact.clone(),
                measure: m.column.clone(),
            })?;
            if !agg::accepts(m.func, c.kind) {
                return Err(OlapError::UnsupportedAggregator(format!("{m} over {}", c.kind.as_str())));
            }
            Some(c.kind)
        };
        cols.push(ResultColumn { name: m.to_string(), kind: agg::result_kind(m.func, input) });
    }
    Ok(cols)
}

fn finish(columns: Vec<ResultColumn>, cells: BTreeMap<Vec<Value>, Vec<Accumulator>>) -> ResultSet {
    let mut columns = columns;
    let mut overflow = false;
    let mut rows: Vec<Vec<Value>> = cells
        .into_iter()
        .map(|(mut k, accs)| {
            for a in &accs {
                let (v, o) = a.finish();
                overflow |= o;
                k.push(v);
            }
            k
        })
        .collect();
    if overflow {
        agg::settle_overflow(&mut columns, &mut rows);
    }
    ResultSet { columns, rows, ordered: false, sum_overflow: overflow }
}

fn check_axes(q: &CubeQuery) -> Result<(), OlapError> {
    for (i, a) in q.axes.iter().enumerate() {
        if q.axes[..i].iter().any(|b| b.hierarchy == a.hierarchy) {
            return Err(OlapError::DuplicateAxis(a.hierarchy.clone()));
        }
    }
    Ok(())
}

/// Answers `q` from a covering cube by climbing lineage maps.
pub fn molap_answer(cube: &Cube, q: &CubeQuery, schema: &ConstellationSchema) -> Result<ResultSet, OlapError> {
    check_axes(q)?;
    let columns = output_columns(schema, q)?;
    let axis_map: Vec<(usize, usize)> = q
        .axes
        .iter()
        .map(|a| Ok((cube.axis_index(&a.hierarchy)?, level_of(schema, &a.hierarchy, &a.level)?)))
        .collect::<Result<_, OlapError>>()?;
    let filter_map: Vec<(usize, usize, BTreeSet<Value>)> = q
        .filters
        .iter()
        .map(|f| {
            Ok((cube.axis_index(&f.hierarchy)?, level_of(schema, &f.hierarchy, &f.level)?, f.members.iter().cloned().collect()))
        })
        .collect::<Result<_, OlapError>>()?;
    let measure_idx: Vec<usize> = q
        .measures
        .iter()
        .map(|m| cube.measures.iter().position(|c| c == m).ok_or_else(|| OlapError::UnknownMeasure {
            fact: q.fact.clone(),
            measure: m.to_string(),
        }))
        .collect::<Result<_, _>>()?;
    let mut out: BTreeMap<Vec<Value>, Vec<Accumulator>> = BTreeMap::new();
    'cells: for (coord, accs) in &cube.cells {
        for (ai, level, members) in &filter_map {
            let a = &cube.axes[*ai];
            if !members.contains(&a.ancestor(&coord[*ai], a.level, *level)?) {
                continue 'cells;
            }
        }
        let key = axis_map
            .iter()
            .map(|&(ai, level)| cube.axes[ai].ancestor(&coord[ai], cube.axes[ai].level, level))
            .collect::<Result<Vec<_>, _>>()?;
        let picked: Vec<Accumulator> = measure_idx.iter().map(|&i| accs[i].clone()).collect();
        super::merge_cells(&mut out, key, &picked);
    }
    Ok(finish(columns, out))
}

/// A level needed by the relational plan: its definition and the select
/// positions of its source (and year source) columns.
struct NeededLevel<'a> {
    def: &'a LevelDef,
    value: usize,
    year: Option<usize>,
}

/// SQL for `q` grouped by raw level source columns, plus the mapping from
/// select positions back to levels. The last select item is a row count.
pub fn rolap_sql(q: &CubeQuery, schema: &ConstellationSchema) -> Result<String, OlapError> {
    Ok(rolap_plan(q, schema)?.0)
}

fn rolap_plan<'s>(q: &CubeQuery, schema: &'s ConstellationSchema) -> Result<(String, Vec<NeededLevel<'s>>, usize), OlapError> {
    let fdef = schema.fact(&q.fact).ok_or_else(|| OlapError::UnknownFact(q.fact.clone()))?;
    let fact_alias = "f";
    let mut joins: Vec<String> = Vec::new();
    // (root, dimension) -> alias
    let mut aliases: HashMap<(String, String), String> = HashMap::new();
    let mut select: Vec<String> = Vec::new();
    let mut levels = Vec::new();

    let mut wanted: Vec<(&str, &str)> = q.axes.iter().map(|a| (a.hierarchy.as_str(), a.level.as_str())).collect();
    wanted.extend(q.filters.iter().map(|f| (f.hierarchy.as_str(), f.level.as_str())));
    for (hname, lname) in wanted {
        let h = schema.hierarchy(hname).ok_or_else(|| OlapError::UnknownHierarchy(hname.into()))?;
        let def = &h.levels[level_of(schema, hname, lname)?];
        let root = axis_root(schema, &q.fact, def)
            .ok_or_else(|| OlapError::UnreachableLevel { fact: q.fact.clone(), level: def.name.clone() })?;
        let rdef = schema.dimension(&root).ok_or_else(|| OlapError::UnknownFact(root.clone()))?;
        let mut alias = match aliases.get(&(root.clone(), root.clone())) {
            Some(a) => a.clone(),
            None => {
                let a = format!("j{}", aliases.len());
                joins.push(format!(
                    " LEFT JOIN {} AS {a} ON {fact_alias}.{} = {a}.{}",
                    Ident(&root),
                    Ident(&rdef.surrogate_key),
                    Ident(&rdef.surrogate_key)
                ));
                aliases.insert((root.clone(), root.clone()), a.clone());
                a
            }
        };
        for (_child, col, parent) in schema.link_path(&root, &def.dimension).expect("root reaches level") {
            let key = (root.clone(), parent.clone());
            alias = match aliases.get(&key) {
                Some(a) => a.clone(),
                None => {
                    let a = format!("j{}", aliases.len());
                    let pk = &schema.dimension(&parent).ok_or_else(|| OlapError::UnknownFact(parent.clone()))?.surrogate_key;
                    joins.push(format!(" LEFT JOIN {} AS {a} ON {alias}.{} = {a}.{}", Ident(&parent), Ident(&col), Ident(pk)));
                    aliases.insert(key, a.clone());
                    a
                }
            };
        }
        let mut position = |column: &str| {
            let item = format!("{alias}.{}", Ident(column));
            match select.iter().position(|s| *s == item) {
                Some(p) => p,
                None => {
                    select.push(item);
                    select.len() - 1
                }
            }
        };
        let value = position(&def.column);
        let year = def.year_column.as_deref().map(&mut position);
        levels.push(NeededLevel { def, value, year });
    }
    let groups = select.len();
    let mut sql = String::from("SELECT ");
    let mut items: Vec<String> = select.iter().enumerate().map(|(i, s)| format!("{s} AS c{i}")).collect();
    for (i, m) in q.measures.iter().enumerate() {
        if m.column != "*" && !fdef.measures.iter().any(|c| c.name == m.column) {
            return Err(OlapError::UnknownMeasure { fact: q.fact.clone(), measure: m.column.clone() });
        }
        let arg = if m.column == "*" { "*".to_string() } else { format!("{fact_alias}.{}", Ident(&m.column)) };
        items.push(format!("{}({arg}) AS m{i}", m.func.name()));
    }
    items.push("COUNT(*) AS n".into());
    sql.push_str(&items.join(", "));
    let _ = write!(sql, " FROM {} AS {fact_alias}", Ident(&q.fact));
    for j in &joins {
        sql.push_str(j);
    }
    if let Some(p) = &q.predicate {
        let _ = write!(sql, " WHERE {p}");
    }
    if groups > 0 {
        let _ = write!(sql, " GROUP BY {}", select.join(", "));
    }
    Ok((sql, levels, groups))
}

/// Answers `q` with the relational engine, re-bucketing raw level
/// columns into members.
pub fn rolap_answer(q: &CubeQuery, schema: &ConstellationSchema, wh: &Warehouse) -> Result<ResultSet, OlapError> {
    check_axes(q)?;
    let columns = output_columns(schema, q)?;
    let (sql, levels, groups) = rolap_plan(q, schema)?;
    let raw = run_sql(&sql, wh, Engine::Analytic)?;
    let n_axes = q.axes.len();
    let filters: Vec<BTreeSet<Value>> = q.filters.iter().map(|f| f.members.iter().cloned().collect()).collect();
    let kinds: Vec<Option<Kind>> = columns[n_axes..].iter().zip(&q.measures).map(|(c, m)| match m.func {
        AggFunc::Count => Some(Kind::Int64),
        _ => Some(c.kind),
    }).collect();
    // Partial aggregates recombine as SUM for SUM and COUNT, MAX for MAX.
    let combine = |f: AggFunc| if f == AggFunc::Max { AggFunc::Max } else { AggFunc::Sum };
    let mut out: BTreeMap<Vec<Value>, Vec<Accumulator>> = BTreeMap::new();
    'rows: for row in &raw.rows {
        if row[row.len() - 1] == Value::Int(0) {
            continue;
        }
        let member = |l: &NeededLevel| super::derive_member(l.def, &row[l.value], l.year.map(|y| &row[y]));
        for (l, set) in levels[n_axes..].iter().zip(&filters) {
            if !set.contains(&member(l)) {
                continue 'rows;
            }
        }
        let key: Vec<Value> = levels[..n_axes].iter().map(member).collect();
        let accs = out
            .entry(key)
            .or_insert_with(|| q.measures.iter().zip(&kinds).map(|(m, k)| Accumulator::new(combine(m.func), *k)).collect());
        for (i, acc) in accs.iter_mut().enumerate() {
            acc.update(&row[groups + i]);
        }
    }
    Ok(finish(columns, out))
}

/// Picks a covering cube from `cache` (fewest cells first) or falls back
/// to the relational path.
pub fn holap_answer(q: &CubeQuery, cache: &CubeCache, schema: &ConstellationSchema, wh: &Warehouse) -> Result<HolapAnswer, OlapError> {
    let best = cache.cubes().into_iter().filter(|c| covers(c, q, schema)).min_by_key(|c| c.cell_count());
    match best {
        Some(cube) => Ok(HolapAnswer {
            result: molap_answer(&cube, q, schema)?,
            provenance: Provenance::Molap,
            cube: Some(cube.signature()),
        }),
        None => Ok(HolapAnswer { result: rolap_answer(q, schema, wh)?, provenance: Provenance::Rolap, cube: None }),
    }
}
