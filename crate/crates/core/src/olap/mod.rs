//! Cubes over the schema hierarchies: build, roll-up, drill-down,
//! slice-dice and pivot, plus the hybrid cube/relational answer path.

mod holap;
#[cfg(test)]
mod tests;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

use crate::query::agg::{self, Accumulator};
use crate::query::ast::AggFunc;
use crate::query::{QueryError, ResultColumn, ResultSet};
use crate::schema::{ConstellationSchema, LevelDef, LevelDerive, TableSchema};
use crate::storage::{Projection, StorageError, Warehouse};
use crate::value::{month_of, parse_date, year_of, Kind, Value};

pub use holap::{covers, holap_answer, molap_answer, rolap_answer, rolap_sql, CubeQuery, HolapAnswer, Provenance, QueryFilter};

#[derive(Debug, Error)]
pub enum OlapError {
    #[error("unknown fact table '{0}'")]
    UnknownFact(String),
    #[error("unknown hierarchy '{0}'")]
    UnknownHierarchy(String),
    #[error("hierarchy '{hierarchy}' has no level '{level}'")]
    UnknownLevel { hierarchy: String, level: String },
    #[error("fact '{fact}' has no measure '{measure}'")]
    UnknownMeasure { fact: String, measure: String },
    #[error("unsupported aggregator '{0}' (cubes support SUM, COUNT and MAX)")]
    UnsupportedAggregator(String),
    #[error("level '{level}' is not reachable from fact '{fact}'")]
    UnreachableLevel { fact: String, level: String },
    #[error("axis '{0}' is already at its top level")]
    AlreadyAtTop(String),
    #[error("axis '{0}' is already at its bottom level")]
    AlreadyAtBottom(String),
    #[error("level '{from}' does not roll up to a single '{to}' member")]
    NonFunctionalLevel { from: String, to: String },
    #[error("no axis {0} in cube")]
    UnknownAxis(String),
    #[error("pivot axis order must be a permutation of the cube's {0} axes")]
    InvalidAxisOrder(usize),
    #[error("pivot needs at least two axes")]
    TooFewAxes,
    #[error("hierarchy '{0}' appears on more than one axis")]
    DuplicateAxis(String),
    #[error("member '{member}' is not valid for level '{level}'")]
    BadMember { level: String, member: String },
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Requested axis: a hierarchy at one of its levels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AxisSpec {
    pub hierarchy: String,
    pub level: String,
}

impl AxisSpec {
    pub fn new(hierarchy: &str, level: &str) -> AxisSpec {
        AxisSpec { hierarchy: hierarchy.into(), level: level.into() }
    }

    /// Parses `hierarchy@level`.
    pub fn parse(text: &str) -> Option<AxisSpec> {
        let (h, l) = text.split_once('@')?;
        Some(AxisSpec::new(h.trim(), l.trim()))
    }
}

/// Aggregated measure; `column == "*"` is `COUNT(*)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MeasureSpec {
    pub func: AggFunc,
    pub column: String,
}

impl MeasureSpec {
    pub fn new(func: AggFunc, column: &str) -> MeasureSpec {
        MeasureSpec { func, column: column.into() }
    }

    /// Parses `SUM(col)`, `COUNT(*)`, `MAX(col)`.
    pub fn parse(text: &str) -> Result<MeasureSpec, OlapError> {
        let t = text.trim();
        let (f, rest) = t.split_once('(').ok_or_else(|| OlapError::UnsupportedAggregator(t.into()))?;
        let col = rest.strip_suffix(')').ok_or_else(|| OlapError::UnsupportedAggregator(t.into()))?.trim();
        let func = match f.trim().to_ascii_uppercase().as_str() {
            "SUM" => AggFunc::Sum,
            "COUNT" => AggFunc::Count,
            "MAX" => AggFunc::Max,
            other => return Err(OlapError::UnsupportedAggregator(other.into())),
        };
        if col == "*" && func != AggFunc::Count {
            return Err(OlapError::UnsupportedAggregator(t.into()));
        }
        Ok(MeasureSpec::new(func, col))
    }
}

impl fmt::Display for MeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.func.name(), self.column)
    }
}

/// Restriction of one axis to a member set at some level of its hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeFilter {
    pub axis: usize,
    pub level: usize,
    pub members: BTreeSet<Value>,
}

#[derive(Debug, Clone)]
pub struct Axis {
    pub hierarchy: String,
    /// Current level (index into `level_names`, finest first).
    pub level: usize,
    pub level_names: Vec<String>,
    level_kinds: Vec<Kind>,
    /// Finest and coarsest level for which members were derived.
    start: usize,
    top: usize,
    /// Members per level, indexed by `level - start`.
    members: Vec<BTreeSet<Value>>,
    /// Child to parent member map for step `start + i -> start + i + 1`;
    /// None when some child has two parents.
    lineage: Vec<Option<HashMap<Value, Value>>>,
}

impl Axis {
    pub fn level_name(&self) -> &str {
        &self.level_names[self.level]
    }

    /// Output column name, `hierarchy:level`.
    pub fn column_name(&self) -> String {
        format!("{}:{}", self.hierarchy, self.level_name())
    }

    pub fn top(&self) -> usize {
        self.top
    }

    pub fn members(&self, level: usize) -> Option<&BTreeSet<Value>> {
        level.checked_sub(self.start).and_then(|i| self.members.get(i))
    }

    /// Maps a member at `from` to its ancestor at `to >= from`.
    pub fn ancestor(&self, member: &Value, from: usize, to: usize) -> Result<Value, OlapError> {
        let mut m = member.clone();
        for l in from..to {
            let step = self.lineage.get(l - self.start).and_then(Option::as_ref).ok_or_else(|| {
                OlapError::NonFunctionalLevel { from: self.level_names[l].clone(), to: self.level_names[l + 1].clone() }
            })?;
            m = step.get(&m).cloned().unwrap_or(Value::Null);
        }
        Ok(m)
    }

    fn can_climb(&self, from: usize, to: usize) -> bool {
        from >= self.start && from <= to && to <= self.top && (from..to).all(|l| self.lineage[l - self.start].is_some())
    }
}

#[derive(Debug, Clone)]
pub struct Cube {
    pub fact: String,
    pub axes: Vec<Axis>,
    pub measures: Vec<MeasureSpec>,
    pub filters: Vec<CubeFilter>,
    /// Filter members that are not members of their level.
    pub unknown_members: Vec<(String, Value)>,
    measure_kinds: Vec<Option<Kind>>,
    cells: BTreeMap<Vec<Value>, Vec<Accumulator>>,
}

impl Cube {
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Cells in coordinate order with finished measure values.
    pub fn cells(&self) -> impl Iterator<Item = (&Vec<Value>, Vec<Value>)> {
        self.cells.iter().map(|(k, accs)| (k, accs.iter().map(|a| a.finish().0).collect()))
    }

    pub fn cell(&self, coord: &[Value]) -> Option<Vec<Value>> {
        self.cells.get(coord).map(|accs| accs.iter().map(|a| a.finish().0).collect())
    }

    pub fn axis_index(&self, hierarchy: &str) -> Result<usize, OlapError> {
        self.axes.iter().position(|a| a.hierarchy == hierarchy).ok_or_else(|| OlapError::UnknownAxis(hierarchy.into()))
    }

    /// Identity of the cube's build parameters (without filters).
    pub fn signature(&self) -> String {
        let axes: Vec<String> = self.axes.iter().map(|a| format!("{}@{}", a.hierarchy, a.level_name())).collect();
        let measures: Vec<String> = self.measures.iter().map(|m| m.to_string()).collect();
        format!("{}|{}|{}", self.fact, axes.join(","), measures.join(","))
    }

    pub fn columns(&self) -> Vec<ResultColumn> {
        let mut cols: Vec<ResultColumn> = self
            .axes
            .iter()
            .map(|a| ResultColumn { name: a.column_name(), kind: member_kind_of(a) })
            .collect();
        for (m, k) in self.measures.iter().zip(&self.measure_kinds) {
            cols.push(ResultColumn { name: m.to_string(), kind: agg::result_kind(m.func, *k) });
        }
        cols
    }

    /// Coordinates followed by measure values, one row per cell.
    pub fn to_result_set(&self) -> ResultSet {
        let mut columns = self.columns();
        let mut rows: Vec<Vec<Value>> = self
            .cells()
            .map(|(k, v)| {
                let mut r = k.clone();
                r.extend(v);
                r
            })
            .collect();
        let overflow = self.cells.values().flatten().any(|a| a.finish().1);
        if overflow {
            agg::settle_overflow(&mut columns, &mut rows);
        }
        ResultSet { columns, rows, ordered: false, sum_overflow: overflow }
    }

    pub fn to_csv(&self) -> String {
        self.to_result_set().to_csv()
    }

    /// Parses a member literal for `axis` at its current level.
    pub fn parse_member(&self, axis: usize, text: &str) -> Result<Value, OlapError> {
        let a = &self.axes[axis];
        let kind = member_kind_of(a);
        Value::parse_as(kind, text).map_err(|_| OlapError::BadMember { level: a.column_name(), member: text.into() })
    }
}

fn member_kind_of(a: &Axis) -> Kind {
    a.level_kinds[a.level]
}

/// Kind of the members of `level`.
pub fn level_kind(schema: &ConstellationSchema, level: &LevelDef) -> Kind {
    let source = schema
        .table_schema(&level.dimension)
        .and_then(|t| t.column_index(&level.column).map(|i| t.columns[i].kind))
        .unwrap_or(Kind::Text);
    level.member_kind(source)
}

fn date_of(v: &Value) -> Option<i64> {
    match v {
        Value::Date(d) => Some(*d),
        Value::Text(t) => parse_date(t),
        _ => None,
    }
}

/// Member of `level` for a source value (and the year source for
/// year-qualified levels).
pub fn derive_member(level: &LevelDef, value: &Value, year_source: Option<&Value>) -> Value {
    match level.derive {
        LevelDerive::Identity => value.clone(),
        LevelDerive::Month => match date_of(value) {
            Some(d) => Value::text(format!("{:04}-{:02}", year_of(d), month_of(d))),
            None => Value::Null,
        },
        LevelDerive::Year => date_of(value).map_or(Value::Null, |d| Value::Int(year_of(d))),
        LevelDerive::YearQualified => match year_source.and_then(date_of) {
            Some(d) if !value.is_null() => Value::text(format!("{}-{}", year_of(d), value.render().to_lowercase())),
            _ => Value::Null,
        },
    }
}

struct DimTable {
    schema: TableSchema,
    rows: HashMap<i64, Vec<Value>>,
}

struct Loader<'a> {
    schema: &'a ConstellationSchema,
    wh: &'a Warehouse,
    tables: HashMap<String, DimTable>,
}

impl Loader<'_> {
    fn table(&mut self, dim: &str) -> Result<&DimTable, OlapError> {
        if !self.tables.contains_key(dim) {
            let def = self.schema.dimension(dim).ok_or_else(|| OlapError::UnknownFact(dim.into()))?;
            let scan = self.wh.scan(dim, None, &Projection::All)?;
            let schema = scan.schema().clone();
            let key = schema.column_index(&def.surrogate_key).ok_or_else(|| StorageError::UnknownColumn {
                table: dim.into(),
                column: def.surrogate_key.clone(),
            })?;
            let rows = scan.filter_map(|r| r[key].as_i64().map(|k| (k, r))).collect();
            self.tables.insert(dim.to_string(), DimTable { schema, rows });
        }
        Ok(&self.tables[dim])
    }

    /// Member of `level` for every row of dimension `root`.
    fn members(&mut self, root: &str, level: &LevelDef) -> Result<HashMap<i64, Value>, OlapError> {
        let path = self.schema.link_path(root, &level.dimension).expect("reachability checked");
        // Resolve each hop's foreign key column and the parent's row map.
        let mut hops: Vec<(usize, String)> = Vec::new();
        for (child, col, parent) in &path {
            let idx = self.table(child)?.schema.column_index(col).expect("link column exists");
            hops.push((idx, parent.clone()));
        }
        for (_, p) in &hops {
            self.table(p)?;
        }
        self.table(root)?;
        let target = &self.tables[&level.dimension].schema;
        let col = target.column_index(&level.column).ok_or_else(|| StorageError::UnknownColumn {
            table: level.dimension.clone(),
            column: level.column.clone(),
        })?;
        let year_col = level.year_column.as_ref().and_then(|c| target.column_index(c));
        let mut out = HashMap::new();
        for (key, row) in &self.tables[root].rows {
            let mut cur = Some(row);
            for (idx, parent) in &hops {
                cur = cur.and_then(|r| r[*idx].as_i64()).and_then(|fk| self.tables[parent].rows.get(&fk));
            }
            let m = match cur {
                Some(r) => derive_member(level, &r[col], year_col.map(|y| &r[y])),
                None => Value::Null,
            };
            out.insert(*key, m);
        }
        Ok(out)
    }
}

/// Levels of `hierarchy` reachable from `fact`, with the dimension each
/// axis starts from.
fn axis_root(schema: &ConstellationSchema, fact: &str, level: &LevelDef) -> Option<String> {
    let f = schema.fact(fact)?;
    f.dimension_refs
        .iter()
        .filter_map(|r| schema.link_path(r, &level.dimension).map(|p| (p.len(), r.clone())))
        .min()
        .map(|(_, r)| r)
}

fn level_index(schema: &ConstellationSchema, spec: &AxisSpec) -> Result<usize, OlapError> {
    let h = schema.hierarchy(&spec.hierarchy).ok_or_else(|| OlapError::UnknownHierarchy(spec.hierarchy.clone()))?;
    h.levels.iter().position(|l| l.name == spec.level).ok_or_else(|| OlapError::UnknownLevel {
        hierarchy: spec.hierarchy.clone(),
        level: spec.level.clone(),
    })
}

/// Materializes a cube over `fact` with one axis per spec.
pub fn build_cube(
    schema: &ConstellationSchema,
    wh: &Warehouse,
    fact: &str,
    axes: &[AxisSpec],
    measures: &[MeasureSpec],
) -> Result<Cube, OlapError> {
    let levels = axes
        .iter()
        .map(|a| Ok((a.hierarchy.clone(), level_index(schema, a)?)))
        .collect::<Result<Vec<_>, OlapError>>()?;
    build_at(schema, wh, fact, &levels, measures, &[], Vec::new())
}

fn build_at(
    schema: &ConstellationSchema,
    wh: &Warehouse,
    fact: &str,
    axes: &[(String, usize)],
    measures: &[MeasureSpec],
    filters: &[CubeFilter],
    unknown_members: Vec<(String, Value)>,
) -> Result<Cube, OlapError> {
    let fdef = schema.fact(fact).ok_or_else(|| OlapError::UnknownFact(fact.into()))?;
    let mut measure_kinds = Vec::new();
    for m in measures {
        if m.column == "*" {
            measure_kinds.push(None);
            continue;
        }
        let col = fdef.measures.iter().find(|c| c.name == m.column).ok_or_else(|| OlapError::UnknownMeasure {
            fact: fact.into(),
            measure: m.column.clone(),
        })?;
        if !agg::accepts(m.func, col.kind) {
            return Err(OlapError::UnsupportedAggregator(format!("{m} over {}", col.kind.as_str())));
        }
        measure_kinds.push(Some(col.kind));
    }

    let mut loader = Loader { schema, wh, tables: HashMap::new() };
    let mut built: Vec<Axis> = Vec::new();
    // Per axis: fact foreign key column and member chains by key.
    let mut chains: Vec<(String, HashMap<i64, Vec<Value>>)> = Vec::new();
    for (ai, (hname, level)) in axes.iter().enumerate() {
        if axes[..ai].iter().any(|(h, _)| h == hname) {
            return Err(OlapError::DuplicateAxis(hname.clone()));
        }
        let h = schema.hierarchy(hname).ok_or_else(|| OlapError::UnknownHierarchy(hname.clone()))?;
        let start = filters.iter().filter(|f| f.axis == ai).map(|f| f.level).chain([*level]).min().unwrap();
        let root = axis_root(schema, fact, &h.levels[start]).ok_or_else(|| OlapError::UnreachableLevel {
            fact: fact.into(),
            level: h.levels[start].name.clone(),
        })?;
        let mut top = start;
        while top + 1 < h.levels.len() && schema.link_path(&root, &h.levels[top + 1].dimension).is_some() {
            top += 1;
        }
        if *level > top {
            return Err(OlapError::UnreachableLevel { fact: fact.into(), level: h.levels[*level].name.clone() });
        }
        let per_level: Vec<HashMap<i64, Value>> =
            (start..=top).map(|l| loader.members(&root, &h.levels[l])).collect::<Result<_, _>>()?;
        let keys: Vec<i64> = per_level[0].keys().copied().collect();
        let chain: HashMap<i64, Vec<Value>> = keys.iter().map(|k| (*k, per_level.iter().map(|m| m[k].clone()).collect())).collect();
        let members: Vec<BTreeSet<Value>> = per_level.iter().map(|m| m.values().cloned().collect()).collect();
        let mut lineage = Vec::new();
        for step in 0..top - start {
            let mut map: HashMap<Value, Value> = HashMap::new();
            let mut functional = true;
            for c in chain.values() {
                match map.get(&c[step]) {
                    Some(p) if *p != c[step + 1] => functional = false,
                    Some(_) => {}
                    None => {
                        map.insert(c[step].clone(), c[step + 1].clone());
                    }
                }
            }
            lineage.push(functional.then_some(map));
        }
        let fk = schema.dimension(&root).map(|d| d.surrogate_key.clone()).unwrap_or_else(|| format!("{root}ID"));
        chains.push((fk, chain));
        built.push(Axis {
            hierarchy: hname.clone(),
            level: *level,
            level_names: h.levels.iter().map(|l| l.name.clone()).collect(),
            level_kinds: h.levels.iter().map(|l| level_kind(schema, l)).collect(),
            start,
            top,
            members,
            lineage,
        });
    }

    let mut proj: Vec<String> = Vec::new();
    for (fk, _) in &chains {
        if !proj.contains(fk) {
            proj.push(fk.clone());
        }
    }
    let fk_pos: Vec<usize> = chains.iter().map(|(fk, _)| proj.iter().position(|p| p == fk).unwrap()).collect();
    let mut measure_pos = Vec::new();
    for m in measures {
        if m.column == "*" {
            measure_pos.push(None);
        } else {
            if !proj.contains(&m.column) {
                proj.push(m.column.clone());
            }
            measure_pos.push(proj.iter().position(|p| *p == m.column));
        }
    }
    let scan = wh.scan(fact, None, &Projection::Columns(proj))?;
    let null_chains: Vec<Vec<Value>> = built.iter().map(|a| vec![Value::Null; a.top - a.start + 1]).collect();
    let mut cells: HashMap<Vec<Value>, Vec<Accumulator>> = HashMap::new();
    'rows: for row in scan {
        let row_chains: Vec<&Vec<Value>> = chains
            .iter()
            .zip(&fk_pos)
            .enumerate()
            .map(|(ai, ((_, c), &p))| row[p].as_i64().and_then(|k| c.get(&k)).unwrap_or(&null_chains[ai]))
            .collect();
        for f in filters {
            let a = &built[f.axis];
            if !f.members.contains(&row_chains[f.axis][f.level - a.start]) {
                continue 'rows;
            }
        }
        let coord: Vec<Value> = built.iter().zip(&row_chains).map(|(a, c)| c[a.level - a.start].clone()).collect();
        let accs = cells
            .entry(coord)
            .or_insert_with(|| measures.iter().zip(&measure_kinds).map(|(m, k)| Accumulator::new(m.func, *k)).collect());
        for (acc, p) in accs.iter_mut().zip(&measure_pos) {
            match p {
                Some(p) => acc.update(&row[*p]),
                None => acc.count_row(),
            }
        }
    }
    Ok(Cube {
        fact: fact.into(),
        axes: built,
        measures: measures.to_vec(),
        filters: filters.to_vec(),
        unknown_members,
        measure_kinds,
        cells: cells.into_iter().collect(),
    })
}

fn merge_cells(target: &mut BTreeMap<Vec<Value>, Vec<Accumulator>>, coord: Vec<Value>, accs: &[Accumulator]) {
    match target.get_mut(&coord) {
        Some(cur) => cur.iter_mut().zip(accs).for_each(|(a, b)| a.merge(b)),
        None => {
            target.insert(coord, accs.to_vec());
        }
    }
}

/// Moves `axis` one level up, merging cells without touching the facts.
pub fn rollup(cube: &Cube, axis: usize) -> Result<Cube, OlapError> {
    let a = cube.axes.get(axis).ok_or_else(|| OlapError::UnknownAxis(axis.to_string()))?;
    if a.level >= a.top {
        return Err(OlapError::AlreadyAtTop(a.hierarchy.clone()));
    }
    let mut cells = BTreeMap::new();
    for (coord, accs) in &cube.cells {
        let mut c = coord.clone();
        c[axis] = a.ancestor(&coord[axis], a.level, a.level + 1)?;
        merge_cells(&mut cells, c, accs);
    }
    let mut out = Cube { cells, ..cube.clone() };
    out.axes[axis].level += 1;
    Ok(out)
}

/// Moves `axis` one level down by recomputing from the facts, keeping the
/// cube's filters.
pub fn drilldown(cube: &Cube, axis: usize, schema: &ConstellationSchema, wh: &Warehouse) -> Result<Cube, OlapError> {
    let a = cube.axes.get(axis).ok_or_else(|| OlapError::UnknownAxis(axis.to_string()))?;
    if a.level == 0 {
        return Err(OlapError::AlreadyAtBottom(a.hierarchy.clone()));
    }
    let levels: Vec<(String, usize)> = cube
        .axes
        .iter()
        .enumerate()
        .map(|(i, x)| (x.hierarchy.clone(), if i == axis { x.level - 1 } else { x.level }))
        .collect();
    build_at(schema, wh, &cube.fact, &levels, &cube.measures, &cube.filters, cube.unknown_members.clone())
}

/// Keeps the cells whose member on each filtered axis is in its set.
/// Members unknown to the level are recorded, not rejected.
pub fn slice_dice(cube: &Cube, filters: &[(usize, Vec<Value>)]) -> Result<Cube, OlapError> {
    let mut out = cube.clone();
    for (axis, members) in filters {
        let a = cube.axes.get(*axis).ok_or_else(|| OlapError::UnknownAxis(axis.to_string()))?;
        let known = a.members(a.level);
        for m in members {
            if !known.is_some_and(|k| k.contains(m)) {
                out.unknown_members.push((a.hierarchy.clone(), m.clone()));
            }
        }
        out.filters.push(CubeFilter { axis: *axis, level: a.level, members: members.iter().cloned().collect() });
    }
    out.cells.retain(|coord, _| {
        filters.iter().all(|(axis, members)| members.contains(&coord[*axis]))
    });
    Ok(out)
}

/// Grid view of a cube: first axis of `order` down the rows, the
/// remaining axes (as tuples) across the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotTable {
    pub row_axis: String,
    pub column_axes: Vec<String>,
    pub rows: Vec<Value>,
    pub columns: Vec<Vec<Value>>,
    pub measures: Vec<String>,
    /// `grid[measure][row][column]`; None marks an empty cell.
    pub grid: Vec<Vec<Vec<Option<Value>>>>,
}

pub fn pivot(cube: &Cube, order: &[usize]) -> Result<PivotTable, OlapError> {
    let n = cube.axes.len();
    if n < 2 {
        return Err(OlapError::TooFewAxes);
    }
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..n).collect::<Vec<_>>() {
        return Err(OlapError::InvalidAxisOrder(n));
    }
    let rows: Vec<Value> = cube.cells.keys().map(|c| c[order[0]].clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let columns: Vec<Vec<Value>> = cube
        .cells
        .keys()
        .map(|c| order[1..].iter().map(|&i| c[i].clone()).collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let row_idx: HashMap<&Value, usize> = rows.iter().enumerate().map(|(i, v)| (v, i)).collect();
    let col_idx: HashMap<&Vec<Value>, usize> = columns.iter().enumerate().map(|(i, v)| (v, i)).collect();
    let mut grid = vec![vec![vec![None; columns.len()]; rows.len()]; cube.measures.len()];
    for (coord, values) in cube.cells() {
        let r = row_idx[&coord[order[0]]];
        let key: Vec<Value> = order[1..].iter().map(|&i| coord[i].clone()).collect();
        let c = col_idx[&key];
        for (m, v) in values.into_iter().enumerate() {
            grid[m][r][c] = Some(v);
        }
    }
    Ok(PivotTable {
        row_axis: cube.axes[order[0]].column_name(),
        column_axes: order[1..].iter().map(|&i| cube.axes[i].column_name()).collect(),
        rows,
        columns,
        measures: cube.measures.iter().map(|m| m.to_string()).collect(),
        grid,
    })
}

impl PivotTable {
    /// CSV of one measure's grid with row and column headers. Column
    /// tuples are joined with `|`; empty cells are empty fields.
    pub fn to_csv(&self, measure: usize) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![format!("{} \\ {}", self.row_axis, self.column_axes.join("|"))];
        header.extend(self.columns.iter().map(|c| c.iter().map(Value::render).collect::<Vec<_>>().join("|")));
        w.write_record(&header).expect("in-memory write");
        for (r, member) in self.rows.iter().enumerate() {
            let mut rec = vec![member.render()];
            rec.extend(self.grid[measure][r].iter().map(|v| v.as_ref().map(Value::render).unwrap_or_default()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }
}

/// Built cubes keyed by signature. Cubes are immutable once inserted.
#[derive(Default)]
pub struct CubeCache {
    cubes: Mutex<BTreeMap<String, Arc<Cube>>>,
}

impl CubeCache {
    pub fn new() -> CubeCache {
        CubeCache::default()
    }

    pub fn get_or_build(
        &self,
        schema: &ConstellationSchema,
        wh: &Warehouse,
        fact: &str,
        axes: &[AxisSpec],
        measures: &[MeasureSpec],
    ) -> Result<Arc<Cube>, OlapError> {
        let axes_s: Vec<String> = axes.iter().map(|a| format!("{}@{}", a.hierarchy, a.level)).collect();
        let ms: Vec<String> = measures.iter().map(|m| m.to_string()).collect();
        let key = format!("{}|{}|{}", fact, axes_s.join(","), ms.join(","));
        if let Some(c) = self.cubes.lock().get(&key) {
            return Ok(c.clone());
        }
        let cube = Arc::new(build_cube(schema, wh, fact, axes, measures)?);
        Ok(self.cubes.lock().entry(key).or_insert(cube).clone())
    }

    pub fn insert(&self, cube: Cube) -> Arc<Cube> {
        let c = Arc::new(cube);
        self.cubes.lock().insert(c.signature(), c.clone());
        c
    }

    pub fn cubes(&self) -> Vec<Arc<Cube>> {
        self.cubes.lock().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.cubes.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
