//! Executor for physical plans.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::storage::{Projection, ScanPredicate, Warehouse};
use crate::value::{parse_date, sql_cmp, Value};

use super::agg::{self, Accumulator};
use super::ast::{CmpOp, JoinKind};
use super::plan::{BoundExpr, BoundOperand, KeyMode, PhysicalPlan, PlanNode, PushedPredicate, SortKey};
use super::result::ResultSet;
use super::QueryError;

type Row = Vec<Value>;

/// Integral floats hash as ints so `1 = 1.0` holds under hashing.
fn numeric_key(v: &Value) -> Value {
    match v {
        Value::Float(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Value::Int(*f as i64),
        other => other.clone(),
    }
}

/// Result of an IN subquery, probed with SQL equality.
#[derive(Debug, Default)]
pub(crate) struct InSet {
    exact: HashSet<Value>,
    /// Dates parsed from text members, probed only by date values.
    text_dates: HashSet<i64>,
    raw: Arc<HashSet<Value>>,
}

impl InSet {
    fn from_rows(rows: Vec<Row>) -> InSet {
        let mut s = InSet::default();
        let mut raw = HashSet::new();
        for mut r in rows {
            let v = r.swap_remove(0);
            if v.is_null() {
                continue;
            }
            if let Value::Text(t) = &v {
                if let Some(d) = parse_date(t) {
                    s.text_dates.insert(d);
                }
            }
            s.exact.insert(numeric_key(&v));
            raw.insert(v);
        }
        s.raw = Arc::new(raw);
        s
    }

    fn contains(&self, v: &Value) -> bool {
        match v {
            Value::Null => false,
            Value::Date(d) => self.exact.contains(v) || self.text_dates.contains(d),
            Value::Text(t) => self.exact.contains(v) || parse_date(t).is_some_and(|d| self.exact.contains(&Value::Date(d))),
            other => self.exact.contains(&numeric_key(other)),
        }
    }
}

struct Exec<'a> {
    wh: &'a Warehouse,
    sets: Vec<InSet>,
    overflow: bool,
}

/// Runs a plan produced by [`super::plan_query`].
pub fn execute_plan(plan: &PhysicalPlan, wh: &Warehouse) -> Result<ResultSet, QueryError> {
    let sets = plan
        .subqueries
        .iter()
        .map(|p| execute_plan(p, wh).map(|r| InSet::from_rows(r.rows)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ex = Exec { wh, sets, overflow: false };
    let mut rows = ex.run(&plan.root)?;
    let mut columns = plan.columns.clone();
    if ex.overflow {
        agg::settle_overflow(&mut columns, &mut rows);
    }
    Ok(ResultSet { columns, rows, ordered: plan.ordered, sum_overflow: ex.overflow })
}

fn operand<'r>(o: &'r BoundOperand, row: &'r [Value]) -> &'r Value {
    match o {
        BoundOperand::Column(i) => &row[*i],
        BoundOperand::Literal(v) => v,
    }
}

impl Exec<'_> {
    fn eval(&self, e: &BoundExpr, row: &[Value]) -> bool {
        match e {
            BoundExpr::And(a, b) => self.eval(a, row) && self.eval(b, row),
            BoundExpr::Or(a, b) => self.eval(a, row) || self.eval(b, row),
            BoundExpr::Compare { left, op, right } => match sql_cmp(operand(left, row), operand(right, row)) {
                Some(o) => match op {
                    CmpOp::Eq => o == Ordering::Equal,
                    CmpOp::Ge => o != Ordering::Less,
                },
                None => false,
            },
            BoundExpr::Like { operand: o, pattern } => pattern.matches_value(operand(o, row)),
            BoundExpr::In { operand: o, set } => self.sets[*set].contains(operand(o, row)),
        }
    }

    fn scan_predicate(&self, p: &PushedPredicate) -> ScanPredicate {
        match p {
            PushedPredicate::Compare { column, op, value } => ScanPredicate::Compare { column: column.clone(), op: *op, value: value.clone() },
            PushedPredicate::Like { column, pattern } => ScanPredicate::Like { column: column.clone(), pattern: pattern.clone() },
            PushedPredicate::InSet { column, set } => ScanPredicate::InSet { column: column.clone(), values: self.sets[*set].raw.clone() },
            PushedPredicate::And(ps) => ScanPredicate::And(ps.iter().map(|p| self.scan_predicate(p)).collect()),
        }
    }

    fn run(&mut self, node: &PlanNode) -> Result<Vec<Row>, QueryError> {
        Ok(match node {
            PlanNode::Scan { table, columns, pushed } => {
                let pred = pushed.as_ref().map(|p| self.scan_predicate(p));
                self.wh.scan(table, pred.as_ref(), &Projection::Columns(columns.clone()))?.collect()
            }
            PlanNode::Materialize { plan } => {
                execute_plan(plan, self.wh)?.rows
            }
            PlanNode::Filter { input, predicate } => {
                let mut rows = self.run(input)?;
                rows.retain(|r| self.eval(predicate, r));
                rows
            }
            PlanNode::HashJoin { kind, left, right, left_keys, right_keys, modes, left_width, right_width } => {
                let l = self.run(left)?;
                let r = self.run(right)?;
                hash_join(*kind, l, r, left_keys, right_keys, modes, *left_width, *right_width)
            }
            PlanNode::HashAggregate { input, group, aggs } => {
                let rows = self.run(input)?;
                let mut index: HashMap<Row, usize> = HashMap::new();
                let mut groups: Vec<(Row, Vec<Accumulator>)> = Vec::new();
                let fresh = || aggs.iter().map(|a| Accumulator::new(a.func, a.input)).collect::<Vec<_>>();
                if group.is_empty() {
                    groups.push((Vec::new(), fresh()));
                }
                for row in rows {
                    let gi = if group.is_empty() {
                        0
                    } else {
                        let key: Row = group.iter().map(|&g| row[g].clone()).collect();
                        match index.get(&key) {
                            Some(&i) => i,
                            None => {
                                index.insert(key.clone(), groups.len());
                                groups.push((key, fresh()));
                                groups.len() - 1
                            }
                        }
                    };
                    for (acc, spec) in groups[gi].1.iter_mut().zip(aggs) {
                        match spec.arg {
                            Some(a) => acc.update(&row[a]),
                            None => acc.count_row(),
                        }
                    }
                }
                let mut overflowed = vec![false; aggs.len()];
                let mut out: Vec<Row> = groups
                    .into_iter()
                    .map(|(mut key, accs)| {
                        for (j, acc) in accs.iter().enumerate() {
                            let (v, o) = acc.finish();
                            overflowed[j] |= o;
                            key.push(v);
                        }
                        key
                    })
                    .collect();
                for (j, o) in overflowed.into_iter().enumerate() {
                    if o {
                        self.overflow = true;
                        agg::promote_column(&mut out, group.len() + j);
                    }
                }
                out
            }
            PlanNode::Project { input, columns } => {
                let rows = self.run(input)?;
                rows.into_iter().map(|r| columns.iter().map(|&c| r[c].clone()).collect()).collect()
            }
            PlanNode::UnionDistinct { inputs, promote } => {
                let mut seen: HashSet<Row> = HashSet::new();
                let mut out = Vec::new();
                for i in inputs {
                    for mut r in self.run(i)? {
                        for &c in promote {
                            if let Value::Int(x) = r[c] {
                                r[c] = Value::Float(x as f64);
                            }
                        }
                        if seen.insert(r.clone()) {
                            out.push(r);
                        }
                    }
                }
                out
            }
            PlanNode::Sort { input, keys, width } => {
                let mut rows = self.run(input)?;
                rows.sort_by(|a, b| compare_rows(a, b, keys, *width));
                rows
            }
            PlanNode::Limit { input, count } => {
                let mut rows = self.run(input)?;
                rows.truncate(usize::try_from(*count).unwrap_or(usize::MAX));
                rows
            }
        })
    }
}

fn compare_rows(a: &[Value], b: &[Value], keys: &[SortKey], width: usize) -> Ordering {
    for k in keys {
        let o = a[k.column].cmp(&b[k.column]);
        let o = if k.descending { o.reverse() } else { o };
        if o != Ordering::Equal {
            return o;
        }
    }
    a[..width].cmp(&b[..width])
}

/// Normalized join key; None when the row can match nothing.
fn join_key(row: &[Value], cols: &[usize], modes: &[KeyMode], left: bool) -> Option<Row> {
    let mut key = Vec::with_capacity(cols.len());
    for (&c, mode) in cols.iter().zip(modes) {
        let v = &row[c];
        if v.is_null() {
            return None;
        }
        key.push(match mode {
            KeyMode::Direct => v.clone(),
            KeyMode::Numeric => numeric_key(v),
            KeyMode::DateText { text_left } if *text_left == left => Value::Date(parse_date(v.as_str()?)?),
            KeyMode::DateText { .. } => v.clone(),
            KeyMode::Never => return None,
        });
    }
    Some(key)
}

#[allow(clippy::too_many_arguments)]
fn hash_join(
    kind: JoinKind,
    left: Vec<Row>,
    right: Vec<Row>,
    left_keys: &[usize],
    right_keys: &[usize],
    modes: &[KeyMode],
    left_width: usize,
    right_width: usize,
) -> Vec<Row> {
    let concat = |l: &[Value], r: &[Value]| {
        let mut row = Vec::with_capacity(l.len() + r.len());
        row.extend_from_slice(l);
        row.extend_from_slice(r);
        row
    };
    let nulls = |n: usize| vec![Value::Null; n];
    let mut out = Vec::new();
    // Build on the smaller input.
    if right.len() <= left.len() {
        let mut table: HashMap<Row, Vec<usize>> = HashMap::new();
        for (i, r) in right.iter().enumerate() {
            if let Some(k) = join_key(r, right_keys, modes, false) {
                table.entry(k).or_default().push(i);
            }
        }
        let mut matched = vec![false; right.len()];
        for l in &left {
            let hits = join_key(l, left_keys, modes, true).and_then(|k| table.get(&k));
            match hits {
                Some(hits) => {
                    for &i in hits {
                        matched[i] = true;
                        out.push(concat(l, &right[i]));
                    }
                }
                None if kind == JoinKind::Left => out.push(concat(l, &nulls(right_width))),
                None => {}
            }
        }
        if kind == JoinKind::Right {
            for (i, r) in right.iter().enumerate() {
                if !matched[i] {
                    out.push(concat(&nulls(left_width), r));
                }
            }
        }
    } else {
        let mut table: HashMap<Row, Vec<usize>> = HashMap::new();
        for (i, l) in left.iter().enumerate() {
            if let Some(k) = join_key(l, left_keys, modes, true) {
                table.entry(k).or_default().push(i);
            }
        }
        let mut matched = vec![false; left.len()];
        for r in &right {
            let hits = join_key(r, right_keys, modes, false).and_then(|k| table.get(&k));
            match hits {
                Some(hits) => {
                    for &i in hits {
                        matched[i] = true;
                        out.push(concat(&left[i], r));
                    }
                }
                None if kind == JoinKind::Right => out.push(concat(&nulls(left_width), r)),
                None => {}
            }
        }
        if kind == JoinKind::Left {
            for (i, l) in left.iter().enumerate() {
                if !matched[i] {
                    out.push(concat(l, &nulls(right_width)));
                }
            }
        }
    }
    out
}
