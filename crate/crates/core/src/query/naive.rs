//! Reference interpreter: walks the syntax tree over fully materialized
//! tables with nested-loop joins and sort-based grouping. Slow by design;
//! it shares only value semantics and accumulators with the planner.

use std::cmp::Ordering;

use crate::storage::{Projection, Warehouse};
use crate::value::{sql_cmp, Kind, LikePattern, Value};

use super::agg::{self, Accumulator};
use super::ast::*;
use super::result::{ResultColumn, ResultSet};
use super::QueryError;

type Row = Vec<Value>;

struct Rel {
    binding: String,
    columns: Vec<ResultColumn>,
    rows: Vec<Row>,
}

struct Scope {
    rels: Vec<(String, Vec<ResultColumn>)>,
}

impl Scope {
    fn context(&self) -> String {
        let names: Vec<&str> = self.rels.iter().map(|r| r.0.as_str()).collect();
        format!("tables in scope: {}", names.join(", "))
    }

    /// Absolute position of a column in the concatenated row, plus its kind.
    fn lookup(&self, c: &ColumnRef) -> Result<(usize, Kind), QueryError> {
        let mut found = Vec::new();
        let mut offset = 0;
        let mut table_seen = c.table.is_none();
        for (binding, cols) in &self.rels {
            let in_table = match &c.table {
                Some(t) => binding.eq_ignore_ascii_case(t),
                None => true,
            };
            if in_table {
                table_seen = true;
                for (i, col) in cols.iter().enumerate() {
                    if col.name.eq_ignore_ascii_case(&c.column) {
                        found.push((offset + i, col.kind));
                    }
                }
            }
            offset += cols.len();
        }
        if !table_seen {
            return Err(QueryError::UnknownTable(c.table.clone().unwrap_or_default()));
        }
        match found.as_slice() {
            [] => Err(QueryError::UnknownColumn { column: c.to_string(), context: self.context() }),
            [one] => Ok(*one),
            _ => Err(QueryError::AmbiguousColumn { column: c.to_string(), context: self.context() }),
        }
    }

    fn width(&self) -> usize {
        self.rels.iter().map(|r| r.1.len()).sum()
    }
}

/// Operand with subquery results already evaluated.
enum NOperand {
    At(usize),
    Agg(usize),
    Lit(Value),
}

enum NExpr {
    And(Box<NExpr>, Box<NExpr>),
    Or(Box<NExpr>, Box<NExpr>),
    Cmp(NOperand, CmpOp, NOperand),
    Like(NOperand, LikePattern),
    In(NOperand, Vec<Value>),
}

fn get<'a>(o: &'a NOperand, row: &'a [Value], aggs: &'a [Value]) -> &'a Value {
    match o {
        NOperand::At(i) => &row[*i],
        NOperand::Agg(i) => &aggs[*i],
        NOperand::Lit(v) => v,
    }
}

fn holds(e: &NExpr, row: &[Value], aggs: &[Value]) -> bool {
    match e {
        NExpr::And(a, b) => holds(a, row, aggs) && holds(b, row, aggs),
        NExpr::Or(a, b) => holds(a, row, aggs) || holds(b, row, aggs),
        NExpr::Cmp(l, op, r) => match (sql_cmp(get(l, row, aggs), get(r, row, aggs)), op) {
            (Some(o), CmpOp::Eq) => o == Ordering::Equal,
            (Some(o), CmpOp::Ge) => o != Ordering::Less,
            (None, _) => false,
        },
        NExpr::Like(o, p) => p.matches_value(get(o, row, aggs)),
        NExpr::In(o, vals) => {
            let v = get(o, row, aggs);
            vals.iter().any(|m| sql_cmp(v, m) == Some(Ordering::Equal))
        }
    }
}

fn in_values(q: &Query, wh: &Warehouse) -> Result<Vec<Value>, QueryError> {
    let r = run(q, wh)?;
    if r.columns.len() != 1 {
        return Err(QueryError::Semantic(format!("IN subquery returns {} columns, expected 1", r.columns.len())));
    }
    Ok(r.rows.into_iter().map(|mut row| row.swap_remove(0)).collect())
}

/// Aggregate calls keyed by resolved argument position.
struct Calls {
    list: Vec<(AggFunc, Option<(usize, Kind)>)>,
}

impl Calls {
    fn add(&mut self, scope: &Scope, call: &AggCall) -> Result<usize, QueryError> {
        let arg = call.arg.as_ref().map(|c| scope.lookup(c)).transpose()?;
        if let Some((_, k)) = arg {
            if call.func == AggFunc::Sum && !k.is_numeric() {
                return Err(QueryError::Semantic(format!("{} needs a numeric argument, {} is {}", call.func.name(), call, k.as_str())));
            }
        }
        let key = (call.func, arg);
        if let Some(i) = self.list.iter().position(|k| k.0 == key.0 && k.1.map(|a| a.0) == key.1.map(|a| a.0)) {
            return Ok(i);
        }
        self.list.push(key);
        Ok(self.list.len() - 1)
    }
}

fn where_expr(e: &Expr, scope: &Scope, wh: &Warehouse) -> Result<NExpr, QueryError> {
    let op = |o: &Operand| -> Result<NOperand, QueryError> {
        match o {
            Operand::Column(c) => Ok(NOperand::At(scope.lookup(c)?.0)),
            Operand::Literal(l) => Ok(NOperand::Lit(l.to_value())),
            Operand::Aggregate(a) => Err(QueryError::Semantic(format!("aggregate {a} is not allowed in WHERE"))),
        }
    };
    Ok(match e {
        Expr::And(a, b) => NExpr::And(Box::new(where_expr(a, scope, wh)?), Box::new(where_expr(b, scope, wh)?)),
        Expr::Or(a, b) => NExpr::Or(Box::new(where_expr(a, scope, wh)?), Box::new(where_expr(b, scope, wh)?)),
        Expr::Compare { left, op: o, right } => NExpr::Cmp(op(left)?, *o, op(right)?),
        Expr::Like { operand, pattern } => NExpr::Like(op(operand)?, LikePattern::new(pattern)),
        Expr::InSubquery { operand, query } => {
            let o = op(operand)?;
            NExpr::In(o, in_values(query, wh)?)
        }
    })
}

fn load(tr: &TableRef, wh: &Warehouse) -> Result<Rel, QueryError> {
    match tr {
        TableRef::Table { name, alias } => {
            let table = wh
                .table_names()
                .into_iter()
                .find(|t| t.eq_ignore_ascii_case(name))
                .ok_or_else(|| QueryError::UnknownTable(name.clone()))?;
            let scan = wh.scan(&table, None, &Projection::All)?;
            let columns = scan.schema().columns.iter().map(|c| ResultColumn { name: c.name.clone(), kind: c.kind }).collect();
            Ok(Rel { binding: alias.clone().unwrap_or_else(|| name.clone()), columns, rows: scan.collect() })
        }
        TableRef::Subquery { query, alias } => {
            let r = run(query, wh)?;
            Ok(Rel { binding: alias.clone(), columns: r.columns, rows: r.rows })
        }
    }
}

struct Branch {
    columns: Vec<ResultColumn>,
    /// Visible columns followed by hidden sort values.
    rows: Vec<Row>,
    keys: Vec<(usize, bool)>,
    overflow: bool,
}

fn select(sel: &Select, wh: &Warehouse, order: &[OrderItem]) -> Result<Branch, QueryError> {
    let first = load(&sel.from, wh)?;
    let mut scope = Scope { rels: vec![(first.binding.clone(), first.columns.clone())] };
    let mut rows = first.rows;

    for j in &sel.joins {
        let rel = load(&j.table, wh)?;
        if scope.rels.iter().any(|r| r.0.eq_ignore_ascii_case(&rel.binding)) {
            return Err(QueryError::Semantic(format!("table name {} is used twice; add an alias", rel.binding)));
        }
        let left_width = scope.width();
        scope.rels.push((rel.binding.clone(), rel.columns.clone()));
        let mut pairs = Vec::new();
        for (a, b) in &j.on {
            let (pa, _) = scope.lookup(a)?;
            let (pb, _) = scope.lookup(b)?;
            if (pa >= left_width) == (pb >= left_width) {
                return Err(QueryError::Semantic(format!("join condition {a} = {b} must compare {} with an earlier table", rel.binding)));
            }
            pairs.push((pa, pb));
        }
        let right_width = rel.columns.len();
        let mut out = Vec::new();
        let mut right_matched = vec![false; rel.rows.len()];
        for l in &rows {
            let mut any = false;
            for (ri, r) in rel.rows.iter().enumerate() {
                let at = |p: usize| if p < left_width { &l[p] } else { &r[p - left_width] };
                if pairs.iter().all(|&(a, b)| sql_cmp(at(a), at(b)) == Some(Ordering::Equal)) {
                    any = true;
                    right_matched[ri] = true;
                    let mut row = l.clone();
                    row.extend(r.iter().cloned());
                    out.push(row);
                }
            }
            if !any && j.kind == JoinKind::Left {
                let mut row = l.clone();
                row.extend(std::iter::repeat_n(Value::Null, right_width));
                out.push(row);
            }
        }
        if j.kind == JoinKind::Right {
            for (ri, r) in rel.rows.iter().enumerate() {
                if !right_matched[ri] {
                    let mut row = vec![Value::Null; left_width];
                    row.extend(r.iter().cloned());
                    out.push(row);
                }
            }
        }
        rows = out;
    }

    if let Some(f) = &sel.filter {
        let e = where_expr(f, &scope, wh)?;
        rows.retain(|r| holds(&e, r, &[]));
    }

    let mut calls = Calls { list: Vec::new() };
    for it in &sel.items {
        if let SelectItem::Aggregate { call, .. } = it {
            calls.add(&scope, call)?;
        }
    }
    for o in order {
        if let OrderKey::Aggregate(call) = &o.key {
            calls.add(&scope, call)?;
        }
    }
    if sel.having.is_some() && sel.group_by.is_empty() {
        return Err(QueryError::Semantic("HAVING requires GROUP BY".into()));
    }
    let mut group: Vec<usize> = Vec::new();
    for g in &sel.group_by {
        let p = scope.lookup(g)?.0;
        if !group.contains(&p) {
            group.push(p);
        }
    }
    // HAVING is bound before deciding whether the query aggregates, since
    // it may introduce new aggregate calls.
    let having = match &sel.having {
        Some(h) => Some(having_expr(h, sel, &scope, &group, &mut calls, wh)?),
        None => None,
    };
    let aggregating = !group.is_empty() || !calls.list.is_empty();

    // Select list: (name, kind, source) where source is a row position or
    // an aggregate index.
    enum Src {
        At(usize),
        Agg(usize),
    }
    let mut out_cols: Vec<(String, Kind, Src)> = Vec::new();
    for it in &sel.items {
        match it {
            SelectItem::Star => {
                if aggregating {
                    return Err(QueryError::Semantic("SELECT * cannot be combined with GROUP BY or aggregates".into()));
                }
                let mut p = 0;
                for (_, cols) in &scope.rels {
                    for c in cols {
                        out_cols.push((c.name.clone(), c.kind, Src::At(p)));
                        p += 1;
                    }
                }
            }
            SelectItem::Column { column, .. } => {
                let (p, k) = scope.lookup(column)?;
                if aggregating && !group.contains(&p) {
                    return Err(QueryError::Semantic(format!("column {column} must appear in GROUP BY or be aggregated")));
                }
                out_cols.push((it.output_name(), k, Src::At(p)));
            }
            SelectItem::Aggregate { call, .. } => {
                let i = calls.add(&scope, call)?;
                let kind = agg::result_kind(call.func, calls.list[i].1.map(|a| a.1));
                out_cols.push((it.output_name(), kind, Src::Agg(i)));
            }
        }
    }

    // ORDER BY resolution.
    let mut hidden: Vec<Src> = Vec::new();
    let mut keys = Vec::new();
    for o in order {
        let idx = match &o.key {
            OrderKey::Column(c) => {
                let named = if c.table.is_none() { out_cols.iter().position(|x| x.0.eq_ignore_ascii_case(&c.column)) } else { None };
                match named {
                    Some(i) => i,
                    None => {
                        let (p, _) = scope.lookup(c)?;
                        match out_cols.iter().position(|x| matches!(x.2, Src::At(q) if q == p)) {
                            Some(i) => i,
                            None => {
                                if aggregating && !group.contains(&p) {
                                    return Err(QueryError::Semantic(format!("ORDER BY column {c} must appear in GROUP BY or be aggregated")));
                                }
                                hidden.push(Src::At(p));
                                out_cols.len() + hidden.len() - 1
                            }
                        }
                    }
                }
            }
            OrderKey::Aggregate(call) => {
                let a = calls.add(&scope, call)?;
                match out_cols.iter().position(|x| matches!(x.2, Src::Agg(q) if q == a)) {
                    Some(i) => i,
                    None => {
                        hidden.push(Src::Agg(a));
                        out_cols.len() + hidden.len() - 1
                    }
                }
            }
        };
        keys.push((idx, o.descending));
    }

    let mut overflow = false;
    let emit = |row: &[Value], aggs: &[Value], s: &Src| match s {
        Src::At(p) => row[*p].clone(),
        Src::Agg(a) => aggs[*a].clone(),
    };
    let mut result: Vec<Row> = Vec::new();
    if aggregating {
        rows.sort_by(|a, b| {
            for &g in &group {
                let o = a[g].cmp(&b[g]);
                if o != Ordering::Equal {
                    return o;
                }
            }
            Ordering::Equal
        });
        let mut bounds: Vec<(usize, usize)> = Vec::new();
        let mut start = 0;
        for i in 1..=rows.len() {
            if i == rows.len() || group.iter().any(|&g| rows[i][g] != rows[start][g]) {
                if i > start {
                    bounds.push((start, i));
                }
                start = i;
            }
        }
        if group.is_empty() && bounds.is_empty() {
            bounds.push((0, 0));
        }
        let mut finished: Vec<Vec<Value>> = Vec::new();
        let mut promote = vec![false; calls.list.len()];
        for &(s, e) in &bounds {
            let mut vals = Vec::new();
            for (ci, (func, arg)) in calls.list.iter().enumerate() {
                let mut acc = Accumulator::new(*func, arg.map(|a| a.1));
                for r in &rows[s..e] {
                    match arg {
                        Some((p, _)) => acc.update(&r[*p]),
                        None => acc.count_row(),
                    }
                }
                let (v, o) = acc.finish();
                promote[ci] |= o;
                vals.push(v);
            }
            finished.push(vals);
        }
        for (ci, p) in promote.iter().enumerate() {
            if *p {
                overflow = true;
                agg::promote_column(&mut finished, ci);
            }
        }
        let null_row = vec![Value::Null; scope.width()];
        for (&(s, e), vals) in bounds.iter().zip(&finished) {
            let rep: &[Value] = if e > s { &rows[s] } else { &null_row };
            if let Some(h) = &having {
                if !holds(h, rep, vals) {
                    continue;
                }
            }
            result.push(out_cols.iter().map(|c| &c.2).chain(&hidden).map(|src| emit(rep, vals, src)).collect());
        }
    } else {
        for r in &rows {
            result.push(out_cols.iter().map(|c| &c.2).chain(&hidden).map(|src| emit(r, &[], src)).collect());
        }
    }
    let columns = out_cols.into_iter().map(|(name, kind, _)| ResultColumn { name, kind }).collect();
    Ok(Branch { columns, rows: result, keys, overflow })
}

fn having_expr(e: &Expr, sel: &Select, scope: &Scope, group: &[usize], calls: &mut Calls, wh: &Warehouse) -> Result<NExpr, QueryError> {
    let op = |o: &Operand, calls: &mut Calls| -> Result<NOperand, QueryError> {
        match o {
            Operand::Literal(l) => Ok(NOperand::Lit(l.to_value())),
            Operand::Aggregate(a) => Ok(NOperand::Agg(calls.add(scope, a)?)),
            Operand::Column(c) => {
                if c.table.is_none() {
                    for it in &sel.items {
                        if it.alias().is_some_and(|a| a.eq_ignore_ascii_case(&c.column)) {
                            return match it {
                                SelectItem::Column { column, .. } => Ok(NOperand::At(scope.lookup(column)?.0)),
                                SelectItem::Aggregate { call, .. } => Ok(NOperand::Agg(calls.add(scope, call)?)),
                                SelectItem::Star => unreachable!(),
                            };
                        }
                    }
                }
                let (p, _) = scope.lookup(c)?;
                if !group.contains(&p) {
                    return Err(QueryError::Semantic(format!("HAVING column {c} must appear in GROUP BY or be aggregated")));
                }
                Ok(NOperand::At(p))
            }
        }
    };
    Ok(match e {
        Expr::And(a, b) => NExpr::And(
            Box::new(having_expr(a, sel, scope, group, calls, wh)?),
            Box::new(having_expr(b, sel, scope, group, calls, wh)?),
        ),
        Expr::Or(a, b) => NExpr::Or(
            Box::new(having_expr(a, sel, scope, group, calls, wh)?),
            Box::new(having_expr(b, sel, scope, group, calls, wh)?),
        ),
        Expr::Compare { left, op: o, right } => NExpr::Cmp(op(left, calls)?, *o, op(right, calls)?),
        Expr::Like { operand, pattern } => NExpr::Like(op(operand, calls)?, LikePattern::new(pattern)),
        Expr::InSubquery { operand, query } => {
            let o = op(operand, calls)?;
            NExpr::In(o, in_values(query, wh)?)
        }
    })
}

fn order_rows(rows: &mut [Row], keys: &[(usize, bool)], width: usize) {
    rows.sort_by(|a, b| {
        keys.iter()
            .map(|&(k, desc)| if desc { b[k].cmp(&a[k]) } else { a[k].cmp(&b[k]) })
            .find(|o| *o != Ordering::Equal)
            .unwrap_or_else(|| a[..width].cmp(&b[..width]))
    });
}

fn run(q: &Query, wh: &Warehouse) -> Result<ResultSet, QueryError> {
    let ordered = !q.order_by.is_empty();
    let (mut columns, mut rows, overflow) = if q.branches.len() == 1 {
        let b = select(&q.branches[0], wh, &q.order_by)?;
        let width = b.columns.len();
        let mut rows = b.rows;
        order_rows(&mut rows, &b.keys, width);
        for r in &mut rows {
            r.truncate(width);
        }
        (b.columns, rows, b.overflow)
    } else {
        let mut all: Vec<Branch> = Vec::new();
        for s in &q.branches {
            all.push(select(s, wh, &[])?);
        }
        let mut columns = all[0].columns.clone();
        for b in &all[1..] {
            if b.columns.len() != columns.len() {
                return Err(QueryError::Semantic(format!("UNION branches have {} and {} columns", columns.len(), b.columns.len())));
            }
            for (i, c) in b.columns.iter().enumerate() {
                let k = columns[i].kind;
                columns[i].kind = if k == c.kind {
                    k
                } else if k.is_numeric() && c.kind.is_numeric() {
                    Kind::Float64
                } else {
                    return Err(QueryError::Semantic(format!("UNION column {} mixes {} and {}", i + 1, k.as_str(), c.kind.as_str())));
                };
            }
        }
        let overflow = all.iter().any(|b| b.overflow);
        let mut rows: Vec<Row> = Vec::new();
        for b in all {
            for mut r in b.rows {
                for (i, c) in columns.iter().enumerate() {
                    if let (Kind::Float64, Value::Int(x)) = (c.kind, &r[i]) {
                        r[i] = Value::Float(*x as f64);
                    }
                }
                rows.push(r);
            }
        }
        rows.sort();
        rows.dedup();
        let mut keys = Vec::new();
        for o in &q.order_by {
            let OrderKey::Column(c) = &o.key else {
                return Err(QueryError::Semantic("ORDER BY after UNION must name an output column".into()));
            };
            let i = columns
                .iter()
                .position(|col| c.table.is_none() && col.name.eq_ignore_ascii_case(&c.column))
                .ok_or_else(|| QueryError::Semantic(format!("ORDER BY after UNION must name an output column, got {c}")))?;
            keys.push((i, o.descending));
        }
        let width = columns.len();
        order_rows(&mut rows, &keys, width);
        (columns, rows, overflow)
    };
    if let Some(n) = q.limit {
        rows.truncate(usize::try_from(n).unwrap_or(usize::MAX));
    }
    if overflow {
        agg::settle_overflow(&mut columns, &mut rows);
    }
    Ok(ResultSet { columns, rows, ordered, sum_overflow: overflow })
}

/// Evaluates `q` with the reference interpreter.
pub fn execute_naive_oracle(q: &Query, wh: &Warehouse) -> Result<ResultSet, QueryError> {
    run(q, wh)
}
