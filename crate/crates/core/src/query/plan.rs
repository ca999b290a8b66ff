//! Name binding and physical planning for the analytic engine.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use crate::storage::{CompareOp, Warehouse};
use crate::value::{Kind, LikePattern, Value};

use super::agg;
use super::ast::*;
use super::result::ResultColumn;
use super::QueryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanOptions {
    /// Push single-table WHERE conjuncts into the scans.
    pub pushdown: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions { pushdown: true }
    }
}

#[derive(Debug, Clone)]
pub enum BoundOperand {
    Column(usize),
    Literal(Value),
}

/// Row predicate over positional columns.
#[derive(Debug, Clone)]
pub enum BoundExpr {
    And(Box<BoundExpr>, Box<BoundExpr>),
    Or(Box<BoundExpr>, Box<BoundExpr>),
    Compare { left: BoundOperand, op: CmpOp, right: BoundOperand },
    Like { operand: BoundOperand, pattern: LikePattern },
    /// Membership in the result of `subqueries[set]`.
    In { operand: BoundOperand, set: usize },
}

/// Storage-side filter. `InSet` values are filled in at execution time.
#[derive(Debug, Clone)]
pub enum PushedPredicate {
    Compare { column: String, op: CompareOp, value: Value },
    Like { column: String, pattern: String },
    InSet { column: String, set: usize },
    And(Vec<PushedPredicate>),
}

/// How join key values are normalized before hashing so that hash equality
/// coincides with SQL equality between the two key kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyMode {
    Direct,
    Numeric,
    /// Date on one side, text on the other; `text_left` says which.
    DateText { text_left: bool },
    /// Kinds never compare equal.
    Never,
}

impl KeyMode {
    pub fn for_kinds(left: Kind, right: Kind) -> KeyMode {
        match (left, right) {
            (a, b) if a.is_numeric() && b.is_numeric() => KeyMode::Numeric,
            (a, b) if a == b => KeyMode::Direct,
            (Kind::Text, Kind::Date) => KeyMode::DateText { text_left: true },
            (Kind::Date, Kind::Text) => KeyMode::DateText { text_left: false },
            _ => KeyMode::Never,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AggSpec {
    pub func: AggFunc,
    /// None is `COUNT(*)`.
    pub arg: Option<usize>,
    pub input: Option<Kind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SortKey {
    pub column: usize,
    pub descending: bool,
}

#[derive(Debug, Clone)]
pub enum PlanNode {
    Scan { table: String, columns: Vec<String>, pushed: Option<PushedPredicate> },
    Materialize { plan: Box<PhysicalPlan> },
    Filter { input: Box<PlanNode>, predicate: BoundExpr },
    HashJoin {
        kind: JoinKind,
        left: Box<PlanNode>,
        right: Box<PlanNode>,
        left_keys: Vec<usize>,
        right_keys: Vec<usize>,
        modes: Vec<KeyMode>,
        left_width: usize,
        right_width: usize,
    },
    HashAggregate { input: Box<PlanNode>, group: Vec<usize>, aggs: Vec<AggSpec> },
    Project { input: Box<PlanNode>, columns: Vec<usize> },
    /// Distinct union; int columns listed in `promote` become float.
    UnionDistinct { inputs: Vec<PlanNode>, promote: Vec<usize> },
    /// Sorts by `keys`, ties broken by the first `width` columns ascending.
    Sort { input: Box<PlanNode>, keys: Vec<SortKey>, width: usize },
    Limit { input: Box<PlanNode>, count: u64 },
}

#[derive(Debug, Clone)]
pub struct PhysicalPlan {
    pub root: PlanNode,
    pub columns: Vec<ResultColumn>,
    pub ordered: bool,
    /// Uncorrelated IN subqueries, evaluated before `root`.
    pub subqueries: Vec<PhysicalPlan>,
}

impl PlanNode {
    pub fn name(&self) -> &'static str {
        match self {
            PlanNode::Scan { .. } => "Scan",
            PlanNode::Materialize { .. } => "Materialize",
            PlanNode::Filter { .. } => "Filter",
            PlanNode::HashJoin { .. } => "HashJoin",
            PlanNode::HashAggregate { .. } => "HashAggregate",
            PlanNode::Project { .. } => "Project",
            PlanNode::UnionDistinct { .. } => "UnionDistinct",
            PlanNode::Sort { .. } => "Sort",
            PlanNode::Limit { .. } => "Limit",
        }
    }

    pub fn children(&self) -> Vec<&PlanNode> {
        match self {
            PlanNode::Scan { .. } | PlanNode::Materialize { .. } => vec![],
            PlanNode::Filter { input, .. }
            | PlanNode::HashAggregate { input, .. }
            | PlanNode::Project { input, .. }
            | PlanNode::Sort { input, .. }
            | PlanNode::Limit { input, .. } => vec![input],
            PlanNode::HashJoin { left, right, .. } => vec![left, right],
            PlanNode::UnionDistinct { inputs, .. } => inputs.iter().collect(),
        }
    }
}

impl PhysicalPlan {
    /// Number of nodes named `name` in this plan, not counting subqueries.
    pub fn count_nodes(&self, name: &str) -> usize {
        fn walk(n: &PlanNode, name: &str) -> usize {
            (n.name() == name) as usize + n.children().into_iter().map(|c| walk(c, name)).sum::<usize>()
        }
        walk(&self.root, name)
    }

    /// Indented plan tree.
    pub fn explain(&self) -> String {
        let mut out = String::new();
        explain_plan(self, 0, &mut out);
        out
    }
}

fn explain_plan(plan: &PhysicalPlan, depth: usize, out: &mut String) {
    explain_node(&plan.root, depth, out);
    for (i, s) in plan.subqueries.iter().enumerate() {
        let _ = writeln!(out, "{}InSubquery #{i}", "  ".repeat(depth));
        explain_plan(s, depth + 1, out);
    }
}

fn explain_node(n: &PlanNode, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    let _ = match n {
        PlanNode::Scan { table, columns, pushed } => {
            let p = pushed.as_ref().map(|p| format!(" pushed=[{p}]")).unwrap_or_default();
            writeln!(out, "{pad}Scan {table} cols=[{}]{p}", columns.join(", "))
        }
        PlanNode::Materialize { plan } => {
            let _ = writeln!(out, "{pad}Materialize");
            explain_plan(plan, depth + 1, out);
            return;
        }
        PlanNode::Filter { predicate, .. } => writeln!(out, "{pad}Filter {predicate}"),
        PlanNode::HashJoin { kind, left_keys, right_keys, .. } => {
            writeln!(out, "{pad}HashJoin {kind:?} left{left_keys:?} = right{right_keys:?}")
        }
        PlanNode::HashAggregate { group, aggs, .. } => {
            let a: Vec<String> = aggs
                .iter()
                .map(|a| format!("{}({})", a.func.name(), a.arg.map_or("*".to_string(), |c| format!("#{c}"))))
                .collect();
            writeln!(out, "{pad}HashAggregate group={group:?} aggs=[{}]", a.join(", "))
        }
        PlanNode::Project { columns, .. } => writeln!(out, "{pad}Project {columns:?}"),
        PlanNode::UnionDistinct { .. } => writeln!(out, "{pad}UnionDistinct"),
        PlanNode::Sort { keys, .. } => {
            let k: Vec<String> = keys.iter().map(|k| format!("#{}{}", k.column, if k.descending { " DESC" } else { "" })).collect();
            writeln!(out, "{pad}Sort [{}]", k.join(", "))
        }
        PlanNode::Limit { count, .. } => writeln!(out, "{pad}Limit {count}"),
    };
    for c in n.children() {
        explain_node(c, depth + 1, out);
    }
}

impl fmt::Display for PushedPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PushedPredicate::Compare { column, op, value } => {
                write!(f, "{column} {} {}", if *op == CompareOp::Eq { "=" } else { ">=" }, value.render())
            }
            PushedPredicate::Like { column, pattern } => write!(f, "{column} LIKE '{pattern}'"),
            PushedPredicate::InSet { column, set } => write!(f, "{column} IN #{set}"),
            PushedPredicate::And(ps) => {
                let parts: Vec<String> = ps.iter().map(|p| p.to_string()).collect();
                f.write_str(&parts.join(" AND "))
            }
        }
    }
}

impl fmt::Display for BoundOperand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundOperand::Column(c) => write!(f, "#{c}"),
            BoundOperand::Literal(v) => write!(f, "{}", v.render()),
        }
    }
}

impl fmt::Display for BoundExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundExpr::And(a, b) => write!(f, "({a} AND {b})"),
            BoundExpr::Or(a, b) => write!(f, "({a} OR {b})"),
            BoundExpr::Compare { left, op, right } => {
                write!(f, "{left} {} {right}", if *op == CmpOp::Eq { "=" } else { ">=" })
            }
            BoundExpr::Like { operand, .. } => write!(f, "{operand} LIKE <pattern>"),
            BoundExpr::In { operand, set } => write!(f, "{operand} IN #{set}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Binding

struct Source {
    binding: String,
    /// Base table name; None for a derived table.
    table: Option<String>,
    columns: Vec<ResultColumn>,
    derived: Option<PhysicalPlan>,
}

type ColId = (usize, usize);

#[derive(Debug, Clone)]
enum ROperand {
    Col(ColId),
    Agg(usize),
    Lit(Value),
}

#[derive(Debug, Clone)]
enum RExpr {
    And(Box<RExpr>, Box<RExpr>),
    Or(Box<RExpr>, Box<RExpr>),
    Compare { left: ROperand, op: CmpOp, right: ROperand },
    Like { operand: ROperand, pattern: String },
    In { operand: ROperand, set: usize },
}

impl RExpr {
    fn columns(&self, out: &mut BTreeSet<ColId>) {
        let mut op = |o: &ROperand| {
            if let ROperand::Col(c) = o {
                out.insert(*c);
            }
        };
        match self {
            RExpr::And(a, b) | RExpr::Or(a, b) => {
                a.columns(out);
                b.columns(out);
            }
            RExpr::Compare { left, right, .. } => {
                op(left);
                op(right);
            }
            RExpr::Like { operand, .. } | RExpr::In { operand, .. } => op(operand),
        }
    }
}

struct Ctx<'a> {
    wh: &'a Warehouse,
    opts: PlanOptions,
    subqueries: Vec<PhysicalPlan>,
}

fn scope_list(sources: &[Source]) -> String {
    let names: Vec<&str> = sources.iter().map(|s| s.binding.as_str()).collect();
    format!("tables in scope: {}", names.join(", "))
}

fn resolve(sources: &[Source], c: &ColumnRef) -> Result<ColId, QueryError> {
    let mut hits = Vec::new();
    match &c.table {
        Some(t) => {
            let Some(si) = sources.iter().position(|s| s.binding.eq_ignore_ascii_case(t)) else {
                return Err(QueryError::UnknownTable(t.clone()));
            };
            for (ci, col) in sources[si].columns.iter().enumerate() {
                if col.name.eq_ignore_ascii_case(&c.column) {
                    hits.push((si, ci));
                }
            }
        }
        None => {
            for (si, s) in sources.iter().enumerate() {
                for (ci, col) in s.columns.iter().enumerate() {
                    if col.name.eq_ignore_ascii_case(&c.column) {
                        hits.push((si, ci));
                    }
                }
            }
        }
    }
    match hits.len() {
        0 => Err(QueryError::UnknownColumn { column: c.to_string(), context: scope_list(sources) }),
        1 => Ok(hits[0]),
        _ => Err(QueryError::AmbiguousColumn { column: c.to_string(), context: scope_list(sources) }),
    }
}

fn find_table(wh: &Warehouse, name: &str) -> Result<String, QueryError> {
    wh.table_names()
        .into_iter()
        .find(|t| t.eq_ignore_ascii_case(name))
        .ok_or_else(|| QueryError::UnknownTable(name.to_string()))
}

fn bind_source(tr: &TableRef, ctx: &Ctx) -> Result<Source, QueryError> {
    match tr {
        TableRef::Table { name, alias } => {
            let table = find_table(ctx.wh, name)?;
            let schema = ctx.wh.table(&table)?.schema.clone();
            let columns = schema.columns.iter().map(|c| ResultColumn { name: c.name.clone(), kind: c.kind }).collect();
            Ok(Source { binding: alias.clone().unwrap_or_else(|| name.clone()), table: Some(table), columns, derived: None })
        }
        TableRef::Subquery { query, alias } => {
            let plan = plan_with(query, ctx.wh, ctx.opts)?;
            Ok(Source { binding: alias.clone(), table: None, columns: plan.columns.clone(), derived: Some(plan) })
        }
    }
}

/// Aggregate calls of one SELECT, deduplicated by resolved argument.
struct AggTable {
    calls: Vec<(AggFunc, Option<ColId>)>,
}

impl AggTable {
    fn intern(&mut self, sources: &[Source], call: &AggCall) -> Result<usize, QueryError> {
        let arg = call.arg.as_ref().map(|c| resolve(sources, c)).transpose()?;
        if let Some((s, c)) = arg {
            let kind = sources[s].columns[c].kind;
            if !agg::accepts(call.func, kind) {
                return Err(QueryError::Semantic(format!("{} needs a numeric argument, {} is {}", call.func.name(), call, kind.as_str())));
            }
        }
        let key = (call.func, arg);
        Ok(match self.calls.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                self.calls.push(key);
                self.calls.len() - 1
            }
        })
    }
}

fn bind_operand(o: &Operand, sources: &[Source], aggs: Option<&mut AggTable>) -> Result<ROperand, QueryError> {
    Ok(match o {
        Operand::Column(c) => ROperand::Col(resolve(sources, c)?),
        Operand::Literal(l) => ROperand::Lit(l.to_value()),
        Operand::Aggregate(call) => match aggs {
            Some(t) => ROperand::Agg(t.intern(sources, call)?),
            None => return Err(QueryError::Semantic(format!("aggregate {call} is not allowed in WHERE"))),
        },
    })
}

fn plan_in_subquery(q: &Query, ctx: &mut Ctx) -> Result<usize, QueryError> {
    let plan = plan_with(q, ctx.wh, ctx.opts)?;
    if plan.columns.len() != 1 {
        return Err(QueryError::Semantic(format!("IN subquery returns {} columns, expected 1", plan.columns.len())));
    }
    ctx.subqueries.push(plan);
    Ok(ctx.subqueries.len() - 1)
}

/// Binds a WHERE expression (no aggregates).
fn bind_where(e: &Expr, sources: &[Source], ctx: &mut Ctx) -> Result<RExpr, QueryError> {
    Ok(match e {
        Expr::And(a, b) => RExpr::And(Box::new(bind_where(a, sources, ctx)?), Box::new(bind_where(b, sources, ctx)?)),
        Expr::Or(a, b) => RExpr::Or(Box::new(bind_where(a, sources, ctx)?), Box::new(bind_where(b, sources, ctx)?)),
        Expr::Compare { left, op, right } => RExpr::Compare {
            left: bind_operand(left, sources, None)?,
            op: *op,
            right: bind_operand(right, sources, None)?,
        },
        Expr::Like { operand, pattern } => RExpr::Like { operand: bind_operand(operand, sources, None)?, pattern: pattern.clone() },
        Expr::InSubquery { operand, query } => {
            let operand = bind_operand(operand, sources, None)?;
            RExpr::In { operand, set: plan_in_subquery(query, ctx)? }
        }
    })
}

fn to_pushed(e: &RExpr, src: &Source, set_kinds: &[Kind]) -> Option<PushedPredicate> {
    let name = |c: &ColId| src.columns[c.1].name.clone();
    match e {
        RExpr::And(a, b) => Some(PushedPredicate::And(vec![to_pushed(a, src, set_kinds)?, to_pushed(b, src, set_kinds)?])),
        RExpr::Or(..) => None,
        RExpr::Compare { left: ROperand::Col(c), op, right: ROperand::Lit(v) } => Some(PushedPredicate::Compare {
            column: name(c),
            op: if *op == CmpOp::Eq { CompareOp::Eq } else { CompareOp::Ge },
            value: v.clone(),
        }),
        RExpr::Compare { left: ROperand::Lit(v), op: CmpOp::Eq, right: ROperand::Col(c) } => {
            Some(PushedPredicate::Compare { column: name(c), op: CompareOp::Eq, value: v.clone() })
        }
        RExpr::Like { operand: ROperand::Col(c), pattern } => Some(PushedPredicate::Like { column: name(c), pattern: pattern.clone() }),
        RExpr::In { operand: ROperand::Col(c), set } => {
            // Storage membership is hash equality, which matches SQL equality
            // only between identical non-float kinds.
            let kind = src.columns[c.1].kind;
            (kind == set_kinds[*set] && kind != Kind::Float64).then(|| PushedPredicate::InSet { column: name(c), set: *set })
        }
        _ => None,
    }
}

fn bind_expr(e: &RExpr, map: &dyn Fn(&ROperand) -> Result<BoundOperand, QueryError>) -> Result<BoundExpr, QueryError> {
    Ok(match e {
        RExpr::And(a, b) => BoundExpr::And(Box::new(bind_expr(a, map)?), Box::new(bind_expr(b, map)?)),
        RExpr::Or(a, b) => BoundExpr::Or(Box::new(bind_expr(a, map)?), Box::new(bind_expr(b, map)?)),
        RExpr::Compare { left, op, right } => BoundExpr::Compare { left: map(left)?, op: *op, right: map(right)? },
        RExpr::Like { operand, pattern } => BoundExpr::Like { operand: map(operand)?, pattern: LikePattern::new(pattern) },
        RExpr::In { operand, set } => BoundExpr::In { operand: map(operand)?, set: *set },
    })
}

fn and_all(mut es: Vec<BoundExpr>) -> Option<BoundExpr> {
    let first = if es.is_empty() { return None } else { es.remove(0) };
    Some(es.into_iter().fold(first, |a, b| BoundExpr::And(Box::new(a), Box::new(b))))
}

fn filter(input: PlanNode, preds: Vec<BoundExpr>) -> PlanNode {
    match and_all(preds) {
        Some(predicate) => PlanNode::Filter { input: Box::new(input), predicate },
        None => input,
    }
}

struct SelectPlan {
    node: PlanNode,
    columns: Vec<ResultColumn>,
    /// Sort keys over the projected row (which may carry hidden columns).
    sort: Vec<SortKey>,
    hidden: usize,
}

/// Output column of a SELECT before projection.
struct OutCol {
    name: String,
    kind: Kind,
    pos: usize,
    col: Option<ColId>,
    agg: Option<usize>,
}

fn plan_select(sel: &Select, ctx: &mut Ctx, order: Option<&[OrderItem]>) -> Result<SelectPlan, QueryError> {
    // Sources in FROM order.
    let mut sources = vec![bind_source(&sel.from, ctx)?];
    for j in &sel.joins {
        let s = bind_source(&j.table, ctx)?;
        if sources.iter().any(|o| o.binding.eq_ignore_ascii_case(&s.binding)) {
            return Err(QueryError::Semantic(format!("table name {} is used twice; add an alias", s.binding)));
        }
        sources.push(s);
    }

    // Join keys: each equality compares the new source with an earlier one.
    let mut join_keys: Vec<Vec<(ColId, ColId)>> = Vec::new();
    for (ji, j) in sel.joins.iter().enumerate() {
        let right = ji + 1;
        let mut keys = Vec::new();
        for (a, b) in &j.on {
            let ra = resolve(&sources[..=right], a)?;
            let rb = resolve(&sources[..=right], b)?;
            let pair = if ra.0 == right && rb.0 < right {
                (rb, ra)
            } else if rb.0 == right && ra.0 < right {
                (ra, rb)
            } else {
                return Err(QueryError::Semantic(format!(
                    "join condition {a} = {b} must compare {} with an earlier table",
                    sources[right].binding
                )));
            };
            keys.push(pair);
        }
        join_keys.push(keys);
    }

    // Sources on the null-supplying side of an outer join.
    let mut null_side = vec![false; sources.len()];
    for (ji, j) in sel.joins.iter().enumerate() {
        match j.kind {
            JoinKind::Inner => {}
            JoinKind::Left => null_side[ji + 1] = true,
            JoinKind::Right => null_side[..=ji].iter_mut().for_each(|n| *n = true),
        }
    }

    let conjuncts: Vec<RExpr> = match &sel.filter {
        Some(f) => f.conjuncts().into_iter().map(|c| bind_where(c, &sources, ctx)).collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    let set_kinds: Vec<Kind> = ctx.subqueries.iter().map(|p| p.columns[0].kind).collect();

    // Conjunct placement: storage, above one source, or after the joins.
    let mut storage: Vec<Vec<PushedPredicate>> = vec![Vec::new(); sources.len()];
    let mut leaf: Vec<Vec<RExpr>> = vec![Vec::new(); sources.len()];
    let mut residual: Vec<RExpr> = Vec::new();
    for c in conjuncts {
        let mut cols = BTreeSet::new();
        c.columns(&mut cols);
        let srcs: BTreeSet<usize> = cols.iter().map(|c| c.0).collect();
        if ctx.opts.pushdown && srcs.len() == 1 {
            let s = *srcs.iter().next().unwrap();
            if !null_side[s] {
                match (sources[s].table.is_some(), to_pushed(&c, &sources[s], &set_kinds)) {
                    (true, Some(p)) => storage[s].push(p),
                    _ => leaf[s].push(c),
                }
                continue;
            }
        }
        residual.push(c);
    }

    // Aggregation analysis.
    let mut aggs = AggTable { calls: Vec::new() };
    for it in &sel.items {
        if let SelectItem::Aggregate { call, .. } = it {
            aggs.intern(&sources, call)?;
        }
    }
    if let Some(order) = order {
        for o in order {
            if let OrderKey::Aggregate(call) = &o.key {
                aggs.intern(&sources, call)?;
            }
        }
    }
    let having = match &sel.having {
        Some(h) => {
            if sel.group_by.is_empty() {
                return Err(QueryError::Semantic("HAVING requires GROUP BY".into()));
            }
            Some(bind_having(h, sel, &sources, &mut aggs, ctx)?)
        }
        None => None,
    };
    let group: Vec<ColId> = {
        let mut g = Vec::new();
        for c in &sel.group_by {
            let r = resolve(&sources, c)?;
            if !g.contains(&r) {
                g.push(r);
            }
        }
        g
    };
    let aggregate = !group.is_empty() || !aggs.calls.is_empty();

    // Output columns with their provenance.
    let mut outs: Vec<OutCol> = Vec::new();
    for it in &sel.items {
        match it {
            SelectItem::Star => {
                if aggregate {
                    return Err(QueryError::Semantic("SELECT * cannot be combined with GROUP BY or aggregates".into()));
                }
                for (si, s) in sources.iter().enumerate() {
                    for (ci, c) in s.columns.iter().enumerate() {
                        outs.push(OutCol { name: c.name.clone(), kind: c.kind, pos: 0, col: Some((si, ci)), agg: None });
                    }
                }
            }
            SelectItem::Column { column, .. } => {
                let r = resolve(&sources, column)?;
                if aggregate && !group.contains(&r) {
                    return Err(QueryError::Semantic(format!("column {column} must appear in GROUP BY or be aggregated")));
                }
                outs.push(OutCol { name: it.output_name(), kind: sources[r.0].columns[r.1].kind, pos: 0, col: Some(r), agg: None });
            }
            SelectItem::Aggregate { call, .. } => {
                let a = aggs.intern(&sources, call)?;
                let input = call.arg.as_ref().map(|_| {
                    let (s, c) = aggs.calls[a].1.unwrap();
                    sources[s].columns[c].kind
                });
                outs.push(OutCol { name: it.output_name(), kind: agg::result_kind(call.func, input), pos: 0, col: None, agg: Some(a) });
            }
        }
    }

    // ORDER BY keys: visible output positions or hidden extra columns.
    enum Hidden {
        Col(ColId),
        Agg(usize),
    }
    let mut hidden: Vec<Hidden> = Vec::new();
    let mut sort: Vec<SortKey> = Vec::new();
    for o in order.unwrap_or(&[]) {
        let column = match &o.key {
            OrderKey::Column(c) => {
                let by_name = if c.table.is_none() { outs.iter().position(|x| x.name.eq_ignore_ascii_case(&c.column)) } else { None };
                match by_name {
                    Some(i) => i,
                    None => {
                        let r = resolve(&sources, c)?;
                        match outs.iter().position(|x| x.col == Some(r)) {
                            Some(i) => i,
                            None => {
                                if aggregate && !group.contains(&r) {
                                    return Err(QueryError::Semantic(format!("ORDER BY column {c} must appear in GROUP BY or be aggregated")));
                                }
                                hidden.push(Hidden::Col(r));
                                outs.len() + hidden.len() - 1
                            }
                        }
                    }
                }
            }
            OrderKey::Aggregate(call) => {
                let a = aggs.intern(&sources, call)?;
                match outs.iter().position(|x| x.agg == Some(a)) {
                    Some(i) => i,
                    None => {
                        hidden.push(Hidden::Agg(a));
                        outs.len() + hidden.len() - 1
                    }
                }
            }
        };
        sort.push(SortKey { column, descending: o.descending });
    }

    // Columns each source must deliver.
    let mut needed: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); sources.len()];
    let mut need = |c: ColId| {
        needed[c.0].insert(c.1);
    };
    for o in &outs {
        if let Some(c) = o.col {
            need(c);
        }
    }
    for h in &hidden {
        if let Hidden::Col(c) = h {
            need(*c);
        }
    }
    for ks in &join_keys {
        for (a, b) in ks {
            need(*a);
            need(*b);
        }
    }
    let mut referenced = BTreeSet::new();
    for e in leaf.iter().flatten().chain(&residual) {
        e.columns(&mut referenced);
    }
    referenced.iter().for_each(|c| need(*c));
    group.iter().for_each(|c| need(*c));
    aggs.calls.iter().filter_map(|c| c.1).for_each(&mut need);

    // Leaves.
    let mut layouts: Vec<Vec<usize>> = Vec::new();
    let mut leaves: Vec<PlanNode> = Vec::new();
    for (si, src) in sources.iter_mut().enumerate() {
        let (node, layout) = match src.derived.take() {
            Some(plan) => (PlanNode::Materialize { plan: Box::new(plan) }, (0..src.columns.len()).collect::<Vec<_>>()),
            None => {
                let layout: Vec<usize> = needed[si].iter().copied().collect();
                let pushed = match std::mem::take(&mut storage[si]) {
                    v if v.is_empty() => None,
                    mut v if v.len() == 1 => v.pop(),
                    v => Some(PushedPredicate::And(v)),
                };
                let columns = layout.iter().map(|&c| src.columns[c].name.clone()).collect();
                (PlanNode::Scan { table: src.table.clone().unwrap(), columns, pushed }, layout)
            }
        };
        let pos: HashMap<usize, usize> = layout.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let map = |o: &ROperand| -> Result<BoundOperand, QueryError> {
            Ok(match o {
                ROperand::Col(c) => BoundOperand::Column(pos[&c.1]),
                ROperand::Lit(v) => BoundOperand::Literal(v.clone()),
                ROperand::Agg(_) => unreachable!("aggregate in WHERE"),
            })
        };
        let preds = leaf[si].iter().map(|e| bind_expr(e, &map)).collect::<Result<Vec<_>, _>>()?;
        leaves.push(filter(node, preds));
        layouts.push(layout);
    }

    // Left-deep joins in FROM order.
    let mut leaves = leaves.into_iter();
    let mut node = leaves.next().unwrap();
    let mut pos: HashMap<ColId, usize> = layouts[0].iter().enumerate().map(|(i, &c)| ((0, c), i)).collect();
    let mut width = layouts[0].len();
    for (ji, right) in leaves.enumerate() {
        let si = ji + 1;
        let rpos: HashMap<usize, usize> = layouts[si].iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let keys = &join_keys[ji];
        let left_keys = keys.iter().map(|(l, _)| pos[l]).collect();
        let right_keys = keys.iter().map(|(_, r)| rpos[&r.1]).collect();
        let modes = keys
            .iter()
            .map(|(l, r)| KeyMode::for_kinds(sources[l.0].columns[l.1].kind, sources[r.0].columns[r.1].kind))
            .collect();
        let right_width = layouts[si].len();
        node = PlanNode::HashJoin {
            kind: sel.joins[ji].kind,
            left: Box::new(node),
            right: Box::new(right),
            left_keys,
            right_keys,
            modes,
            left_width: width,
            right_width,
        };
        for (i, &c) in layouts[si].iter().enumerate() {
            pos.insert((si, c), width + i);
        }
        width += right_width;
    }
    let map = |o: &ROperand| -> Result<BoundOperand, QueryError> {
        Ok(match o {
            ROperand::Col(c) => BoundOperand::Column(pos[c]),
            ROperand::Lit(v) => BoundOperand::Literal(v.clone()),
            ROperand::Agg(_) => unreachable!("aggregate in WHERE"),
        })
    };
    let preds = residual.iter().map(|e| bind_expr(e, &map)).collect::<Result<Vec<_>, _>>()?;
    node = filter(node, preds);

    // Aggregation and projection.
    let mut project: Vec<usize> = Vec::new();
    if aggregate {
        let specs = aggs
            .calls
            .iter()
            .map(|(func, arg)| AggSpec { func: *func, arg: arg.map(|c| pos[&c]), input: arg.map(|(s, c)| sources[s].columns[c].kind) })
            .collect();
        node = PlanNode::HashAggregate { input: Box::new(node), group: group.iter().map(|c| pos[c]).collect(), aggs: specs };
        let gpos = |c: &ColId| group.iter().position(|g| g == c).unwrap();
        if let Some(h) = having {
            let map = |o: &ROperand| -> Result<BoundOperand, QueryError> {
                Ok(match o {
                    ROperand::Col(c) => BoundOperand::Column(gpos(c)),
                    ROperand::Agg(a) => BoundOperand::Column(group.len() + a),
                    ROperand::Lit(v) => BoundOperand::Literal(v.clone()),
                })
            };
            node = filter(node, vec![bind_expr(&h, &map)?]);
        }
        for o in &mut outs {
            o.pos = match (o.col, o.agg) {
                (Some(c), _) => gpos(&c),
                (None, Some(a)) => group.len() + a,
                _ => unreachable!(),
            };
        }
        project.extend(outs.iter().map(|o| o.pos));
        project.extend(hidden.iter().map(|h| match h {
            Hidden::Col(c) => gpos(c),
            Hidden::Agg(a) => group.len() + a,
        }));
    } else {
        project.extend(outs.iter().map(|o| pos[&o.col.unwrap()]));
        project.extend(hidden.iter().map(|h| match h {
            Hidden::Col(c) => pos[c],
            Hidden::Agg(_) => unreachable!(),
        }));
    }
    let node = PlanNode::Project { input: Box::new(node), columns: project };
    let columns = outs.into_iter().map(|o| ResultColumn { name: o.name, kind: o.kind }).collect();
    Ok(SelectPlan { node, columns, sort, hidden: hidden.len() })
}

/// HAVING operands: a select-list alias, a grouped column, or an aggregate.
fn bind_having(e: &Expr, sel: &Select, sources: &[Source], aggs: &mut AggTable, ctx: &mut Ctx) -> Result<RExpr, QueryError> {
    let operand = |o: &Operand, aggs: &mut AggTable| -> Result<ROperand, QueryError> {
        if let Operand::Column(c) = o {
            if c.table.is_none() {
                if let Some(it) = sel.items.iter().find(|it| it.alias().is_some_and(|a| a.eq_ignore_ascii_case(&c.column))) {
                    return match it {
                        SelectItem::Column { column, .. } => Ok(ROperand::Col(resolve(sources, column)?)),
                        SelectItem::Aggregate { call, .. } => Ok(ROperand::Agg(aggs.intern(sources, call)?)),
                        SelectItem::Star => unreachable!(),
                    };
                }
            }
            let r = resolve(sources, c)?;
            let grouped = sel.group_by.iter().map(|g| resolve(sources, g)).collect::<Result<Vec<_>, _>>()?;
            if !grouped.contains(&r) {
                return Err(QueryError::Semantic(format!("HAVING column {c} must appear in GROUP BY or be aggregated")));
            }
            return Ok(ROperand::Col(r));
        }
        bind_operand(o, sources, Some(aggs))
    };
    Ok(match e {
        Expr::And(a, b) => RExpr::And(Box::new(bind_having(a, sel, sources, aggs, ctx)?), Box::new(bind_having(b, sel, sources, aggs, ctx)?)),
        Expr::Or(a, b) => RExpr::Or(Box::new(bind_having(a, sel, sources, aggs, ctx)?), Box::new(bind_having(b, sel, sources, aggs, ctx)?)),
        Expr::Compare { left, op, right } => RExpr::Compare { left: operand(left, aggs)?, op: *op, right: operand(right, aggs)? },
        Expr::Like { operand: o, pattern } => RExpr::Like { operand: operand(o, aggs)?, pattern: pattern.clone() },
        Expr::InSubquery { operand: o, query } => {
            let o = operand(o, aggs)?;
            RExpr::In { operand: o, set: plan_in_subquery(query, ctx)? }
        }
    })
}

fn unify_kinds(a: Kind, b: Kind, column: usize) -> Result<Kind, QueryError> {
    if a == b {
        Ok(a)
    } else if a.is_numeric() && b.is_numeric() {
        Ok(Kind::Float64)
    } else {
        Err(QueryError::Semantic(format!("UNION column {} mixes {} and {}", column + 1, a.as_str(), b.as_str())))
    }
}

/// Plans a parsed query against the warehouse catalog.
pub fn plan_with(q: &Query, wh: &Warehouse, opts: PlanOptions) -> Result<PhysicalPlan, QueryError> {
    let mut ctx = Ctx { wh, opts, subqueries: Vec::new() };
    let ordered = !q.order_by.is_empty();
    let (mut root, columns, sort) = if q.branches.len() == 1 {
        let sp = plan_select(&q.branches[0], &mut ctx, Some(&q.order_by))?;
        let width = sp.columns.len();
        let mut node = PlanNode::Sort { input: Box::new(sp.node), keys: sp.sort, width };
        if sp.hidden > 0 {
            node = PlanNode::Project { input: Box::new(node), columns: (0..width).collect() };
        }
        (node, sp.columns, None)
    } else {
        let mut inputs = Vec::new();
        let mut columns: Vec<ResultColumn> = Vec::new();
        let mut branch_kinds = Vec::new();
        for (bi, b) in q.branches.iter().enumerate() {
            let sp = plan_select(b, &mut ctx, None)?;
            if bi == 0 {
                columns = sp.columns.clone();
            } else if sp.columns.len() != columns.len() {
                return Err(QueryError::Semantic(format!(
                    "UNION branches have {} and {} columns",
                    columns.len(),
                    sp.columns.len()
                )));
            } else {
                for (i, c) in sp.columns.iter().enumerate() {
                    columns[i].kind = unify_kinds(columns[i].kind, c.kind, i)?;
                }
            }
            branch_kinds.push(sp.columns.iter().map(|c| c.kind).collect::<Vec<_>>());
            inputs.push(sp.node);
        }
        let promote = (0..columns.len()).filter(|&i| columns[i].kind == Kind::Float64 && branch_kinds.iter().any(|k| k[i] == Kind::Int64)).collect();
        let mut keys = Vec::new();
        for o in &q.order_by {
            let OrderKey::Column(c) = &o.key else {
                return Err(QueryError::Semantic("ORDER BY after UNION must name an output column".into()));
            };
            let i = columns
                .iter()
                .position(|col| c.table.is_none() && col.name.eq_ignore_ascii_case(&c.column))
                .ok_or_else(|| QueryError::Semantic(format!("ORDER BY after UNION must name an output column, got {c}")))?;
            keys.push(SortKey { column: i, descending: o.descending });
        }
        let width = columns.len();
        (PlanNode::UnionDistinct { inputs, promote }, columns, Some((keys, width)))
    };
    if let Some((keys, width)) = sort {
        root = PlanNode::Sort { input: Box::new(root), keys, width };
    }
    if let Some(count) = q.limit {
        root = PlanNode::Limit { input: Box::new(root), count };
    }
    Ok(PhysicalPlan { root, columns, ordered, subqueries: ctx.subqueries })
}
