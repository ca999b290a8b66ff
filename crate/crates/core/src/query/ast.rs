//! Syntax tree of the supported SQL dialect.

use std::fmt;

use crate::value::{format_float, Value};

/// A full query: one or more SELECT blocks combined with `UNION` (distinct),
/// then an optional ordering and row limit over the combined result.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub branches: Vec<Select>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub items: Vec<SelectItem>,
    pub from: TableRef,
    pub joins: Vec<Join>,
    pub filter: Option<Expr>,
    pub group_by: Vec<ColumnRef>,
    pub having: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Star,
    Column { column: ColumnRef, alias: Option<String> },
    Aggregate { call: AggCall, alias: Option<String> },
}

impl SelectItem {
    pub fn alias(&self) -> Option<&str> {
        match self {
            SelectItem::Star => None,
            SelectItem::Column { alias, .. } | SelectItem::Aggregate { alias, .. } => alias.as_deref(),
        }
    }

    /// Output column name: the alias, else the column name or call text.
    pub fn output_name(&self) -> String {
        match self {
            SelectItem::Star => "*".into(),
            SelectItem::Column { column, alias } => alias.clone().unwrap_or_else(|| column.column.clone()),
            SelectItem::Aggregate { call, alias } => alias.clone().unwrap_or_else(|| call.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnRef {
    pub table: Option<String>,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: Option<&str>, column: &str) -> ColumnRef {
        ColumnRef { table: table.map(str::to_string), column: column.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AggFunc {
    Max,
    Sum,
    Count,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Max => "MAX",
            AggFunc::Sum => "SUM",
            AggFunc::Count => "COUNT",
        }
    }
}

/// `arg: None` is `COUNT(*)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AggCall {
    pub func: AggFunc,
    pub arg: Option<ColumnRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableRef {
    Table { name: String, alias: Option<String> },
    Subquery { query: Box<Query>, alias: String },
}

impl TableRef {
    /// Name the source is referenced by in column qualifiers.
    pub fn binding_name(&self) -> &str {
        match self {
            TableRef::Table { name, alias } => alias.as_deref().unwrap_or(name),
            TableRef::Subquery { alias, .. } => alias,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JoinKind {
    Inner,
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Join {
    pub kind: JoinKind,
    pub table: TableRef,
    /// Conjunction of column equalities.
    pub on: Vec<(ColumnRef, ColumnRef)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
}

impl Literal {
    pub fn to_value(&self) -> Value {
        match self {
            Literal::Int(i) => Value::Int(*i),
            Literal::Float(f) => Value::Float(*f),
            Literal::Str(s) => Value::text(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Column(ColumnRef),
    Aggregate(AggCall),
    Literal(Literal),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Compare { left: Operand, op: CmpOp, right: Operand },
    Like { operand: Operand, pattern: String },
    InSubquery { operand: Operand, query: Box<Query> },
}

impl Expr {
    /// Splits a tree of ANDs into its conjuncts, left to right.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        match self {
            Expr::And(a, b) => {
                let mut v = a.conjuncts();
                v.extend(b.conjuncts());
                v
            }
            other => vec![other],
        }
    }

    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Expr, b: Expr) -> Expr {
        Expr::Or(Box::new(a), Box::new(b))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Or(..) => 1,
            Expr::And(..) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OrderKey {
    Column(ColumnRef),
    Aggregate(AggCall),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderItem {
    pub key: OrderKey,
    pub descending: bool,
}

impl Query {
    /// Maximum nesting depth of subqueries (FROM or IN) below this query.
    pub fn subquery_depth(&self) -> usize {
        self.branches.iter().map(Select::subquery_depth).max().unwrap_or(0)
    }

    pub fn single(select: Select) -> Query {
        Query { branches: vec![select], order_by: Vec::new(), limit: None }
    }

    /// Base tables read anywhere in the query, subqueries included.
    pub fn tables(&self) -> std::collections::BTreeSet<String> {
        let mut out = std::collections::BTreeSet::new();
        self.collect_tables(&mut out);
        out
    }

    fn collect_tables(&self, out: &mut std::collections::BTreeSet<String>) {
        fn expr(e: &Expr, out: &mut std::collections::BTreeSet<String>) {
            match e {
                Expr::And(a, b) | Expr::Or(a, b) => {
                    expr(a, out);
                    expr(b, out);
                }
                Expr::InSubquery { query, .. } => query.collect_tables(out),
                _ => {}
            }
        }
        for s in &self.branches {
            for t in std::iter::once(&s.from).chain(s.joins.iter().map(|j| &j.table)) {
                match t {
                    TableRef::Table { name, .. } => {
                        out.insert(name.clone());
                    }
                    TableRef::Subquery { query, .. } => query.collect_tables(out),
                }
            }
            for e in s.filter.iter().chain(&s.having) {
                expr(e, out);
            }
        }
    }
}

impl Select {
    fn subquery_depth(&self) -> usize {
        let mut depth = 0;
        let mut table = |t: &TableRef| {
            if let TableRef::Subquery { query, .. } = t {
                depth = depth.max(1 + query.subquery_depth());
            }
        };
        table(&self.from);
        self.joins.iter().for_each(|j| table(&j.table));
        for e in self.filter.iter().chain(&self.having) {
            depth = depth.max(expr_depth(e));
        }
        depth
    }
}

fn expr_depth(e: &Expr) -> usize {
    match e {
        Expr::And(a, b) | Expr::Or(a, b) => expr_depth(a).max(expr_depth(b)),
        Expr::InSubquery { query, .. } => 1 + query.subquery_depth(),
        _ => 0,
    }
}

// ---------------------------------------------------------------------------
// Rendering. The output parses back to an identical tree.

pub(crate) const RESERVED: &[&str] = &[
    "ALL", "AND", "AS", "ASC", "BETWEEN", "BY", "CASE", "COUNT", "CREATE", "CROSS", "DELETE", "DESC", "DISTINCT", "DROP",
    "ELSE", "END", "EXCEPT", "EXISTS", "FROM", "FULL", "GROUP", "HAVING", "IN", "INNER", "INSERT", "INTERSECT", "IS",
    "JOIN", "LEFT", "LIKE", "LIMIT", "MAX", "NATURAL", "NOT", "NULL", "OFFSET", "ON", "OR", "ORDER", "OUTER", "RIGHT",
    "SELECT", "SUM", "THEN", "UNION", "UPDATE", "USING", "WHEN", "WHERE", "WITH",
];

pub(crate) fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(word))
}

pub struct Ident<'a>(pub &'a str);

impl fmt::Display for Ident<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0;
        let plain = s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
            && !is_reserved(s);
        if plain {
            f.write_str(s)
        } else {
            write!(f, "\"{}\"", s.replace('"', "\"\""))
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(t) = &self.table {
            write!(f, "{}.", Ident(t))?;
        }
        write!(f, "{}", Ident(&self.column))
    }
}

impl fmt::Display for AggCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arg {
            None => write!(f, "{}(*)", self.func.name()),
            Some(c) => write!(f, "{}({c})", self.func.name()),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(x) => f.write_str(&format_float(*x)),
            Literal::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Column(c) => c.fmt(f),
            Operand::Aggregate(a) => a.fmt(f),
            Operand::Literal(l) => l.fmt(f),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let child = |f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool| {
            if parens {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match self {
            Expr::And(a, b) | Expr::Or(a, b) => {
                let p = self.precedence();
                child(f, a, a.precedence() < p)?;
                f.write_str(if p == 2 { " AND " } else { " OR " })?;
                child(f, b, b.precedence() <= p)
            }
            Expr::Compare { left, op, right } => {
                write!(f, "{left} {} {right}", if *op == CmpOp::Eq { "=" } else { ">=" })
            }
            Expr::Like { operand, pattern } => write!(f, "{operand} LIKE {}", Literal::Str(pattern.clone())),
            Expr::InSubquery { operand, query } => write!(f, "{operand} IN ({query})"),
        }
    }
}

impl fmt::Display for TableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableRef::Table { name, alias } => {
                write!(f, "{}", Ident(name))?;
                if let Some(a) = alias {
                    write!(f, " AS {}", Ident(a))?;
                }
                Ok(())
            }
            TableRef::Subquery { query, alias } => write!(f, "({query}) AS {}", Ident(alias)),
        }
    }
}

impl fmt::Display for SelectItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectItem::Star => f.write_str("*"),
            SelectItem::Column { column, alias } => {
                write!(f, "{column}")?;
                alias.as_ref().map_or(Ok(()), |a| write!(f, " AS {}", Ident(a)))
            }
            SelectItem::Aggregate { call, alias } => {
                write!(f, "{call}")?;
                alias.as_ref().map_or(Ok(()), |a| write!(f, " AS {}", Ident(a)))
            }
        }
    }
}

fn comma_list<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    for (i, x) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{x}")?;
    }
    Ok(())
}

impl fmt::Display for Select {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        comma_list(f, &self.items)?;
        write!(f, " FROM {}", self.from)?;
        for j in &self.joins {
            let kw = match j.kind {
                JoinKind::Inner => "INNER JOIN",
                JoinKind::Left => "LEFT JOIN",
                JoinKind::Right => "RIGHT JOIN",
            };
            write!(f, " {kw} {} ON ", j.table)?;
            for (i, (a, b)) in j.on.iter().enumerate() {
                if i > 0 {
                    f.write_str(" AND ")?;
                }
                write!(f, "{a} = {b}")?;
            }
        }
        if let Some(w) = &self.filter {
            write!(f, " WHERE {w}")?;
        }
        if !self.group_by.is_empty() {
            f.write_str(" GROUP BY ")?;
            comma_list(f, &self.group_by)?;
        }
        if let Some(h) = &self.having {
            write!(f, " HAVING {h}")?;
        }
        Ok(())
    }
}

impl fmt::Display for OrderItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.key {
            OrderKey::Column(c) => write!(f, "{c}")?,
            OrderKey::Aggregate(a) => write!(f, "{a}")?,
        }
        f.write_str(if self.descending { " DESC" } else { " ASC" })
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.branches.iter().enumerate() {
            if i > 0 {
                f.write_str(" UNION ")?;
            }
            write!(f, "{b}")?;
        }
        if !self.order_by.is_empty() {
            f.write_str(" ORDER BY ")?;
            comma_list(f, &self.order_by)?;
        }
        if let Some(n) = self.limit {
            write!(f, " LIMIT {n}")?;
        }
        Ok(())
    }
}
