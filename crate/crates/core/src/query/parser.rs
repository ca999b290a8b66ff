//! Tokenizer and recursive-descent parser.

use super::ast::*;
use super::QueryError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    /// Unquoted identifier or keyword, original spelling.
    Word(String),
    Quoted(String),
    Str(String),
    Number(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> QueryError {
    QueryError::Syntax { line, column: col, message: message.into() }
}

fn tokenize(text: &str) -> Result<Vec<Token>, QueryError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, c: char| {
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, c);
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                { let ch = chars[i]; advance(&mut i, &mut line, &mut col, ch); }
            }
            continue;
        }
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                { let ch = chars[i]; advance(&mut i, &mut line, &mut col, ch); }
            }
            Tok::Word(s)
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                s.push(chars[i]);
                { let ch = chars[i]; advance(&mut i, &mut line, &mut col, ch); }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let sign = chars.get(i + 1).is_some_and(|c| *c == '+' || *c == '-');
                let digit_at = if sign { i + 2 } else { i + 1 };
                if chars.get(digit_at).is_some_and(|d| d.is_ascii_digit()) {
                    for _ in i..digit_at {
                        s.push(chars[i]);
                        { let ch = chars[i]; advance(&mut i, &mut line, &mut col, ch); }
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        s.push(chars[i]);
                        { let ch = chars[i]; advance(&mut i, &mut line, &mut col, ch); }
                    }
                }
            }
            Tok::Number(s)
        } else if c == '\'' || c == '"' || c == '`' {
            let close = c;
            advance(&mut i, &mut line, &mut col, c);
            let mut s = String::new();
            loop {
                let Some(&d) = chars.get(i) else {
                    let what = if close == '\'' { "string literal" } else { "quoted identifier" };
                    return Err(syntax(tl, tc, format!("unterminated {what}")));
                };
                advance(&mut i, &mut line, &mut col, d);
                if d == close {
                    if chars.get(i) == Some(&close) {
                        s.push(close);
                        advance(&mut i, &mut line, &mut col, close);
                        continue;
                    }
                    break;
                }
                s.push(d);
            }
            if close == '\'' {
                Tok::Str(s)
            } else {
                Tok::Quoted(s)
            }
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let sym = match two.as_str() {
                ">=" => Some(">="),
                "<=" => Some("<="),
                "<>" => Some("<>"),
                "!=" => Some("!="),
                _ => None,
            };
            if let Some(s) = sym {
                advance(&mut i, &mut line, &mut col, c);
                { let ch = chars[i]; advance(&mut i, &mut line, &mut col, ch); }
                Tok::Sym(s)
            } else {
                let s = match c {
                    ',' => ",",
                    '.' => ".",
                    '(' => "(",
                    ')' => ")",
                    '*' => "*",
                    '=' => "=",
                    '>' => ">",
                    '<' => "<",
                    '+' => "+",
                    '-' => "-",
                    '/' => "/",
                    '%' => "%",
                    ';' => ";",
                    other => return Err(syntax(tl, tc, format!("unexpected character '{other}'"))),
                };
                advance(&mut i, &mut line, &mut col, c);
                Tok::Sym(s)
            }
        };
        out.push(Token { tok, line: tl, col: tc });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

fn unsupported(what: &str) -> QueryError {
    QueryError::Unsupported(what.to_string())
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> QueryError {
        let t = &self.toks[self.pos];
        syntax(t.line, t.col, message)
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Word(w) => format!("'{w}'"),
            Tok::Quoted(w) => format!("\"{w}\""),
            Tok::Str(s) => format!("'{s}'"),
            Tok::Number(n) => n.clone(),
            Tok::Sym(s) => format!("'{s}'"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn is_kw_at(&self, k: usize, kw: &str) -> bool {
        matches!(self.peek_at(k), Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(format!("expected {kw}, found {}", self.describe())))
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), QueryError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{s}', found {}", self.describe())))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, QueryError> {
        match self.peek().clone() {
            Tok::Quoted(s) => {
                self.next();
                Ok(s)
            }
            Tok::Word(w) if !is_reserved(&w) => {
                self.next();
                Ok(w)
            }
            _ => Err(self.error(format!("expected {what}, found {}", self.describe()))),
        }
    }

    /// An identifier that may follow an item as an implicit alias.
    fn at_alias(&self) -> bool {
        match self.peek() {
            Tok::Quoted(_) => true,
            Tok::Word(w) => !is_reserved(w),
            _ => false,
        }
    }

    fn opt_alias(&mut self) -> Result<Option<String>, QueryError> {
        if self.eat_kw("AS") {
            return self.ident("alias").map(Some);
        }
        if self.at_alias() {
            return self.ident("alias").map(Some);
        }
        Ok(None)
    }

    fn query(&mut self) -> Result<Query, QueryError> {
        for kw in ["WITH", "INSERT", "UPDATE", "DELETE", "CREATE", "DROP"] {
            if self.is_kw(kw) {
                return Err(unsupported(kw));
            }
        }
        if self.is_sym("(") && self.is_kw_at(1, "SELECT") {
            return Err(unsupported("parenthesized UNION branch"));
        }
        let mut branches = vec![self.select()?];
        loop {
            if self.eat_kw("UNION") {
                if self.is_kw("ALL") {
                    return Err(unsupported("UNION ALL"));
                }
                self.eat_kw("DISTINCT");
                branches.push(self.select()?);
                continue;
            }
            for kw in ["INTERSECT", "EXCEPT"] {
                if self.is_kw(kw) {
                    return Err(unsupported(kw));
                }
            }
            break;
        }
        let mut order_by = Vec::new();
        if self.eat_kw("ORDER") {
            self.expect_kw("BY")?;
            loop {
                if matches!(self.peek(), Tok::Number(_)) {
                    return Err(unsupported("ORDER BY position"));
                }
                let key = match self.operand()? {
                    Operand::Column(c) => OrderKey::Column(c),
                    Operand::Aggregate(a) => OrderKey::Aggregate(a),
                    Operand::Literal(_) => return Err(self.error("ORDER BY expects a column or aggregate")),
                };
                let descending = if self.eat_kw("DESC") {
                    true
                } else {
                    self.eat_kw("ASC");
                    false
                };
                order_by.push(OrderItem { key, descending });
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let mut limit = None;
        if self.eat_kw("LIMIT") {
            match self.next() {
                Tok::Number(n) => {
                    limit = Some(n.parse::<u64>().map_err(|_| self.error(format!("invalid LIMIT {n}")))?);
                }
                _ => return Err(self.error("expected a row count after LIMIT")),
            }
            if self.eat_sym(",") || self.is_kw("OFFSET") {
                return Err(unsupported("OFFSET"));
            }
        }
        Ok(Query { branches, order_by, limit })
    }

    fn select(&mut self) -> Result<Select, QueryError> {
        self.expect_kw("SELECT")?;
        if self.is_kw("DISTINCT") || self.is_kw("ALL") {
            return Err(unsupported("DISTINCT"));
        }
        let mut items = Vec::new();
        loop {
            if self.eat_sym("*") {
                items.push(SelectItem::Star);
            } else {
                match self.operand()? {
                    Operand::Column(column) => {
                        if self.is_sym(".") && self.is_sym_at(1, "*") {
                            return Err(unsupported("qualified *"));
                        }
                        let alias = self.opt_alias()?;
                        items.push(SelectItem::Column { column, alias });
                    }
                    Operand::Aggregate(call) => {
                        let alias = self.opt_alias()?;
                        items.push(SelectItem::Aggregate { call, alias });
                    }
                    Operand::Literal(_) => return Err(unsupported("literal in select list")),
                }
            }
            self.reject_arithmetic()?;
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_kw("FROM")?;
        let from = self.table_ref()?;
        let mut joins = Vec::new();
        loop {
            if self.is_sym(",") {
                return Err(unsupported("comma join"));
            }
            let kind = if self.is_kw("JOIN") || self.is_kw("INNER") {
                self.eat_kw("INNER");
                JoinKind::Inner
            } else if self.is_kw("LEFT") {
                self.next();
                self.eat_kw("OUTER");
                JoinKind::Left
            } else if self.is_kw("RIGHT") {
                self.next();
                self.eat_kw("OUTER");
                JoinKind::Right
            } else if self.is_kw("FULL") {
                return Err(unsupported(if self.is_kw_at(1, "OUTER") { "FULL OUTER JOIN" } else { "FULL JOIN" }));
            } else if self.is_kw("CROSS") {
                return Err(unsupported("CROSS JOIN"));
            } else if self.is_kw("NATURAL") {
                return Err(unsupported("NATURAL JOIN"));
            } else {
                break;
            };
            self.expect_kw("JOIN")?;
            let table = self.table_ref()?;
            if self.is_kw("USING") {
                return Err(unsupported("USING"));
            }
            self.expect_kw("ON")?;
            let on = self.join_condition()?;
            joins.push(Join { kind, table, on });
        }
        let filter = if self.eat_kw("WHERE") { Some(self.expr()?) } else { None };
        let mut group_by = Vec::new();
        if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            loop {
                group_by.push(self.column_ref()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let having = if self.eat_kw("HAVING") { Some(self.expr()?) } else { None };
        Ok(Select { items, from, joins, filter, group_by, having })
    }

    fn is_sym_at(&self, k: usize, s: &str) -> bool {
        matches!(self.peek_at(k), Tok::Sym(x) if *x == s)
    }

    fn reject_arithmetic(&self) -> Result<(), QueryError> {
        if ["+", "-", "*", "/", "%"].iter().any(|s| self.is_sym(s)) {
            return Err(unsupported("arithmetic"));
        }
        Ok(())
    }

    fn table_ref(&mut self) -> Result<TableRef, QueryError> {
        if self.eat_sym("(") {
            if !self.is_kw("SELECT") {
                return Err(self.error("expected SELECT after '('"));
            }
            let query = self.query()?;
            self.expect_sym(")")?;
            self.eat_kw("AS");
            let alias = self.ident("subquery alias").map_err(|_| self.error("a subquery in FROM needs an alias"))?;
            return Ok(TableRef::Subquery { query: Box::new(query), alias });
        }
        let name = self.ident("table name")?;
        if self.is_sym(".") {
            return Err(unsupported("schema-qualified table"));
        }
        let alias = self.opt_alias()?;
        Ok(TableRef::Table { name, alias })
    }

    fn join_condition(&mut self) -> Result<Vec<(ColumnRef, ColumnRef)>, QueryError> {
        let mut on = Vec::new();
        loop {
            let a = self.column_ref().map_err(|_| unsupported("non-equality join condition"))?;
            if !self.eat_sym("=") {
                return Err(unsupported("non-equality join condition"));
            }
            let b = self.column_ref().map_err(|_| unsupported("non-equality join condition"))?;
            on.push((a, b));
            if self.is_kw("OR") {
                return Err(unsupported("non-equality join condition"));
            }
            if !self.eat_kw("AND") {
                break;
            }
        }
        Ok(on)
    }

    fn column_ref(&mut self) -> Result<ColumnRef, QueryError> {
        let first = self.ident("column name")?;
        if self.is_sym(".") && !self.is_sym_at(1, "*") {
            self.next();
            let column = self.ident("column name")?;
            return Ok(ColumnRef { table: Some(first), column });
        }
        Ok(ColumnRef { table: None, column: first })
    }

    fn operand(&mut self) -> Result<Operand, QueryError> {
        match self.peek().clone() {
            Tok::Word(w) if self.is_sym_at(1, "(") => {
                let func = match w.to_ascii_uppercase().as_str() {
                    "MAX" => AggFunc::Max,
                    "SUM" => AggFunc::Sum,
                    "COUNT" => AggFunc::Count,
                    other => return Err(unsupported(&format!("function {other}"))),
                };
                self.next();
                self.next();
                if self.is_kw("DISTINCT") {
                    return Err(unsupported(&format!("{}(DISTINCT)", func.name())));
                }
                let arg = if self.eat_sym("*") {
                    if func != AggFunc::Count {
                        return Err(self.error(format!("{}(*) is not valid", func.name())));
                    }
                    None
                } else {
                    Some(self.column_ref()?)
                };
                self.reject_arithmetic()?;
                self.expect_sym(")")?;
                Ok(Operand::Aggregate(AggCall { func, arg }))
            }
            Tok::Word(w) if w.eq_ignore_ascii_case("NULL") => Err(unsupported("NULL literal")),
            Tok::Word(w) if w.eq_ignore_ascii_case("CASE") => Err(unsupported("CASE")),
            Tok::Word(w) if w.eq_ignore_ascii_case("NOT") => Err(unsupported("NOT")),
            Tok::Word(w) if w.eq_ignore_ascii_case("EXISTS") => Err(unsupported("EXISTS")),
            Tok::Word(_) | Tok::Quoted(_) => Ok(Operand::Column(self.column_ref()?)),
            Tok::Str(s) => {
                self.next();
                Ok(Operand::Literal(Literal::Str(s)))
            }
            Tok::Number(_) => self.number(false),
            Tok::Sym("-") if matches!(self.peek_at(1), Tok::Number(_)) => {
                self.next();
                self.number(true)
            }
            Tok::Sym("(") if self.is_kw_at(1, "SELECT") => Err(unsupported("scalar subquery")),
            _ => Err(self.error(format!("expected a column, aggregate or literal, found {}", self.describe()))),
        }
    }

    fn number(&mut self, negative: bool) -> Result<Operand, QueryError> {
        let Tok::Number(n) = self.next() else { unreachable!() };
        let text = if negative { format!("-{n}") } else { n.clone() };
        let lit = if n.contains(['.', 'e', 'E']) {
            match text.parse::<f64>() {
                Ok(f) if f.is_finite() => Literal::Float(f),
                _ => return Err(self.error(format!("invalid number {text}"))),
            }
        } else {
            Literal::Int(text.parse::<i64>().map_err(|_| self.error(format!("integer literal {text} out of range")))?)
        };
        Ok(Operand::Literal(lit))
    }

    fn expr(&mut self) -> Result<Expr, QueryError> {
        let mut left = self.and_expr()?;
        while self.eat_kw("OR") {
            let right = self.and_expr()?;
            left = Expr::or(left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, QueryError> {
        let mut left = self.predicate()?;
        while self.eat_kw("AND") {
            let right = self.predicate()?;
            left = Expr::and(left, right);
        }
        Ok(left)
    }

    fn predicate(&mut self) -> Result<Expr, QueryError> {
        if self.is_sym("(") && !self.is_kw_at(1, "SELECT") {
            self.next();
            let e = self.expr()?;
            self.expect_sym(")")?;
            return Ok(e);
        }
        let operand = self.operand()?;
        self.reject_arithmetic()?;
        if self.eat_sym("=") {
            let right = self.operand()?;
            self.reject_arithmetic()?;
            return Ok(Expr::Compare { left: operand, op: CmpOp::Eq, right });
        }
        if self.eat_sym(">=") {
            let right = self.operand()?;
            self.reject_arithmetic()?;
            return Ok(Expr::Compare { left: operand, op: CmpOp::Ge, right });
        }
        for op in ["<", ">", "<=", "<>", "!="] {
            if self.is_sym(op) {
                return Err(unsupported(&format!("operator {op}")));
            }
        }
        if self.eat_kw("LIKE") {
            return match self.next() {
                Tok::Str(pattern) => Ok(Expr::Like { operand, pattern }),
                _ => Err(self.error("LIKE expects a string pattern")),
            };
        }
        if self.eat_kw("IN") {
            self.expect_sym("(")?;
            if !self.is_kw("SELECT") {
                return Err(unsupported("IN list"));
            }
            let query = self.query()?;
            self.expect_sym(")")?;
            return Ok(Expr::InSubquery { operand, query: Box::new(query) });
        }
        for kw in ["NOT", "BETWEEN", "IS"] {
            if self.is_kw(kw) {
                return Err(unsupported(if kw == "IS" { "IS NULL" } else { kw }));
            }
        }
        Err(self.error(format!("expected a comparison, LIKE or IN, found {}", self.describe())))
    }
}

/// Parses one query. A trailing `;` is allowed.
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let mut p = Parser { toks: tokenize(text)?, pos: 0 };
    let q = p.query()?;
    p.eat_sym(";");
    if *p.peek() != Tok::Eof {
        return Err(p.error(format!("unexpected {}", p.describe())));
    }
    Ok(q)
}
