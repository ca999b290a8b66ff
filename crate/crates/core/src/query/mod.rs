//! SQL dialect, planner, analytic executor and reference interpreter.

pub mod agg;
pub mod ast;
mod exec;
mod naive;
mod parser;
mod plan;
mod result;
#[cfg(test)]
mod tests;

use thiserror::Error;

use crate::storage::{StorageError, Warehouse};

pub use exec::execute_plan;
pub use naive::execute_naive_oracle;
pub use parser::parse_query;
pub use plan::{
    plan_with, AggSpec, BoundExpr, BoundOperand, KeyMode, PhysicalPlan, PlanNode, PlanOptions, PushedPredicate, SortKey,
};
pub use result::{value_to_json, ResultColumn, ResultSet};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unsupported SQL construct: {0}")]
    Unsupported(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {column} ({context})")]
    UnknownColumn { column: String, context: String },
    #[error("ambiguous column {column} ({context})")]
    AmbiguousColumn { column: String, context: String },
    #[error("{0}")]
    Semantic(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Which executor answers a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Analytic,
    Naive,
}

/// Plans with pushdown enabled.
pub fn plan_query(q: &ast::Query, wh: &Warehouse) -> Result<PhysicalPlan, QueryError> {
    plan_with(q, wh, PlanOptions::default())
}

/// Parses and runs `sql` on the chosen engine.
pub fn run_sql(sql: &str, wh: &Warehouse, engine: Engine) -> Result<ResultSet, QueryError> {
    let q = parse_query(sql)?;
    match engine {
        Engine::Analytic => execute_plan(&plan_query(&q, wh)?, wh),
        Engine::Naive => execute_naive_oracle(&q, wh),
    }
}
