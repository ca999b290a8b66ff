//! Benchmark harness: workload generation, timed runs of the two
//! executors, speedup arithmetic and report files.

mod suite;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::ast::Query;
use crate::query::{execute_naive_oracle, execute_plan, parse_query, plan_query, QueryError, ResultSet};
use crate::storage::{StorageError, Warehouse};

pub use suite::{
    command_set, generate_query_suite, group_commands, validate_suite, BenchQuery, Command, QueryGroupSpec, GROUPS,
    QUERIES_PER_GROUP,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot generate workload: {0}")]
    EmptyWarehouse(String),
    #[error("query {query_id}: engines disagree")]
    ResultMismatch { query_id: u32 },
    #[error("query {query_id}: {source}")]
    QueryFailed { query_id: u32, source: QueryError },
    #[error("incomplete timing records: {0}")]
    IncompleteRecords(String),
    #[error("bad report: {0}")]
    BadReport(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Something that answers a parsed query.
pub trait Executor {
    fn execute(&self, q: &Query, wh: &Warehouse) -> Result<ResultSet, QueryError>;
}

/// Planner plus vectorized executor.
pub struct AnalyticExecutor;

impl Executor for AnalyticExecutor {
    fn execute(&self, q: &Query, wh: &Warehouse) -> Result<ResultSet, QueryError> {
        execute_plan(&plan_query(q, wh)?, wh)
    }
}

/// Reference interpreter, the timing baseline.
pub struct NaiveExecutor;

impl Executor for NaiveExecutor {
    fn execute(&self, q: &Query, wh: &Warehouse) -> Result<ResultSet, QueryError> {
        execute_naive_oracle(q, wh)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineRole {
    Baseline,
    Ours,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub query_id: u32,
    pub group: u8,
    pub engine: EngineRole,
    /// Wall-clock seconds of each timed run.
    pub runs: Vec<f64>,
    pub avg: f64,
}

impl TimingRecord {
    pub fn new(query_id: u32, group: u8, engine: EngineRole, runs: Vec<f64>) -> TimingRecord {
        let avg = runs.iter().sum::<f64>() / runs.len() as f64;
        TimingRecord { query_id, group, engine, runs, avg }
    }
}

fn timed(exec: &dyn Executor, q: &Query, wh: &Warehouse, id: u32) -> Result<(ResultSet, f64), BenchError> {
    let t = Instant::now();
    let r = exec.execute(q, wh).map_err(|source| BenchError::QueryFailed { query_id: id, source })?;
    // Clamp so a timer tick of zero cannot produce an infinite ratio.
    Ok((r, t.elapsed().as_secs_f64().max(1e-9)))
}

/// Runs every query once untimed on each engine, checks the results agree,
/// then times `reps` runs per engine. Runs are strictly sequential.
pub fn run_benchmark(
    suite: &[QueryGroupSpec],
    baseline: &dyn Executor,
    ours: &dyn Executor,
    reps: usize,
    wh: &Warehouse,
    mut progress: impl FnMut(&TimingRecord, &TimingRecord),
) -> Result<Vec<TimingRecord>, BenchError> {
    let reps = reps.max(1);
    let mut out = Vec::new();
    for q in suite.iter().flat_map(|g| &g.queries) {
        let ast = parse_query(&q.sql).map_err(|source| BenchError::QueryFailed { query_id: q.id, source })?;
        let (expected, _) = timed(baseline, &ast, wh, q.id)?;
        let (actual, _) = timed(ours, &ast, wh, q.id)?;
        if !expected.equivalent(&actual) {
            return Err(BenchError::ResultMismatch { query_id: q.id });
        }
        let runs = |exec: &dyn Executor| -> Result<Vec<f64>, BenchError> {
            (0..reps).map(|_| timed(exec, &ast, wh, q.id).map(|(_, t)| t)).collect()
        };
        let b = TimingRecord::new(q.id, q.group, EngineRole::Baseline, runs(baseline)?);
        let o = TimingRecord::new(q.id, q.group, EngineRole::Ours, runs(ours)?);
        log::debug!("query {}: baseline {:.4}s, ours {:.4}s", q.id, b.avg, o.avg);
        progress(&b, &o);
        out.push(b);
        out.push(o);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpeedup {
    pub query_id: u32,
    pub group: u8,
    pub baseline_avg: f64,
    pub ours_avg: f64,
    pub times: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpeedup {
    pub group: u8,
    pub queries: usize,
    /// Mean of the member queries' average runtimes.
    pub baseline_avg: f64,
    pub ours_avg: f64,
    /// Ratio of the two means.
    pub times: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub queries: usize,
    pub baseline_avg: f64,
    pub ours_avg: f64,
    pub times: f64,
    /// Groups where the optimized engine's mean runtime is lower.
    pub groups_faster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub per_query: Vec<QuerySpeedup>,
    pub per_group: Vec<GroupSpeedup>,
    pub summary: Summary,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Per-query, per-group and overall ratios. Every query needs exactly one
/// record per engine with a positive average.
pub fn compute_speedups(records: &[TimingRecord]) -> Result<SpeedupReport, BenchError> {
    let mut by_query: BTreeMap<u32, (u8, Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in records {
        if !(r.avg.is_finite() && r.avg > 0.0) {
            return Err(BenchError::IncompleteRecords(format!("query {} has non-positive runtime", r.query_id)));
        }
        let e = by_query.entry(r.query_id).or_insert((r.group, None, None));
        if e.0 != r.group {
            return Err(BenchError::IncompleteRecords(format!("query {} listed in two groups", r.query_id)));
        }
        let slot = match r.engine {
            EngineRole::Baseline => &mut e.1,
            EngineRole::Ours => &mut e.2,
        };
        if slot.replace(r.avg).is_some() {
            return Err(BenchError::IncompleteRecords(format!("query {} has duplicate {:?} records", r.query_id, r.engine)));
        }
    }
    if by_query.is_empty() {
        return Err(BenchError::IncompleteRecords("no records".into()));
    }
    let mut per_query = Vec::new();
    for (id, (group, b, o)) in by_query {
        let (Some(b), Some(o)) = (b, o) else {
            return Err(BenchError::IncompleteRecords(format!("query {id} lacks a record for one engine")));
        };
        per_query.push(QuerySpeedup { query_id: id, group, baseline_avg: b, ours_avg: o, times: b / o });
    }
    let mut groups: BTreeMap<u8, Vec<&QuerySpeedup>> = BTreeMap::new();
    for q in &per_query {
        groups.entry(q.group).or_default().push(q);
    }
    let per_group: Vec<GroupSpeedup> = groups
        .into_iter()
        .map(|(group, qs)| {
            let b = mean(qs.iter().map(|q| q.baseline_avg));
            let o = mean(qs.iter().map(|q| q.ours_avg));
            GroupSpeedup { group, queries: qs.len(), baseline_avg: b, ours_avg: o, times: b / o }
        })
        .collect();
    let b = mean(per_query.iter().map(|q| q.baseline_avg));
    let o = mean(per_query.iter().map(|q| q.ours_avg));
    let summary = Summary {
        queries: per_query.len(),
        baseline_avg: b,
        ours_avg: o,
        times: b / o,
        groups_faster: per_group.iter().filter(|g| g.ours_avg < g.baseline_avg).count(),
    };
    Ok(SpeedupReport { per_query, per_group, summary })
}

impl SpeedupReport {
    /// Errors unless there are `groups` groups of exactly `per_group` queries.
    pub fn check_shape(&self, groups: usize, per_group: usize) -> Result<(), BenchError> {
        if self.per_group.len() != groups {
            return Err(BenchError::IncompleteRecords(format!("{} groups, expected {groups}", self.per_group.len())));
        }
        match self.per_group.iter().find(|g| g.queries != per_group) {
            Some(g) => Err(BenchError::IncompleteRecords(format!("group {} has {} queries", g.group, g.queries))),
            None => Ok(()),
        }
    }
}

/// Writes `per_query.csv`, `per_group.csv`, `summary.json` (and the raw
/// runs in `timings.json` when given) into `dir`.
pub fn emit_report(report: &SpeedupReport, records: Option<&[TimingRecord]>, dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("per_query.csv"))?;
    for q in &report.per_query {
        w.serialize(q)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("per_group.csv"))?;
    for g in &report.per_group {
        w.serialize(g)?;
    }
    w.flush()?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report.summary)? + "\n")?;
    if let Some(r) = records {
        fs::write(dir.join("timings.json"), serde_json::to_string_pretty(r)? + "\n")?;
    }
    Ok(())
}

/// Reads back a report written by [`emit_report`].
pub fn read_report(dir: &Path) -> Result<SpeedupReport, BenchError> {
    let per_query = csv::Reader::from_path(dir.join("per_query.csv"))?.deserialize().collect::<Result<Vec<QuerySpeedup>, _>>()?;
    let per_group = csv::Reader::from_path(dir.join("per_group.csv"))?.deserialize().collect::<Result<Vec<GroupSpeedup>, _>>()?;
    let summary: Summary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
    if summary.queries != per_query.len() {
        return Err(BenchError::BadReport(format!("summary lists {} queries, per_query.csv has {}", summary.queries, per_query.len())));
    }
    Ok(SpeedupReport { per_query, per_group, summary })
}
