//! Request classification and execution across the hot document tier and
//! the analytical tier, plus syncing analytical results into the hot tier.


use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

use crate::olap::{holap_answer, AxisSpec, CubeCache, CubeQuery, MeasureSpec, OlapError, Provenance, QueryFilter};
use crate::query::ast::{Query, SelectItem};
use crate::query::{execute_plan, parse_query, plan_query, value_to_json, QueryError, ResultColumn, ResultSet};
use crate::schema::ConstellationSchema;
use crate::storage::{HotDocument, HotStore, StorageError, Warehouse};
use crate::value::{Kind, Value};

pub const DEFAULT_RECENCY_WINDOW_SECS: i64 = 86_400;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("tier '{0}' is not available")]
    TierUnavailable(&'static str),
    #[error("unknown sync job '{0}'")]
    UnknownSyncJob(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("invalid routing config: {0}")]
    Config(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Olap(#[from] OlapError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryClass {
    RealtimePoint,
    RealtimeRecent,
    Analytical,
}

impl QueryClass {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryClass::RealtimePoint => "realtime_point",
            QueryClass::RealtimeRecent => "realtime_recent",
            QueryClass::Analytical => "analytical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Hot,
    Analytical,
}

/// Class plus the id of the rule that assigned it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Classification {
    pub class: QueryClass,
    pub rule: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Sql(String),
    Cube(CubeQuery),
    HotGet { collection: String, doc_id: String },
    /// Documents with `ts` inside the recency window and matching every
    /// filter field.
    HotRecent { collection: String, filter: BTreeMap<String, Json> },
    HotUpsert { collection: String, doc_id: String, body: Json },
}

impl Request {
    /// Parses the line form used by the CLI:
    /// `GET <coll> <id>`, `RECENT <coll> [field=json ...]`,
    /// `UPSERT <coll> <id> <json>`, `CUBE <fact> <h@l,..> <measure;..>
    /// [h@l=m1|m2 ...]`, anything else is SQL.
    pub fn parse(line: &str) -> Result<Request, RouterError> {
        let line = line.trim();
        let (verb, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let bad = |m: &str| RouterError::BadRequest(format!("{m}: {line}"));
        match verb.to_ascii_uppercase().as_str() {
            "GET" => {
                let mut it = rest.split_whitespace();
                match (it.next(), it.next(), it.next()) {
                    (Some(c), Some(id), None) => Ok(Request::HotGet { collection: c.into(), doc_id: id.into() }),
                    _ => Err(bad("expected GET <collection> <doc_id>")),
                }
            }
            "RECENT" => {
                let mut it = rest.split_whitespace();
                let collection = it.next().ok_or_else(|| bad("expected RECENT <collection>"))?.to_string();
                let mut filter = BTreeMap::new();
                for f in it {
                    let (k, v) = f.split_once('=').ok_or_else(|| bad("filters are field=value"))?;
                    let v = serde_json::from_str(v).unwrap_or_else(|_| Json::String(v.into()));
                    filter.insert(k.to_string(), v);
                }
                Ok(Request::HotRecent { collection, filter })
            }
            "UPSERT" => {
                let mut parts = rest.splitn(3, char::is_whitespace);
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(c), Some(id), Some(body)) => {
                        let body = serde_json::from_str(body.trim()).map_err(|e| bad(&format!("document is not JSON ({e})")))?;
                        Ok(Request::HotUpsert { collection: c.into(), doc_id: id.into(), body })
                    }
                    _ => Err(bad("expected UPSERT <collection> <doc_id> <json>")),
                }
            }
            "CUBE" => {
                let mut it = rest.split_whitespace();
                let fact = it.next().ok_or_else(|| bad("missing fact"))?;
                let axes = it.next().ok_or_else(|| bad("missing axes"))?;
                let measures = it.next().ok_or_else(|| bad("missing measures"))?;
                let axes = axes
                    .split(',')
                    .filter(|s| !s.is_empty() && *s != "-")
                    .map(|a| AxisSpec::parse(a).ok_or_else(|| bad("axes are hierarchy@level")))
                    .collect::<Result<Vec<_>, _>>()?;
                let measures = measures.split(';').map(MeasureSpec::parse).collect::<Result<Vec<_>, _>>()?;
                let mut filters = Vec::new();
                for f in it {
                    let (lvl, members) = f.split_once('=').ok_or_else(|| bad("filters are hierarchy@level=m1|m2"))?;
                    let a = AxisSpec::parse(lvl).ok_or_else(|| bad("filters are hierarchy@level=m1|m2"))?;
                    let members = members.split('|').map(member_literal).collect();
                    filters.push(QueryFilter { hierarchy: a.hierarchy, level: a.level, members });
                }
                Ok(Request::Cube(CubeQuery { fact: fact.into(), axes, measures, filters, predicate: None }))
            }
            _ => Ok(Request::Sql(line.to_string())),
        }
    }
}

/// Integer-looking members become ints, everything else text.
fn member_literal(text: &str) -> Value {
    text.parse::<i64>().map_or_else(|_| Value::text(text), Value::Int)
}

/// Deterministic class assignment. Rules apply in order.
pub fn classify(request: &Request) -> Classification {
    match request {
        Request::HotGet { .. } | Request::HotUpsert { .. } => {
            Classification { class: QueryClass::RealtimePoint, rule: "point-lookup-by-id" }
        }
        Request::HotRecent { .. } => Classification { class: QueryClass::RealtimeRecent, rule: "recent-filter-scan" },
        Request::Sql(_) | Request::Cube(_) => Classification { class: QueryClass::Analytical, rule: "warehouse-query" },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyncSource {
    Sql { sql: String },
    /// Axes as `hierarchy@level`, measures as `SUM(col)` etc.
    Cube { fact: String, axes: Vec<String>, measures: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncJobConfig {
    pub name: String,
    pub source: SyncSource,
    pub target: String,
    #[serde(default = "default_refresh")]
    pub refresh_interval_secs: u64,
}

fn default_refresh() -> u64 {
    3600
}

fn default_window() -> i64 {
    DEFAULT_RECENCY_WINDOW_SECS
}

/// Contents of `routing.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingConfig {
    #[serde(default = "default_window")]
    pub recency_window_secs: i64,
    #[serde(default)]
    pub sync_jobs: Vec<SyncJobConfig>,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig { recency_window_secs: DEFAULT_RECENCY_WINDOW_SECS, sync_jobs: Vec::new() }
    }
}

impl RoutingConfig {
    pub fn from_json(text: &str) -> Result<RoutingConfig, RouterError> {
        let c: RoutingConfig = serde_json::from_str(text).map_err(|e| RouterError::Config(e.to_string()))?;
        if c.recency_window_secs <= 0 {
            return Err(RouterError::Config("recency_window_secs must be positive".into()));
        }
        let mut names = BTreeSet::new();
        for j in &c.sync_jobs {
            if !names.insert(&j.name) {
                return Err(RouterError::Config(format!("duplicate sync job '{}'", j.name)));
            }
        }
        Ok(c)
    }

    /// Reads `path`, or the defaults when it does not exist.
    pub fn load(path: &Path) -> Result<RoutingConfig, RouterError> {
        match std::fs::read_to_string(path) {
            Ok(text) => RoutingConfig::from_json(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(RoutingConfig::default()),
            Err(e) => Err(RouterError::Storage(e.into())),
        }
    }
}

/// Path taken by one request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub class: QueryClass,
    pub rule: &'static str,
    pub tier: Tier,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub tables_read: Vec<String>,
    pub collections_read: Vec<String>,
    pub collections_written: Vec<String>,
    pub elapsed_secs: f64,
}

impl Trace {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncOutcome {
    pub job: String,
    pub target: String,
    pub documents: usize,
    pub ran_at: i64,
}

/// The two tiers plus the cube cache. Either tier may be absent.
pub struct Tiers {
    pub schema: Arc<ConstellationSchema>,
    pub warehouse: Option<Arc<Warehouse>>,
    pub hot: Option<Arc<HotStore>>,
    pub cubes: CubeCache,
}

type Clock = Box<dyn Fn() -> i64 + Send + Sync>;

pub struct Router {
    config: RoutingConfig,
    tiers: Tiers,
    clock: Clock,
    last_run: parking_lot::Mutex<BTreeMap<String, i64>>,
}

fn system_now() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64)
}

impl Router {
    /// Reserves every sync target collection in the hot tier.
    pub fn new(config: RoutingConfig, tiers: Tiers) -> Router {
        if let Some(hot) = &tiers.hot {
            for j in &config.sync_jobs {
                hot.reserve(&j.target);
            }
        }
        Router { config, tiers, clock: Box::new(system_now), last_run: Default::default() }
    }

    /// Replaces the wall clock (seconds since the epoch).
    pub fn with_clock(mut self, clock: impl Fn() -> i64 + Send + Sync + 'static) -> Router {
        self.clock = Box::new(clock);
        self
    }

    pub fn config(&self) -> &RoutingConfig {
        &self.config
    }

    pub fn tiers(&self) -> &Tiers {
        &self.tiers
    }

    pub fn last_run(&self, job: &str) -> Option<i64> {
        self.last_run.lock().get(job).copied()
    }

    fn hot(&self) -> Result<&HotStore, RouterError> {
        self.tiers.hot.as_deref().ok_or(RouterError::TierUnavailable("hot"))
    }

    fn warehouse(&self) -> Result<&Warehouse, RouterError> {
        self.tiers.warehouse.as_deref().ok_or(RouterError::TierUnavailable("analytical"))
    }

    pub fn route(&self, request: &Request) -> Result<(ResultSet, Trace), RouterError> {
        let started = Instant::now();
        let c = classify(request);
        let mut trace = Trace {
            class: c.class,
            rule: c.rule,
            tier: if c.class == QueryClass::Analytical { Tier::Analytical } else { Tier::Hot },
            provenance: None,
            tables_read: Vec::new(),
            collections_read: Vec::new(),
            collections_written: Vec::new(),
            elapsed_secs: 0.0,
        };
        let result = match request {
            Request::HotGet { collection, doc_id } => {
                let hot = self.hot()?;
                trace.collections_read.push(collection.clone());
                docs_result(hot.get(collection, doc_id).into_iter().collect())
            }
            Request::HotRecent { collection, filter } => {
                let hot = self.hot()?;
                trace.collections_read.push(collection.clone());
                let since = (self.clock)() - self.config.recency_window_secs;
                docs_result(hot.recent(collection, since, filter))
            }
            Request::HotUpsert { collection, doc_id, body } => {
                let hot = self.hot()?;
                let version = hot.upsert(collection, doc_id, body.clone())?;
                trace.collections_written.push(collection.clone());
                ResultSet {
                    columns: vec![ResultColumn { name: "doc_id".into(), kind: Kind::Text }, ResultColumn { name: "version".into(), kind: Kind::Int64 }],
                    rows: vec![vec![Value::text(doc_id), Value::Int(version as i64)]],
                    ordered: false,
                    sum_overflow: false,
                }
            }
            Request::Sql(sql) => {
                let wh = self.warehouse()?;
                let q = parse_query(sql)?;
                trace.tables_read = q.tables().into_iter().collect();
                execute_plan(&plan_query(&q, wh)?, wh)?
            }
            Request::Cube(q) => {
                let wh = self.warehouse()?;
                let a = holap_answer(q, &self.tiers.cubes, &self.tiers.schema, wh)?;
                trace.provenance = Some(a.provenance);
                if a.provenance == Provenance::Rolap {
                    let sql = crate::olap::rolap_sql(q, &self.tiers.schema)?;
                    trace.tables_read = parse_query(&sql)?.tables().into_iter().collect();
                }
                a.result
            }
        };
        trace.elapsed_secs = started.elapsed().as_secs_f64();
        Ok((result, trace))
    }

    /// Full refresh of one job's target collection from its analytical
    /// source. The target is untouched if the source fails.
    pub fn run_sync(&self, job: &str) -> Result<SyncOutcome, RouterError> {
        let cfg = self.config.sync_jobs.iter().find(|j| j.name == job).ok_or_else(|| RouterError::UnknownSyncJob(job.into()))?;
        let wh = self.warehouse()?;
        let hot = self.hot()?;
        let (result, keys) = match &cfg.source {
            SyncSource::Sql { sql } => {
                let q = parse_query(sql)?;
                let r = execute_plan(&plan_query(&q, wh)?, wh)?;
                let keys = key_columns(&q, r.columns.len());
                (r, keys)
            }
            SyncSource::Cube { fact, axes, measures } => {
                let axes = axes
                    .iter()
                    .map(|a| AxisSpec::parse(a).ok_or_else(|| RouterError::Config(format!("bad axis '{a}' in job '{job}'"))))
                    .collect::<Result<Vec<_>, _>>()?;
                let measures = measures.iter().map(|m| MeasureSpec::parse(m)).collect::<Result<Vec<_>, _>>()?;
                let q = CubeQuery { fact: fact.clone(), axes, measures, filters: Vec::new(), predicate: None };
                let n = q.axes.len();
                (holap_answer(&q, &self.tiers.cubes, &self.tiers.schema, wh)?.result, (0..n).collect())
            }
        };
        let docs = sync_documents(&result, &keys);
        let n = hot.refresh(&cfg.target, docs)?;
        let now = (self.clock)();
        self.last_run.lock().insert(job.to_string(), now);
        Ok(SyncOutcome { job: job.into(), target: cfg.target.clone(), documents: n, ran_at: now })
    }

    /// Jobs whose refresh interval has elapsed since their last run.
    pub fn due_jobs(&self) -> Vec<String> {
        let now = (self.clock)();
        let last = self.last_run.lock();
        self.config
            .sync_jobs
            .iter()
            .filter(|j| last.get(&j.name).is_none_or(|t| now - t >= j.refresh_interval_secs as i64))
            .map(|j| j.name.clone())
            .collect()
    }
}

fn docs_result(docs: Vec<HotDocument>) -> ResultSet {
    ResultSet {
        columns: vec![
            ResultColumn { name: "doc_id".into(), kind: Kind::Text },
            ResultColumn { name: "version".into(), kind: Kind::Int64 },
            ResultColumn { name: "body".into(), kind: Kind::Text },
        ],
        rows: docs
            .into_iter()
            .map(|d| vec![Value::text(d.doc_id), Value::Int(d.version as i64), Value::text(d.body.to_string())])
            .collect(),
        ordered: false,
        sum_overflow: false,
    }
}

/// Positions of the plain (non-aggregate) output columns of the first
/// branch; every column when the select list has `*`.
fn key_columns(q: &Query, width: usize) -> Vec<usize> {
    let items = &q.branches[0].items;
    if items.iter().any(|i| matches!(i, SelectItem::Star)) {
        return (0..width).collect();
    }
    items.iter().enumerate().filter(|(_, i)| matches!(i, SelectItem::Column { .. })).map(|(p, _)| p).collect()
}

/// One document per row, id from the key columns joined by `|`. Repeated
/// ids get a `#n` suffix in row order.
pub fn sync_documents(result: &ResultSet, keys: &[usize]) -> Vec<(String, Json)> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    result
        .rows
        .iter()
        .map(|row| {
            let base = if keys.is_empty() { "all".to_string() } else { keys.iter().map(|&k| row[k].render()).collect::<Vec<_>>().join("|") };
            let n = seen.entry(base.clone()).or_insert(0);
            *n += 1;
            let id = if *n == 1 { base } else { format!("{base}#{n}") };
            let body: Map<String, Json> = result.columns.iter().zip(row).map(|(c, v)| (c.name.clone(), value_to_json(v))).collect();
            (id, Json::Object(body))
        })
        .collect()
}
