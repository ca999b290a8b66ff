//! `agridwh` command line: data generation, ETL, queries, cubes, routing,
//! sync, benchmarking and snapshots over one warehouse root.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use agridwh::bench::{
    compute_speedups, emit_report, generate_query_suite, run_benchmark, validate_suite, AnalyticExecutor, BenchError,
    NaiveExecutor,
};
use agridwh::etl::{etl_run, generate_synthetic_sources, write_quarantine, EtlError, EtlOptions, SourceGenSpec};
use agridwh::olap::{self, AxisSpec, Cube, CubeCache, MeasureSpec, OlapError};
use agridwh::query::{execute_naive_oracle, execute_plan, parse_query, plan_query, QueryError, ResultSet};
use agridwh::router::{Request, Router, RouterError, RoutingConfig, Tiers};
use agridwh::schema::{build_default_schema, validate_schema};
use agridwh::storage::{HotStore, RawStore, StorageError, Warehouse};

#[derive(Parser)]
#[command(name = "agridwh", version, about = "Agricultural data warehouse toolkit")]
struct Cli {
    /// Warehouse root directory.
    #[arg(long, env = "AGRIDWH_ROOT", default_value = "agridwh-data", global = true)]
    root: PathBuf,
    /// Routing config (defaults to <root>/routing.json).
    #[arg(long, global = true)]
    routing: Option<PathBuf>,
    /// Log verbosity: error, warn, info, debug.
    #[arg(long, default_value = "warn", global = true)]
    log_level: String,
    /// Seed for data and workload generation.
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,
    /// Output format for result sets.
    #[arg(long, value_enum, default_value = "csv", global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic source datasets.
    GenData(GenData),
    /// Stage source datasets and load them into the warehouse.
    Etl(Etl),
    /// Run a SQL query.
    Query(QueryCmd),
    /// Build a cube and apply an operation to it.
    Cube(CubeCmd),
    /// Route requests to the hot or analytical tier.
    Route(RouteCmd),
    /// Refresh hot collections from analytical sources.
    Sync(SyncCmd),
    /// Time both engines over the generated workload.
    Bench(BenchCmd),
    /// Capture the warehouse state.
    Snapshot,
    /// Restore the warehouse to a snapshot.
    Recover(RecoverCmd),
    /// Print or check the warehouse schema.
    Schema(SchemaCmd),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 29)]
    datasets: usize,
    /// Rows per fact table per dataset.
    #[arg(long, default_value_t = 1000)]
    rows: usize,
    #[arg(long, default_value_t = 0.3)]
    overlap: f64,
    /// Fraction of fact rows given one unresolvable foreign key.
    #[arg(long, default_value_t = 0.0)]
    bad_fk: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Etl {
    /// Directory holding dataset directories.
    #[arg(long)]
    source: PathBuf,
    #[arg(long, default_value_t = EtlOptions::default().partition_size)]
    partition_size: usize,
    /// Where quarantined rows are written (defaults to <root>/quarantine).
    #[arg(long)]
    quarantine_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Analytic,
    Naive,
    Auto,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Args)]
struct QueryCmd {
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    sql: Option<String>,
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "analytic")]
    engine: EngineArg,
    /// Print the physical plan instead of running the query.
    #[arg(long)]
    explain: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CubeOp {
    Build,
    Rollup,
    Drilldown,
    Slice,
    Pivot,
}

#[derive(Args)]
struct CubeCmd {
    #[arg(value_enum)]
    op: CubeOp,
    #[arg(long)]
    fact: String,
    /// Comma-separated `hierarchy@level` axes.
    #[arg(long)]
    axes: String,
    /// Semicolon-separated measures, e.g. `SUM(appliedQuantity);COUNT(*)`.
    #[arg(long, default_value = "COUNT(*)")]
    measures: String,
    /// Axis (hierarchy name) for rollup, drilldown and slice.
    #[arg(long)]
    axis: Option<String>,
    /// Members kept by slice, separated by `|`.
    #[arg(long)]
    members: Option<String>,
    /// Axis order for pivot, e.g. `crop,time`.
    #[arg(long)]
    order: Option<String>,
    /// Measure shown by pivot (index into --measures).
    #[arg(long, default_value_t = 0)]
    measure: usize,
}

#[derive(Args)]
struct RouteCmd {
    /// One request: SQL, `GET c id`, `RECENT c [k=v]`, `UPSERT c id {json}`
    /// or `CUBE fact axes measures [filters]`.
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    request: Option<String>,
    /// File with one request per line.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Append traces (JSON lines) here instead of standard error.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct SyncCmd {
    /// Job name; all jobs when omitted.
    #[arg(long)]
    job: Option<String>,
}

#[derive(Args)]
struct BenchCmd {
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverCmd {
    /// Snapshot id; the latest when omitted.
    #[arg(long)]
    id: Option<String>,
}

#[derive(Args)]
struct SchemaCmd {
    /// Validate the structure instead of printing it.
    #[arg(long)]
    check: bool,
}

/// User errors exit 1, internal errors exit 2.
enum Failure {
    User(String),
    Internal(String),
}

impl Failure {
    fn user(msg: impl ToString) -> Failure {
        Failure::User(msg.to_string())
    }
}

impl From<StorageError> for Failure {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::Io(_) | StorageError::Json(_) => Failure::Internal(e.to_string()),
            other => Failure::User(other.to_string()),
        }
    }
}

impl From<QueryError> for Failure {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::Storage(s) => s.into(),
            other => Failure::User(other.to_string()),
        }
    }
}

impl From<OlapError> for Failure {
    fn from(e: OlapError) -> Self {
        match e {
            OlapError::Storage(s) => s.into(),
            OlapError::Query(q) => q.into(),
            other => Failure::User(other.to_string()),
        }
    }
}

impl From<RouterError> for Failure {
    fn from(e: RouterError) -> Self {
        match e {
            RouterError::Storage(s) => s.into(),
            RouterError::Query(q) => q.into(),
            RouterError::Olap(o) => o.into(),
            other => Failure::User(other.to_string()),
        }
    }
}

impl From<EtlError> for Failure {
    fn from(e: EtlError) -> Self {
        match e {
            EtlError::Storage(s) => s.into(),
            other => Failure::User(other.to_string()),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Query(q) => q.into(),
            BenchError::Storage(s) => s.into(),
            BenchError::EmptyWarehouse(_) => Failure::User(e.to_string()),
            other => Failure::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

fn render(r: &ResultSet, format: Format) -> String {
    match format {
        Format::Csv => r.to_csv(),
        Format::Json => format!("{}\n", r.to_json()),
        Format::Table => r.to_table(),
    }
}

fn print(text: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn open_warehouse(root: &Path) -> Result<Warehouse, Failure> {
    Ok(Warehouse::open(root)?)
}

fn routing_path(cli: &Cli) -> PathBuf {
    cli.routing.clone().unwrap_or_else(|| cli.root.join("routing.json"))
}

fn router(cli: &Cli) -> Result<Router, Failure> {
    let config = RoutingConfig::load(&routing_path(cli))?;
    let tiers = Tiers {
        schema: Arc::new(build_default_schema()),
        warehouse: Some(Arc::new(open_warehouse(&cli.root)?)),
        hot: Some(Arc::new(HotStore::open(&cli.root)?)),
        cubes: CubeCache::new(),
    };
    Ok(Router::new(config, tiers))
}

fn read_text(inline: &Option<String>, file: &Option<PathBuf>) -> Result<String, Failure> {
    match (inline, file) {
        (Some(s), _) => Ok(s.clone()),
        (None, Some(f)) => fs::read_to_string(f).map_err(|e| Failure::user(format!("cannot read {}: {e}", f.display()))),
        (None, None) => Err(Failure::user("no input given")),
    }
}

fn gen_data(cli: &Cli, a: &GenData) -> Result<(), Failure> {
    let spec = SourceGenSpec {
        seed: cli.seed as i64,
        n_datasets: a.datasets,
        rows_per_fact: a.rows,
        overlap_fraction: a.overlap,
        bad_fk_fraction: a.bad_fk,
    };
    let summary = generate_synthetic_sources(&spec, &build_default_schema(), &a.out)?;
    print(&(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"))
}

fn etl(cli: &Cli, a: &Etl) -> Result<(), Failure> {
    let schema = build_default_schema();
    let wh = open_warehouse(&cli.root)?;
    let raw = RawStore::open(&cli.root)?;
    let (report, quarantine) = etl_run(&a.source, &raw, &wh, &schema, EtlOptions { partition_size: a.partition_size })?;
    let qdir = a.quarantine_dir.clone().unwrap_or_else(|| cli.root.join("quarantine"));
    write_quarantine(&qdir, &quarantine, &schema)?;
    print(&(report.to_json() + "\n"))
}

fn query(cli: &Cli, a: &QueryCmd) -> Result<(), Failure> {
    let sql = read_text(&a.sql, &a.file)?;
    let result = match a.engine {
        EngineArg::Auto => {
            let r = router(cli)?;
            let (res, trace) = r.route(&Request::parse(&sql)?)?;
            eprintln!("{}", trace.to_json_line());
            res
        }
        engine => {
            let wh = open_warehouse(&cli.root)?;
            let q = parse_query(&sql)?;
            if a.explain {
                return print(&plan_query(&q, &wh)?.explain());
            }
            match engine {
                EngineArg::Naive => execute_naive_oracle(&q, &wh)?,
                _ => execute_plan(&plan_query(&q, &wh)?, &wh)?,
            }
        }
    };
    if result.sum_overflow {
        eprintln!("warning: integer SUM overflowed; affected columns were promoted to float");
    }
    print(&render(&result, cli.format))
}

fn cube(cli: &Cli, a: &CubeCmd) -> Result<(), Failure> {
    let schema = build_default_schema();
    let wh = open_warehouse(&cli.root)?;
    let axes = a
        .axes
        .split(',')
        .map(|s| AxisSpec::parse(s).ok_or_else(|| Failure::user(format!("axis '{s}' is not hierarchy@level"))))
        .collect::<Result<Vec<_>, _>>()?;
    let measures = a.measures.split(';').map(MeasureSpec::parse).collect::<Result<Vec<_>, _>>()?;
    let started = Instant::now();
    let base = olap::build_cube(&schema, &wh, &a.fact, &axes, &measures)?;
    info!("built {} cells in {:.3}s", base.cell_count(), started.elapsed().as_secs_f64());
    let axis = |c: &Cube| -> Result<usize, Failure> {
        let name = a.axis.as_deref().ok_or_else(|| Failure::user("--axis is required for this operation"))?;
        Ok(c.axis_index(name)?)
    };
    let out = match a.op {
        CubeOp::Build => base,
        CubeOp::Rollup => olap::rollup(&base, axis(&base)?)?,
        CubeOp::Drilldown => olap::drilldown(&base, axis(&base)?, &schema, &wh)?,
        CubeOp::Slice => {
            let i = axis(&base)?;
            let text = a.members.as_deref().ok_or_else(|| Failure::user("--members is required for slice"))?;
            let members = text.split('|').map(|m| base.parse_member(i, m)).collect::<Result<Vec<_>, _>>()?;
            let sliced = olap::slice_dice(&base, &[(i, members)])?;
            for (h, m) in &sliced.unknown_members {
                eprintln!("warning: '{}' is not a member of axis {h}", m.render());
            }
            sliced
        }
        CubeOp::Pivot => {
            let order = match &a.order {
                Some(o) => o.split(',').map(|h| base.axis_index(h.trim())).collect::<Result<Vec<_>, _>>()?,
                None => (0..base.axes.len()).collect(),
            };
            let p = olap::pivot(&base, &order)?;
            if a.measure >= p.measures.len() {
                return Err(Failure::user(format!("--measure {} out of range", a.measure)));
            }
            return print(&p.to_csv(a.measure));
        }
    };
    print(&render(&out.to_result_set(), cli.format))
}

fn route(cli: &Cli, a: &RouteCmd) -> Result<(), Failure> {
    let r = router(cli)?;
    let text = read_text(&a.request, &a.file)?;
    let mut traces = String::new();
    let lines: Vec<&str> = if a.request.is_some() { vec![text.as_str()] } else { text.lines().filter(|l| !l.trim().is_empty()).collect() };
    for line in lines {
        let (res, trace) = r.route(&Request::parse(line)?)?;
        traces.push_str(&trace.to_json_line());
        traces.push('\n');
        print(&render(&res, cli.format))?;
    }
    match &a.trace_out {
        Some(p) => fs::OpenOptions::new().create(true).append(true).open(p)?.write_all(traces.as_bytes())?,
        None => eprint!("{traces}"),
    }
    Ok(())
}

fn sync(cli: &Cli, a: &SyncCmd) -> Result<(), Failure> {
    let r = router(cli)?;
    let jobs: Vec<String> = match &a.job {
        Some(j) => vec![j.clone()],
        None => r.config().sync_jobs.iter().map(|j| j.name.clone()).collect(),
    };
    if jobs.is_empty() {
        return Err(Failure::user(format!("no sync jobs configured in {}", routing_path(cli).display())));
    }
    for j in jobs {
        let out = r.run_sync(&j)?;
        print(&(serde_json::to_string(&out).expect("outcome serializes") + "\n"))?;
    }
    Ok(())
}

fn bench(cli: &Cli, a: &BenchCmd) -> Result<(), Failure> {
    let wh = open_warehouse(&cli.root)?;
    let suite = generate_query_suite(cli.seed, &wh)?;
    validate_suite(&suite).map_err(Failure::Internal)?;
    let records = run_benchmark(&suite, &NaiveExecutor, &AnalyticExecutor, a.reps, &wh, |b, o| {
        info!("query {:>2} (group {:>2}): baseline {:.4}s, ours {:.4}s", b.query_id, b.group, b.avg, o.avg);
    })?;
    let report = compute_speedups(&records)?;
    emit_report(&report, Some(&records), &a.out)?;
    fs::write(a.out.join("queries.json"), serde_json::to_string_pretty(&suite).expect("suite serializes") + "\n")?;
    print(&(serde_json::to_string_pretty(&report.summary).expect("summary serializes") + "\n"))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::Etl(a) => etl(cli, a),
        Command::Query(a) => query(cli, a),
        Command::Cube(a) => cube(cli, a),
        Command::Route(a) => route(cli, a),
        Command::Sync(a) => sync(cli, a),
        Command::Bench(a) => bench(cli, a),
        Command::Snapshot => {
            let id = open_warehouse(&cli.root)?.snapshot()?;
            print(&format!("{id}\n"))
        }
        Command::Recover(a) => {
            let wh = open_warehouse(&cli.root)?;
            let id = match &a.id {
                Some(id) => id.clone(),
                None => wh.snapshot_ids().last().cloned().ok_or_else(|| Failure::user("no snapshots to recover from"))?,
            };
            wh.recover(&id)?;
            print(&format!("{id}\n"))
        }
        Command::Schema(a) => {
            let schema = build_default_schema();
            if a.check {
                let report = validate_schema(&schema);
                if !report.is_valid() {
                    return Err(Failure::Internal(format!("{:?}", report.violations)));
                }
                print("schema ok\n")
            } else {
                print(&(schema.to_json() + "\n"))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}
