//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! straight to the terminal, so the lines show up without `--nocapture`.
//!
//! The full-scale performance check loads over a million field operations;
//! set `AGRIDWH_PERF_ROWS` to change the per-dataset fact size.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use agridwh::bench::{
    compute_speedups, generate_query_suite, run_benchmark, AnalyticExecutor, EngineRole, NaiveExecutor, TimingRecord,
};
use agridwh::etl::{etl_run, generate_synthetic_sources, load_synthetic, EtlOptions, InjectionLog, QuarantineReason, SourceGenSpec};
use agridwh::olap::{
    build_cube, holap_answer, rolap_answer, rollup, AxisSpec, Cube, CubeCache, CubeQuery, MeasureSpec, Provenance, QueryFilter,
};
use agridwh::query::{run_sql, Engine, ResultSet};
use agridwh::router::{QueryClass, Request, Router, RoutingConfig, Tier, Tiers};
use agridwh::schema::{build_default_schema, ConstellationSchema};
use agridwh::storage::{HotStore, Projection, RawStore, Warehouse};
use agridwh::value::Value;

// Tolerances and budgets.
const FLOAT_REL_TOL: f64 = 1e-9;
const SCHEMA_BUDGET: Duration = Duration::from_secs(1);
const ORACLE_BUDGET_PER_SEED: Duration = Duration::from_secs(5 * 60);
const CUBE_BUDGET: Duration = Duration::from_secs(2 * 60);
const ETL_BUDGET: Duration = Duration::from_secs(3 * 60);
const BENCH_BUDGET: Duration = Duration::from_secs(15 * 60);
const DURABILITY_BUDGET: Duration = Duration::from_secs(30);
const RATIO_DP_TOL: f64 = 0.005;
const OVERALL_TARGET: f64 = 3.18;
const OVERALL_TOL: f64 = 0.01;
const MIN_GROUPS_FASTER: usize = 8;
const MIN_OVERALL_RATIO: f64 = 1.5;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Float(x), Value::Float(y)) => (x - y).abs() <= FLOAT_REL_TOL * x.abs().max(y.abs()).max(1.0),
        _ => a == b,
    }
}

fn rows_close(a: &[Vec<Value>], b: &[Vec<Value>]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| close(p, q)))
}

fn sorted_rows(r: &ResultSet) -> Vec<Vec<Value>> {
    let mut rows = r.rows.clone();
    rows.sort();
    rows
}

fn scan_all(wh: &Warehouse, table: &str) -> Vec<Vec<Value>> {
    wh.scan(table, None, &Projection::All).unwrap().collect()
}

fn spec(seed: i64, n_datasets: usize, rows_per_fact: usize, bad_fk_fraction: f64) -> SourceGenSpec {
    SourceGenSpec { seed, n_datasets, rows_per_fact, overlap_fraction: 0.3, bad_fk_fraction }
}

fn loaded(s: &SourceGenSpec) -> Warehouse {
    let wh = Warehouse::in_memory();
    load_synthetic(s, &wh, &build_default_schema(), EtlOptions::default()).unwrap();
    wh
}

// ---------------------------------------------------------------------------
// 1. Schema fidelity

/// Dimension attributes as published in the source data dictionary.
const DICTIONARY: [(&str, &str); 19] = [
    ("Business", "BusinessID, Name,Address, Phone, Mobile, Email"),
    ("Crop", "CropID, CropName, VarietyID, VarietyName, EstYield, SeasontSart, SeasonEnd, BbchScale, ScientificName, HarvestEquipment, EquipmentWeight"),
    ("CropState", "CropStateID, CropID, StageScale, Height, MajorStage, MinStage, MaxStage, Diameter, MinHeight, MaxHeight, CropCoveragePercent"),
    ("Farmer", "FarmerID, FarmerName, Address, Phone, Mobile, Email"),
    ("Fertiliser", "FertiliserID, Name, Unit, Status, Description, GroupName"),
    ("Field", "FieldID, FieldName, SiteID, Reference, Block, Area, AreaUnit, WorkingArea, WorkingAreaUnit, FieldGPS, Notes"),
    ("Inspection", "InspectionID, CropID, Description, ProblemType, Severity, ProblemNotes, AreaValue, AreaUnit, Order, Date, Notes, GrowthStage"),
    ("Nutrient", "NutrientID, NutrientName, Date, Quantity"),
    ("OperationTime", "OperationTimeID, StartDate, EndDate, Season"),
    ("Pest", "PestID, CommonName, ScientificName, PestType, Description, Density, MinStage, MaxStage, Coverage, CoverageUnit"),
    ("Plan", "PlanID, PlanName, PlanNumber, RegistrationNo, ProductName, ProductRate, Date, WaterVolume"),
    ("Product", "ProductID, ProductName, GroupName"),
    ("Site", "SiteID, FarmerID, SiteName, Reference, Country, AddressName, AddressTown, PostalCode, GPS, Created, CreatedBy"),
    ("Spray", "SprayID, SprayProductName, ProductRate, AppliedArea, AppliedDate, WaterVolume, VolumeUnit, ConfirmDuration, ConfirmWindSPeed, ConfirmDirection, ConfirmTemperature, ConfirmHumidity, ActivityType"),
    ("Soil", "SoilID, PH, Phosphorus, Potassium, Magnesium, Calcium, CEC, Silt, Clay, Sand, TextureLabel, TestDate"),
    ("Supplier", "SupplierID, SupplierName, SupplierContactName, Address, ContactPhone, ContactMobile, ContactEmail"),
    ("Task", "TaskID, TaskDesc, TaskStatus, TaskDate, TaskInterval, CompletedDate, AppCode"),
    ("Treatment", "TreatmentID, TreatmentName, FormType, LotCode, Rate, ApplCode, LevlNo, Type, Description, ApplDesc, TreatmentComment"),
    ("WeatherStation", "WeatherStationID, StationName, MeasureDate, AirTemperature, SoilTemperature, StationReadingBatch"),
];

fn schema_fidelity() -> Outcome {
    let t = Instant::now();
    let s = build_default_schema();
    check(s.facts.len() == 3, || format!("{} facts", s.facts.len()))?;
    check(s.dimensions.len() == 19, || format!("{} dimensions", s.dimensions.len()))?;
    for (fact, links, measures) in [("FieldFact", 12, 6), ("Order", 4, 6), ("Sale", 4, 5)] {
        let f = s.fact(fact).ok_or(format!("missing fact {fact}"))?;
        check(f.dimension_refs.len() == links, || format!("{fact} links {}", f.dimension_refs.len()))?;
        check(f.measures.len() == measures, || format!("{fact} has {} measures", f.measures.len()))?;
    }
    let linked: BTreeSet<&str> = s.facts.iter().flat_map(|f| f.dimension_refs.iter().map(String::as_str)).collect();
    let unlinked: BTreeSet<&str> = s.dimensions.iter().map(|d| d.name.as_str()).filter(|d| !linked.contains(d)).collect();
    check(unlinked == BTreeSet::from(["CropState", "Inspection", "Site"]), || format!("unlinked {unlinked:?}"))?;
    for (dim, attrs) in DICTIONARY {
        let d = s.dimension(dim).ok_or(format!("missing dimension {dim}"))?;
        let want: Vec<&str> = attrs.split(',').map(str::trim).collect();
        let got: Vec<&str> = d.columns.iter().map(|c| c.name.as_str()).collect();
        check(got == want, || format!("{dim}: columns {got:?}"))?;
    }
    let elapsed = t.elapsed();
    check(elapsed < SCHEMA_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("3 facts, 19 dimensions, 12/4/4 links, 6/6/5 measures, {} attributes verbatim", DICTIONARY.len()))
}

// ---------------------------------------------------------------------------
// 2. Oracle equivalence

fn oracle_equivalence() -> Outcome {
    let mut notes = Vec::new();
    for seed in [7u64, 42, 1337] {
        let t = Instant::now();
        let wh = loaded(&spec(seed as i64, 29, 3449, 0.0));
        let n = wh.table("FieldFact").unwrap().row_count();
        check(n >= 100_000, || format!("seed {seed}: only {n} FieldFact rows"))?;
        let suite = generate_query_suite(seed, &wh).map_err(|e| e.to_string())?;
        let mut queries = 0;
        for q in suite.iter().flat_map(|g| &g.queries) {
            let naive = run_sql(&q.sql, &wh, Engine::Naive).map_err(|e| format!("query {}: {e}", q.id))?;
            let fast = run_sql(&q.sql, &wh, Engine::Analytic).map_err(|e| format!("query {}: {e}", q.id))?;
            check(naive.equivalent(&fast), || format!("seed {seed} query {} differs: {}", q.id, q.sql))?;
            queries += 1;
        }
        let elapsed = t.elapsed();
        check(elapsed < ORACLE_BUDGET_PER_SEED, || format!("seed {seed} took {elapsed:?}"))?;
        notes.push(format!("seed {seed}: {queries} queries over {n} rows in {:.1}s", elapsed.as_secs_f64()));
    }
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------------------
// 3. Urea query

const UREA_TOP3: &str = "SELECT top.FarmerID FROM (SELECT S2.FarmerID, SUM(F2.appliedQuantity) AS total FROM FieldFact AS F2 \
    JOIN Fertiliser AS Fe2 ON F2.FertiliserID = Fe2.FertiliserID \
    JOIN OperationTime AS T2 ON F2.OperationTimeID = T2.OperationTimeID \
    JOIN Field AS Fi2 ON F2.FieldID = Fi2.FieldID JOIN Site AS S2 ON Fi2.SiteID = S2.SiteID \
    WHERE Fe2.Name = 'Urea' AND T2.Season LIKE 'spring' AND T2.StartDate LIKE '2016-%' \
    GROUP BY S2.FarmerID ORDER BY total DESC LIMIT 3) AS top";

fn urea_listing_sql() -> String {
    format!(
        "SELECT C.CropName, Fe.Name, F.appliedQuantity, Fi.FieldName, S.SiteName, Fa.FarmerName, T.StartDate FROM FieldFact AS F \
         JOIN Crop AS C ON F.CropID = C.CropID JOIN Fertiliser AS Fe ON F.FertiliserID = Fe.FertiliserID \
         JOIN Field AS Fi ON F.FieldID = Fi.FieldID JOIN Site AS S ON Fi.SiteID = S.SiteID \
         JOIN Farmer AS Fa ON S.FarmerID = Fa.FarmerID JOIN OperationTime AS T ON F.OperationTimeID = T.OperationTimeID \
         WHERE T.Season LIKE 'spring' AND T.StartDate LIKE '2017-%' AND Fa.FarmerID IN ({UREA_TOP3})"
    )
}

/// Key column -> row, for a dimension table.
fn by_key(wh: &Warehouse, table: &str) -> HashMap<i64, Vec<Value>> {
    scan_all(wh, table).into_iter().map(|r| (r[0].as_i64().unwrap(), r)).collect()
}

fn col(wh: &Warehouse, table: &str, name: &str) -> usize {
    wh.table(table).unwrap().schema.column_index(name).unwrap()
}

fn urea_query() -> Outcome {
    let wh = loaded(&spec(2016, 29, 2000, 0.0));
    let (crop, fert, field, site, farmer, time) = (
        by_key(&wh, "Crop"),
        by_key(&wh, "Fertiliser"),
        by_key(&wh, "Field"),
        by_key(&wh, "Site"),
        by_key(&wh, "Farmer"),
        by_key(&wh, "OperationTime"),
    );
    let fc = |n: &str| col(&wh, "FieldFact", n);
    let (c_crop, c_fert, c_field, c_time, c_qty) =
        (fc("CropID"), fc("FertiliserID"), fc("FieldID"), fc("OperationTimeID"), fc("appliedQuantity"));
    let name_of = |m: &HashMap<i64, Vec<Value>>, t: &str, c: &str, k: &Value| m[&k.as_i64().unwrap()][col(&wh, t, c)].clone();
    let in_spring = |t: &Vec<Value>, year: &str| {
        t[col(&wh, "OperationTime", "Season")].as_str().unwrap().eq_ignore_ascii_case("spring")
            && t[col(&wh, "OperationTime", "StartDate")].render().starts_with(year)
    };
    let farmer_of = |field_id: &Value| {
        let site_id = name_of(&field, "Field", "SiteID", field_id);
        name_of(&site, "Site", "FarmerID", &site_id)
    };

    let facts = scan_all(&wh, "FieldFact");
    let mut usage: BTreeMap<i64, f64> = BTreeMap::new();
    for r in &facts {
        let is_urea = name_of(&fert, "Fertiliser", "Name", &r[c_fert]).as_str() == Some("Urea");
        if is_urea && in_spring(&time[&r[c_time].as_i64().unwrap()], "2016-") {
            *usage.entry(farmer_of(&r[c_field]).as_i64().unwrap()).or_default() += r[c_qty].as_f64().unwrap();
        }
    }
    let mut ranked: Vec<(i64, f64)> = usage.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    check(ranked.len() >= 3, || format!("only {} Urea farmers in spring 2016", ranked.len()))?;
    if ranked.len() > 3 {
        let (third, fourth) = (ranked[2].1, ranked[3].1);
        check((third - fourth).abs() > FLOAT_REL_TOL * third.abs(), || "tie at third place".into())?;
    }
    let top: BTreeSet<i64> = ranked[..3].iter().map(|r| r.0).collect();

    let mut expected: Vec<Vec<Value>> = Vec::new();
    for r in &facts {
        let t = &time[&r[c_time].as_i64().unwrap()];
        let fa = farmer_of(&r[c_field]);
        if in_spring(t, "2017-") && top.contains(&fa.as_i64().unwrap()) {
            let site_id = name_of(&field, "Field", "SiteID", &r[c_field]);
            expected.push(vec![
                name_of(&crop, "Crop", "CropName", &r[c_crop]),
                name_of(&fert, "Fertiliser", "Name", &r[c_fert]),
                r[c_qty].clone(),
                name_of(&field, "Field", "FieldName", &r[c_field]),
                name_of(&site, "Site", "SiteName", &site_id),
                name_of(&farmer, "Farmer", "FarmerName", &fa),
                t[col(&wh, "OperationTime", "StartDate")].clone(),
            ]);
        }
    }
    expected.sort();
    check(!expected.is_empty(), || "spring-2017 listing is empty".into())?;

    for engine in [Engine::Analytic, Engine::Naive] {
        let got = run_sql(UREA_TOP3, &wh, engine).map_err(|e| e.to_string())?;
        let ids: BTreeSet<i64> = got.rows.iter().map(|r| r[0].as_i64().unwrap()).collect();
        check(got.len() == 3 && ids == top, || format!("{engine:?}: top farmers {ids:?}, expected {top:?}"))?;
        let listing = run_sql(&urea_listing_sql(), &wh, engine).map_err(|e| e.to_string())?;
        check(sorted_rows(&listing) == expected, || format!("{engine:?}: listing has {} rows, expected {}", listing.len(), expected.len()))?;
    }
    Ok(format!("top farmers {top:?}; spring-2017 listing of {} rows matches", expected.len()))
}

// ---------------------------------------------------------------------------
// 4. Cube correctness

fn axes(specs: &[&str]) -> Vec<AxisSpec> {
    specs.iter().map(|s| AxisSpec::parse(s).unwrap()).collect()
}

fn measures(specs: &[&str]) -> Vec<MeasureSpec> {
    specs.iter().map(|s| MeasureSpec::parse(s).unwrap()).collect()
}

/// Every cube cell matches the keyed rows and vice versa.
fn cells_match(cube: &Cube, expected: &BTreeMap<Vec<Value>, Vec<Value>>, label: &str) -> Result<(), String> {
    check(cube.cell_count() == expected.len(), || format!("{label}: {} cells, {} groups", cube.cell_count(), expected.len()))?;
    for (coord, vals) in cube.cells() {
        let want = expected.get(coord).ok_or_else(|| format!("{label}: unexpected cell {coord:?}"))?;
        check(rows_close(&[vals.clone()], &[want.clone()]), || format!("{label}: cell {coord:?} = {vals:?}, group = {want:?}"))?;
    }
    Ok(())
}

fn grouped(r: ResultSet, keys: usize) -> BTreeMap<Vec<Value>, Vec<Value>> {
    r.rows.into_iter().map(|mut row| {
        let vals = row.split_off(keys);
        (row, vals)
    }).collect()
}

fn cube_correctness() -> Outcome {
    let t = Instant::now();
    let schema = build_default_schema();
    let wh = loaded(&spec(4, 6, 2000, 0.0));
    let sql = |q: &str| run_sql(q, &wh, Engine::Analytic).map_err(|e| e.to_string());

    // Crop name by site.
    let ms_a = ["SUM(appliedQuantity)", "COUNT(*)", "MAX(durationHours)"];
    let a = build_cube(&schema, &wh, "FieldFact", &axes(&["crop@crop", "location@site"]), &measures(&ms_a)).map_err(|e| e.to_string())?;
    let want = sql("SELECT C.CropName, Fi.SiteID, SUM(F.appliedQuantity), COUNT(*), MAX(F.durationHours) FROM FieldFact AS F \
                    JOIN Crop AS C ON F.CropID = C.CropID JOIN Field AS Fi ON F.FieldID = Fi.FieldID GROUP BY C.CropName, Fi.SiteID")?;
    cells_match(&a, &grouped(want, 2), "crop x site")?;

    // Farmer by day.
    let ms_b = ["SUM(revenue)", "COUNT(*)"];
    let b = build_cube(&schema, &wh, "Sale", &axes(&["location@farmer", "time@day"]), &measures(&ms_b)).map_err(|e| e.to_string())?;
    let want = sql("SELECT S.FarmerID, T.StartDate, SUM(S.revenue), COUNT(*) FROM Sale AS S \
                    JOIN OperationTime AS T ON S.OperationTimeID = T.OperationTimeID GROUP BY S.FarmerID, T.StartDate")?;
    cells_match(&b, &grouped(want, 2), "farmer x day")?;

    // Year-qualified season: the relational groups are per (date, season),
    // folded here into season members.
    let ms_c = ["SUM(totalCost)", "MAX(deliveryDays)", "COUNT(*)"];
    let c = build_cube(&schema, &wh, "Order", &axes(&["time@season"]), &measures(&ms_c)).map_err(|e| e.to_string())?;
    let per_day = sql("SELECT T.StartDate, T.Season, SUM(O.totalCost), MAX(O.deliveryDays), COUNT(*) FROM \"Order\" AS O \
                       JOIN OperationTime AS T ON O.OperationTimeID = T.OperationTimeID GROUP BY T.StartDate, T.Season")?;
    let mut seasons: BTreeMap<Vec<Value>, (f64, i64, i64)> = BTreeMap::new();
    for r in &per_day.rows {
        let member = format!("{}-{}", &r[0].render()[..4], r[1].as_str().unwrap().to_lowercase());
        let e = seasons.entry(vec![Value::text(member)]).or_insert((0.0, i64::MIN, 0));
        e.0 += r[2].as_f64().unwrap();
        e.1 = e.1.max(r[3].as_i64().unwrap());
        e.2 += r[4].as_i64().unwrap();
    }
    let want: BTreeMap<_, _> =
        seasons.into_iter().map(|(k, (s, m, n))| (k, vec![Value::Float(s), Value::Int(m), Value::Int(n)])).collect();
    cells_match(&c, &want, "season")?;

    // Rollup without rescanning equals a rebuild at the coarser level.
    let checks = [
        (&a, 1, "FieldFact", vec!["crop@crop", "location@farmer"], &ms_a[..]),
        (&b, 1, "Sale", vec!["location@farmer", "time@month"], &ms_b[..]),
        (&c, 0, "Order", vec!["time@year"], &ms_c[..]),
    ];
    for (cube, axis, fact, coarse, ms) in checks {
        let up = rollup(cube, axis).map_err(|e| e.to_string())?;
        let direct = build_cube(&schema, &wh, fact, &axes(&coarse), &measures(ms)).map_err(|e| e.to_string())?;
        check(rows_close(&up.to_result_set().rows, &direct.to_result_set().rows), || format!("rollup to {coarse:?} differs"))?;
    }

    // HOLAP: covered queries answered from a cube agree with forced ROLAP.
    let cache = CubeCache::new();
    let base_ms = ["SUM(appliedQuantity)", "COUNT(*)", "MAX(durationHours)", "SUM(appliedCost)"];
    let base = cache
        .get_or_build(&schema, &wh, "FieldFact", &axes(&["time@day", "location@field", "crop@variety"]), &measures(&base_ms))
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let levels: [(&str, &[&str]); 3] = [
        ("time", &["day", "month", "season", "year"]),
        ("location", &["field", "site", "farmer"]),
        ("crop", &["variety", "crop"]),
    ];
    for i in 0..20 {
        let mut picked = levels.to_vec();
        picked.shuffle(&mut rng);
        let n_axes = rng.gen_range(1..=3);
        let q_axes: Vec<AxisSpec> =
            picked[..n_axes].iter().map(|(h, ls)| AxisSpec::new(h, ls.choose(&mut rng).unwrap())).collect();
        let mut ms: Vec<&str> = base_ms.to_vec();
        ms.shuffle(&mut rng);
        let q_ms = measures(&ms[..rng.gen_range(1..=ms.len())]);
        let mut filters = Vec::new();
        if i % 2 == 1 {
            let (h, ls) = picked[rng.gen_range(0..3)];
            let li = rng.gen_range(0..ls.len());
            let axis = &base.axes[base.axis_index(h).unwrap()];
            let pool: Vec<Value> = axis.members(li).unwrap().iter().cloned().collect();
            let members = pool.choose_multiple(&mut rng, 2).cloned().collect();
            filters.push(QueryFilter { hierarchy: h.into(), level: ls[li].into(), members });
        }
        let q = CubeQuery { fact: "FieldFact".into(), axes: q_axes, measures: q_ms, filters, predicate: None };
        let molap = holap_answer(&q, &cache, &schema, &wh).map_err(|e| e.to_string())?;
        check(molap.provenance == Provenance::Molap, || format!("query {i} not served from the cube: {q:?}"))?;
        let rolap = rolap_answer(&q, &schema, &wh).map_err(|e| e.to_string())?;
        check(rows_close(&sorted_rows(&molap.result), &sorted_rows(&rolap)), || format!("query {i} MOLAP/ROLAP differ: {q:?}"))?;
    }
    let elapsed = t.elapsed();
    check(elapsed < CUBE_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "3 cubes match GROUP BY ({} + {} + {} cells), 3 rollups match rebuilds, 20 HOLAP queries agree",
        a.cell_count(),
        b.cell_count(),
        c.cell_count()
    ))
}

// ---------------------------------------------------------------------------
// 5. ETL integrity

fn etl_integrity() -> Outcome {
    let t = Instant::now();
    let schema = build_default_schema();
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("sources");
    let s = spec(5, 29, 1000, 0.01);
    let summary = generate_synthetic_sources(&s, &schema, &src).map_err(|e| e.to_string())?;
    check(summary.datasets.len() == 29, || format!("{} datasets", summary.datasets.len()))?;
    let log: InjectionLog = serde_json::from_slice(&std::fs::read(src.join("injection_log.json")).unwrap()).unwrap();
    check(log.count == log.entries.len() && log.count > 0, || format!("injection log count {}", log.count))?;

    let raw = RawStore::open(dir.path()).unwrap();
    let wh = Warehouse::in_memory();
    let (report, quarantine) = etl_run(&src, &raw, &wh, &schema, EtlOptions::default()).map_err(|e| e.to_string())?;

    for f in &schema.facts {
        let c = &report.tables[&f.name];
        check(c.staged == c.loaded + c.quarantined, || format!("{}: {c:?} not conserved", f.name))?;
        check(c.staged == summary.table_rows[&f.name], || format!("{}: staged {} of {}", f.name, c.staged, summary.table_rows[&f.name]))?;
        check(c.loaded == wh.table(&f.name).unwrap().row_count(), || format!("{}: loaded count mismatch", f.name))?;
    }

    // Referential integrity, checked from raw scans.
    let mut checked = 0usize;
    for f in &schema.facts {
        let rows = scan_all(&wh, &f.name);
        for dim in &f.dimension_refs {
            let key = &schema.dimension(dim).unwrap().surrogate_key;
            let keys: HashSet<i64> = scan_all(&wh, dim).iter().map(|r| r[col(&wh, dim, key)].as_i64().unwrap()).collect();
            let c = col(&wh, &f.name, key);
            let dangling = rows.iter().filter(|r| r[c].as_i64().is_none_or(|k| !keys.contains(&k))).count();
            check(dangling == 0, || format!("{}.{key}: {dangling} dangling", f.name))?;
            checked += rows.len();
        }
    }

    let injected: BTreeSet<(String, String, usize)> =
        log.entries.iter().map(|e| (e.dataset_id.clone(), e.table.clone(), e.row)).collect();
    let quarantined: BTreeSet<(String, String, usize)> =
        quarantine.iter().map(|q| (q.dataset_id.clone(), q.table.clone(), q.row)).collect();
    check(quarantine.len() == log.count, || format!("{} quarantined, {} injected", quarantine.len(), log.count))?;
    check(quarantined == injected, || "quarantined rows differ from injected rows".into())?;
    check(quarantine.iter().all(|q| q.reason == QuarantineReason::UnresolvedFk), || "unexpected quarantine reason".into())?;
    let elapsed = t.elapsed();
    check(elapsed < ETL_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("29 datasets, {checked} foreign keys resolved, {} injected = {} quarantined", log.count, quarantine.len()))
}

// ---------------------------------------------------------------------------
// 6. Benchmark arithmetic

const GROUP_MEANS: [(f64, f64); 10] = [
    (1081.5, 173.4),
    (599.7, 205.2),
    (111.7, 91.2),
    (790.4, 276.4),
    (776.6, 342.8),
    (1109.2, 238.0),
    (483.0, 143.7),
    (1057.3, 228.3),
    (297.9, 94.2),
    (571.1, 366.4),
];
const GROUP_RATIOS: [f64; 10] = [6.24, 2.92, 1.22, 2.86, 2.27, 4.66, 3.36, 4.63, 3.16, 1.56];

fn benchmark_math() -> Outcome {
    let mut recs = Vec::new();
    for (g, (b, o)) in GROUP_MEANS.iter().enumerate() {
        for i in 0..5 {
            let id = (g * 5 + i + 1) as u32;
            recs.push(TimingRecord::new(id, g as u8 + 1, EngineRole::Baseline, vec![*b]));
            recs.push(TimingRecord::new(id, g as u8 + 1, EngineRole::Ours, vec![*o]));
        }
    }
    let r = compute_speedups(&recs).map_err(|e| e.to_string())?;
    r.check_shape(10, 5).map_err(|e| e.to_string())?;
    for (g, want) in r.per_group.iter().zip(GROUP_RATIOS) {
        check((g.times - want).abs() <= RATIO_DP_TOL, || format!("group {}: {:.4} vs {want}", g.group, g.times))?;
    }
    let overall = r.summary.times;
    check((overall - OVERALL_TARGET).abs() <= OVERALL_TOL, || format!("overall {overall:.4}"))?;
    check(r.summary.groups_faster == 10, || format!("{} groups faster", r.summary.groups_faster))?;
    Ok(format!("10 group ratios to 2 d.p., overall {overall:.3}"))
}

// ---------------------------------------------------------------------------
// 7. Performance direction

fn performance() -> Outcome {
    let rows_per_fact: usize = std::env::var("AGRIDWH_PERF_ROWS").ok().and_then(|v| v.parse().ok()).unwrap_or(34_483);
    let t = Instant::now();
    let wh = loaded(&spec(0, 29, rows_per_fact, 0.0));
    let n = wh.table("FieldFact").unwrap().row_count();
    let load = t.elapsed();
    let suite = generate_query_suite(0, &wh).map_err(|e| e.to_string())?;
    let records = run_benchmark(&suite, &NaiveExecutor, &AnalyticExecutor, 1, &wh, |_, _| {}).map_err(|e| e.to_string())?;
    let r = compute_speedups(&records).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let ratios: Vec<String> = r.per_group.iter().map(|g| format!("{:.2}", g.times)).collect();
    let detail = format!(
        "{n} rows, faster in {}/10 groups, overall {:.2}x, group ratios [{}], load {:.0}s, total {:.0}s",
        r.summary.groups_faster,
        r.summary.times,
        ratios.join(", "),
        load.as_secs_f64(),
        elapsed.as_secs_f64()
    );
    check(n >= 1_000_000, || format!("{detail}: below one million rows"))?;
    check(r.summary.groups_faster >= MIN_GROUPS_FASTER, || detail.clone())?;
    check(r.summary.times > MIN_OVERALL_RATIO, || detail.clone())?;
    check(elapsed < BENCH_BUDGET, || format!("{detail}: over budget"))?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 8. Durability

/// Row images with floats compared by bit pattern.
fn fingerprint(wh: &Warehouse) -> BTreeMap<String, Vec<String>> {
    wh.table_names()
        .into_iter()
        .map(|t| {
            let rows = scan_all(wh, &t)
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|v| match v {
                            Value::Float(f) => format!("f{:016x}", f.to_bits()),
                            other => format!("{other:?}"),
                        })
                        .collect::<Vec<_>>()
                        .join("|")
                })
                .collect();
            (t, rows)
        })
        .collect()
}

fn mutate(wh: &Warehouse, schema: &ConstellationSchema) {
    let extra: Vec<Vec<Value>> = scan_all(wh, "FieldFact").into_iter().take(10).collect();
    wh.append_rows("FieldFact", &extra).unwrap();
    let crops: Vec<Vec<Value>> = scan_all(wh, "Crop").into_iter().take(2).collect();
    wh.load_partitioned_table(&schema.table_schema("Crop").unwrap(), &crops, 1).unwrap();
    let scratch = agridwh::schema::TableSchema {
        name: "Scratch".into(),
        columns: vec![agridwh::schema::ColumnDef::new("x", agridwh::value::Kind::Float64, false)],
    };
    wh.load_partitioned_table(&scratch, &[vec![Value::Float(0.1)]], 4).unwrap();
}

fn durability() -> Outcome {
    let t = Instant::now();
    let schema = build_default_schema();
    let dir = tempfile::tempdir().unwrap();
    let wh = Warehouse::open(dir.path()).unwrap();
    load_synthetic(&spec(8, 3, 500, 0.0), &wh, &schema, EtlOptions::default()).unwrap();
    let before = fingerprint(&wh);
    let id = wh.snapshot().map_err(|e| e.to_string())?;

    mutate(&wh, &schema);
    check(fingerprint(&wh) != before, || "mutation had no effect".into())?;
    wh.recover(&id).map_err(|e| e.to_string())?;
    check(fingerprint(&wh) == before, || "in-process recovery differs".into())?;

    mutate(&wh, &schema);
    drop(wh);
    let reopened = Warehouse::open(dir.path()).unwrap();
    reopened.recover(&id).map_err(|e| e.to_string())?;
    check(fingerprint(&reopened) == before, || "recovery after reopen differs".into())?;
    drop(reopened);
    check(fingerprint(&Warehouse::open(dir.path()).unwrap()) == before, || "recovered state not persisted".into())?;

    let elapsed = t.elapsed();
    check(elapsed < DURABILITY_BUDGET, || format!("took {elapsed:?}"))?;
    let rows: usize = before.values().map(Vec::len).sum();
    Ok(format!("{} tables, {rows} rows bit-exact after in-process and reopened recovery", before.len()))
}

// ---------------------------------------------------------------------------
// 9. Router isolation

fn router_isolation() -> Outcome {
    let schema = Arc::new(build_default_schema());
    let wh = Arc::new(loaded(&spec(9, 3, 400, 0.0)));
    let hot = Arc::new(HotStore::in_memory());
    let config = RoutingConfig::from_json(
        r#"{"recency_window_secs": 600, "sync_jobs": [
            {"name": "crop_totals", "target": "crop_totals",
             "source": {"kind": "sql", "sql": "SELECT C.CropName, SUM(F.appliedQuantity) AS total, COUNT(*) AS n FROM FieldFact AS F JOIN Crop AS C ON F.CropID = C.CropID GROUP BY C.CropName"}},
            {"name": "sales_by_season", "target": "sales_by_season",
             "source": {"kind": "cube", "fact": "Sale", "axes": ["time@season"], "measures": ["SUM(revenue)", "COUNT(*)"]}}]}"#,
    )
    .map_err(|e| e.to_string())?;
    let tiers = Tiers { schema, warehouse: Some(wh.clone()), hot: Some(hot.clone()), cubes: CubeCache::new() };
    let now = Arc::new(std::sync::atomic::AtomicI64::new(100_000));
    let clock = now.clone();
    let router = Router::new(config, tiers).with_clock(move || clock.load(std::sync::atomic::Ordering::SeqCst));
    let warehouse_before = fingerprint(&wh);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let analytical = [
        "SELECT COUNT(*) FROM FieldFact WHERE appliedQuantity >= 50",
        "SELECT C.CropName, MAX(F.yieldEstimate) AS best FROM FieldFact AS F JOIN Crop AS C ON F.CropID = C.CropID GROUP BY C.CropName ORDER BY best DESC",
        "SELECT FarmerID, SUM(revenue) AS r FROM Sale GROUP BY FarmerID HAVING r >= 1000",
        "CUBE FieldFact time@year,crop@crop SUM(appliedQuantity);COUNT(*)",
        "CUBE Sale time@season COUNT(*)",
    ];
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut violations = Vec::new();
    let mut rejected = 0;
    for i in 0..200 {
        now.fetch_add(5, std::sync::atomic::Ordering::SeqCst);
        let ts = now.load(std::sync::atomic::Ordering::SeqCst);
        let line = match rng.gen_range(0..10) {
            0..=2 => {
                let level = ["ok", "warn"][rng.gen_range(0..2)];
                format!("UPSERT sensors s{} {}", rng.gen_range(0..20), json!({"ts": ts - rng.gen_range(0..1200), "level": level}))
            }
            3 | 4 => format!("GET sensors s{}", rng.gen_range(0..25)),
            5 => format!("RECENT sensors level={}", ["ok", "warn"][rng.gen_range(0..2)]),
            6 => format!("GET crop_totals {}", ["Barley", "Wheat", "Maize"][rng.gen_range(0..3)]),
            7 if i % 20 == 7 => "UPSERT crop_totals Barley {\"total\": 0}".to_string(),
            _ => analytical[rng.gen_range(0..analytical.len())].to_string(),
        };
        if i == 100 {
            router.run_sync("crop_totals").map_err(|e| e.to_string())?;
        }
        let req = Request::parse(&line).map_err(|e| format!("{line}: {e}"))?;
        let expected = match &req {
            Request::HotGet { .. } | Request::HotUpsert { .. } => QueryClass::RealtimePoint,
            Request::HotRecent { .. } => QueryClass::RealtimeRecent,
            Request::Sql(_) | Request::Cube(_) => QueryClass::Analytical,
        };
        let (_, trace) = match router.route(&req) {
            Ok(x) => x,
            Err(_) if line.starts_with("UPSERT crop_totals") => {
                rejected += 1;
                continue;
            }
            Err(e) => return Err(format!("{line}: {e}")),
        };
        *counts.entry(trace.rule).or_default() += 1;
        let ok = trace.class == expected
            && match trace.tier {
                Tier::Hot => expected != QueryClass::Analytical && trace.tables_read.is_empty(),
                Tier::Analytical => {
                    expected == QueryClass::Analytical
                        && trace.collections_read.is_empty()
                        && trace.collections_written.is_empty()
                        && !trace.tables_read.is_empty()
                }
            };
        if !ok {
            violations.push(format!("{line} -> {}", trace.to_json_line()));
        }
    }
    check(violations.is_empty(), || format!("{} tier violations, first: {}", violations.len(), violations[0]))?;
    check(fingerprint(&wh) == warehouse_before, || "workload modified the warehouse".into())?;
    check(rejected > 0, || "no write to a sync target was attempted".into())?;
    check(hot.documents("crop_totals").iter().all(|d| d.body.get("n").is_some()), || "sync target was overwritten by a client".into())?;

    let strip = |c: &str| hot.documents(c).into_iter().map(|d| (d.doc_id, d.body)).collect::<Vec<_>>();
    for job in ["crop_totals", "sales_by_season"] {
        router.run_sync(job).map_err(|e| e.to_string())?;
        let first = strip(job);
        router.run_sync(job).map_err(|e| e.to_string())?;
        check(!first.is_empty() && first == strip(job), || format!("{job}: rerun changed the target"))?;
    }
    let mix: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    Ok(format!("200 requests ({}, {rejected} rejected sync-target writes), 0 violations, 2 sync jobs idempotent", mix.join(", ")))
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("schema fidelity", schema_fidelity),
        ("oracle equivalence", oracle_equivalence),
        ("urea query", urea_query),
        ("cube correctness", cube_correctness),
        ("etl integrity", etl_integrity),
        ("benchmark math", benchmark_math),
        ("performance direction", performance),
        ("durability", durability),
        ("router isolation", router_isolation),
    ];
    let mut failed = Vec::new();
    let _ = writeln!(std::io::stderr());
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        let line = match &outcome {
            Ok(d) => format!("acceptance {} {name}: PASS ({secs:.1}s) {d}", i + 1),
            Err(e) => format!("acceptance {} {name}: FAIL ({secs:.1}s) {e}", i + 1),
        };
        let _ = writeln!(std::io::stderr(), "{line}");
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
