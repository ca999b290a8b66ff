use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::schema::{ColumnDef, TableSchema};
use crate::storage::Warehouse;
use crate::value::{parse_date, Kind, Value};

fn table(name: &str, cols: &[(&str, Kind, bool)]) -> TableSchema {
    TableSchema { name: name.into(), columns: cols.iter().map(|(n, k, null)| ColumnDef::new(n, *k, *null)).collect() }
}

fn fact_schema() -> TableSchema {
    table(
        "Fact",
        &[
            ("SiteID", Kind::Int64, true),
            ("FertiliserID", Kind::Int64, false),
            ("Qty", Kind::Float64, true),
            ("Amount", Kind::Int64, false),
            ("StartDate", Kind::Date, false),
            ("Season", Kind::Text, false),
        ],
    )
}

fn date(s: &str) -> Value {
    Value::Date(parse_date(s).unwrap())
}

/// Small star: Fact -> Site -> Farmer, Fact -> Fertiliser.
fn random_warehouse(seed: u64, fact_rows: usize, partition: usize) -> Warehouse {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wh = Warehouse::in_memory();
    let farmer = table("Farmer", &[("FarmerID", Kind::Int64, false), ("FarmerName", Kind::Text, false), ("County", Kind::Text, true)]);
    let counties = ["Cork", "Kerry", "Clare"];
    let farmers: Vec<Vec<Value>> = (1..=4)
        .map(|i| {
            let county = if rng.gen_bool(0.2) { Value::Null } else { Value::text(counties[rng.gen_range(0..3)]) };
            vec![Value::Int(i), Value::text(format!("Farmer {i}")), county]
        })
        .collect();
    wh.load_partitioned_table(&farmer, &farmers, 3).unwrap();
    let site = table(
        "Site",
        &[("SiteID", Kind::Int64, false), ("FarmerID", Kind::Int64, true), ("SiteName", Kind::Text, false), ("Area", Kind::Float64, false)],
    );
    let sites: Vec<Vec<Value>> = (1..=6)
        .map(|i| {
            // Farmer 5 does not exist: exercises outer joins.
            let f = if rng.gen_bool(0.15) { Value::Null } else { Value::Int(rng.gen_range(1..=5)) };
            vec![Value::Int(i), f, Value::text(format!("{} {i}", ["North", "South"][i as usize % 2])), Value::Float(rng.gen_range(1..8) as f64 * 0.5)]
        })
        .collect();
    wh.load_partitioned_table(&site, &sites, 4).unwrap();
    let fert = table("Fertiliser", &[("FertiliserID", Kind::Int64, false), ("FertName", Kind::Text, false)]);
    let ferts: Vec<Vec<Value>> = ["Urea", "Urban", "Ura", "CAN"]
        .iter()
        .enumerate()
        .map(|(i, n)| vec![Value::Int(i as i64 + 1), Value::text(n)])
        .collect();
    wh.load_partitioned_table(&fert, &ferts, 4).unwrap();
    let seasons = ["spring", "Spring", "summer", "autumn"];
    let qtys = [0.5, 1.0, 2.25, 0.1, 1e6, -0.0, 0.0];
    let facts: Vec<Vec<Value>> = (0..fact_rows)
        .map(|_| {
            vec![
                if rng.gen_bool(0.1) { Value::Null } else { Value::Int(rng.gen_range(1..=7)) },
                Value::Int(rng.gen_range(1..=4)),
                if rng.gen_bool(0.1) { Value::Null } else { Value::Float(qtys[rng.gen_range(0..qtys.len())]) },
                Value::Int(rng.gen_range(-3..20)),
                Value::Date(parse_date("2016-01-01").unwrap() + rng.gen_range(0..800)),
                Value::text(seasons[rng.gen_range(0..4)]),
            ]
        })
        .collect();
    wh.load_partitioned_table(&fact_schema(), &facts, partition).unwrap();
    wh
}

fn both(sql: &str, wh: &Warehouse) -> ResultSet {
    let q = parse_query(sql).unwrap_or_else(|e| panic!("{sql}: {e}"));
    let a = execute_plan(&plan_query(&q, wh).unwrap_or_else(|e| panic!("{sql}: {e}")), wh).unwrap();
    let n = execute_naive_oracle(&q, wh).unwrap();
    assert!(a.equivalent(&n), "engines differ on {sql}\nanalytic: {a:?}\nnaive: {n:?}");
    a
}

fn fixed_warehouse() -> Warehouse {
    let wh = Warehouse::in_memory();
    let t = table("T", &[("g", Kind::Text, false), ("x", Kind::Int64, true), ("name", Kind::Text, false)]);
    let rows = vec![
        vec![Value::text("a"), Value::Int(1), Value::text("Urea")],
        vec![Value::text("a"), Value::Int(2), Value::text("Urban")],
        vec![Value::text("b"), Value::Int(5), Value::text("Ura")],
        vec![Value::text("b"), Value::Null, Value::text("UREA")],
        vec![Value::text("c"), Value::Int(-4), Value::text("Can")],
        vec![Value::text("a"), Value::Int(3), Value::text("Urea")],
    ];
    wh.load_partitioned_table(&t, &rows, 4).unwrap();
    wh.load_partitioned_table(&table("Empty", &[("v", Kind::Float64, true)]), &[], 4).unwrap();
    wh
}

#[test]
fn group_by_having_matches_hand_count() {
    let wh = fixed_warehouse();
    // Groups: a -> sum 6 (3 rows), b -> sum 5 (one null), c -> -4.
    let r = both("SELECT g, SUM(x) AS s, COUNT(x) AS n, COUNT(*) FROM T GROUP BY g HAVING s >= 5 ORDER BY s DESC", &wh);
    assert_eq!(r.column_names(), ["g", "s", "n", "COUNT(*)"]);
    assert_eq!(
        r.rows,
        vec![
            vec![Value::text("a"), Value::Int(6), Value::Int(3), Value::Int(3)],
            vec![Value::text("b"), Value::Int(5), Value::Int(1), Value::Int(2)],
        ]
    );
    assert_eq!(r.columns[1].kind, Kind::Int64);
}

#[test]
fn count_star_and_like() {
    let wh = fixed_warehouse();
    let r = both("SELECT COUNT(*) FROM T", &wh);
    assert_eq!(r.rows, vec![vec![Value::Int(6)]]);
    // Case-insensitive: UREA matches too.
    let r = both("SELECT name FROM T WHERE name LIKE 'Ur%a'", &wh);
    let mut names: Vec<String> = r.rows.iter().map(|r| r[0].render()).collect();
    names.sort();
    assert_eq!(names, ["UREA", "Ura", "Urea", "Urea"]);
}

#[test]
fn empty_table_aggregates() {
    let wh = fixed_warehouse();
    let r = both("SELECT COUNT(*), SUM(v), MAX(v) FROM Empty", &wh);
    assert_eq!(r.rows, vec![vec![Value::Int(0), Value::Null, Value::Null]]);
    let r = both("SELECT v, COUNT(*) FROM Empty GROUP BY v", &wh);
    assert!(r.is_empty());
    let r = both("SELECT * FROM Empty", &wh);
    assert!(r.is_empty());
}

#[test]
fn null_is_its_own_group() {
    let wh = fixed_warehouse();
    let r = both("SELECT x, COUNT(*) AS n FROM T GROUP BY x ORDER BY x", &wh);
    assert_eq!(r.rows[0], vec![Value::Null, Value::Int(1)]);
    assert_eq!(r.len(), 6);
}

#[test]
fn order_by_hidden_column_and_limit() {
    let wh = fixed_warehouse();
    let r = both("SELECT name FROM T ORDER BY x DESC LIMIT 2", &wh);
    assert_eq!(r.rows, vec![vec![Value::text("Ura")], vec![Value::text("Urea")]]);
    assert_eq!(r.columns.len(), 1);
    assert!(r.ordered);
    // Unordered LIMIT is applied after canonical ordering.
    let r = both("SELECT g FROM T LIMIT 2", &wh);
    assert_eq!(r.rows, vec![vec![Value::text("a")], vec![Value::text("a")]]);
}

#[test]
fn union_is_distinct_and_promotes_numbers() {
    let wh = fixed_warehouse();
    let r = both("SELECT g FROM T WHERE x >= 2 UNION SELECT g FROM T WHERE name LIKE 'ur%'", &wh);
    assert_eq!(r.rows, vec![vec![Value::text("a")], vec![Value::text("b")]]);
    let r = both("SELECT x FROM T WHERE x >= 5 UNION SELECT v FROM Empty ORDER BY x DESC", &wh);
    assert_eq!(r.columns[0].kind, Kind::Float64);
    assert_eq!(r.rows, vec![vec![Value::Float(5.0)]]);
}

#[test]
fn sum_overflow_promotes_to_float() {
    let wh = Warehouse::in_memory();
    let t = table("Big", &[("k", Kind::Int64, false), ("v", Kind::Int64, false)]);
    let rows = vec![
        vec![Value::Int(1), Value::Int(i64::MAX)],
        vec![Value::Int(1), Value::Int(i64::MAX)],
        vec![Value::Int(2), Value::Int(7)],
    ];
    wh.load_partitioned_table(&t, &rows, 2).unwrap();
    let r = both("SELECT k, SUM(v) AS s FROM Big GROUP BY k", &wh);
    assert!(r.sum_overflow);
    assert_eq!(r.columns[1].kind, Kind::Float64);
    assert_eq!(r.rows[0][1], Value::Float(2.0 * i64::MAX as f64));
    assert_eq!(r.rows[1][1], Value::Float(7.0));
}

#[test]
fn semantic_errors() {
    let wh = fixed_warehouse();
    let cases = [
        ("SELECT g, x FROM T GROUP BY g", "GROUP BY"),
        ("SELECT g FROM T HAVING COUNT(*) >= 1", "HAVING requires"),
        ("SELECT g FROM T WHERE SUM(x) >= 1", "WHERE"),
        ("SELECT * FROM T GROUP BY g", "SELECT *"),
        ("SELECT SUM(name) FROM T", "numeric"),
        ("SELECT g FROM T UNION SELECT x FROM T", "mixes"),
        ("SELECT g FROM T UNION SELECT g, x FROM T", "columns"),
        ("SELECT g FROM T UNION SELECT g FROM T ORDER BY x", "output column"),
    ];
    for (sql, needle) in cases {
        let q = parse_query(sql).unwrap();
        let a = plan_query(&q, &wh).and_then(|p| execute_plan(&p, &wh)).unwrap_err();
        let n = execute_naive_oracle(&q, &wh).unwrap_err();
        for e in [a, n] {
            assert!(matches!(e, QueryError::Semantic(_)), "{sql}: {e:?}");
            assert!(e.to_string().contains(needle), "{sql}: {e}");
        }
    }
    assert!(matches!(run_sql("SELECT nope FROM T", &wh, Engine::Analytic), Err(QueryError::UnknownColumn { .. })));
    assert!(matches!(run_sql("SELECT x FROM Nope", &wh, Engine::Naive), Err(QueryError::UnknownTable(_))));
    let amb = run_sql("SELECT g FROM T JOIN T AS U ON T.x = U.x", &wh, Engine::Analytic);
    assert!(matches!(amb, Err(QueryError::AmbiguousColumn { .. })), "{amb:?}");
}

#[test]
fn identifiers_are_case_insensitive() {
    let wh = fixed_warehouse();
    let r = both("select G, sum(X) as S from t group by g order by s", &wh);
    assert_eq!(r.column_names(), ["G", "S"]);
    assert_eq!(r.rows[0], vec![Value::text("c"), Value::Int(-4)]);
}

#[test]
fn where_only_query_is_one_pushed_scan() {
    let wh = random_warehouse(1, 50, 8);
    let q = parse_query("SELECT Qty FROM Fact WHERE Season LIKE 'spring' AND Amount >= 3").unwrap();
    let p = plan_query(&q, &wh).unwrap();
    assert_eq!(p.count_nodes("Scan"), 1);
    assert_eq!(p.count_nodes("HashJoin"), 0);
    assert_eq!(p.count_nodes("Filter"), 0, "{}", p.explain());
    let PlanNode::Sort { input, .. } = &p.root else { panic!("{}", p.explain()) };
    let PlanNode::Project { input, .. } = &**input else { panic!("{}", p.explain()) };
    let PlanNode::Scan { pushed, columns, .. } = &**input else { panic!("{}", p.explain()) };
    assert!(pushed.is_some());
    assert_eq!(columns, &["Qty"]);
    let off = plan_with(&q, &wh, PlanOptions { pushdown: false }).unwrap();
    assert_eq!(off.count_nodes("Filter"), 1);
}

#[test]
fn outer_join_predicates_stay_above_the_join() {
    let wh = random_warehouse(2, 30, 8);
    let q = parse_query("SELECT SiteName FROM Fact LEFT JOIN Site ON Fact.SiteID = Site.SiteID WHERE Site.Area >= 1.0 AND Fact.Amount >= 2").unwrap();
    let p = plan_query(&q, &wh).unwrap();
    let text = p.explain();
    assert!(text.contains("Scan Fact cols=[SiteID] pushed=[Amount >= 2]"), "{text}");
    assert!(text.contains("Scan Site cols=[SiteID, SiteName, Area]\n"), "{text}");
    assert_eq!(p.count_nodes("Filter"), 1, "{text}");
    both(&q.to_string(), &wh);
}

#[test]
fn in_subquery_is_pushed_as_set() {
    let wh = random_warehouse(3, 60, 8);
    let sql = "SELECT FertiliserID, COUNT(*) FROM Fact WHERE SiteID IN (SELECT SiteID FROM Site WHERE Area >= 2.0) GROUP BY FertiliserID";
    let p = plan_query(&parse_query(sql).unwrap(), &wh).unwrap();
    assert!(p.explain().contains("SiteID IN #0"), "{}", p.explain());
    assert_eq!(p.subqueries.len(), 1);
    both(sql, &wh);
}

#[test]
fn join_order_does_not_change_results() {
    let wh = random_warehouse(4, 80, 16);
    let a = both("SELECT Fact.Amount, Site.SiteName FROM Fact JOIN Site ON Fact.SiteID = Site.SiteID", &wh);
    let b = both("SELECT Fact.Amount, Site.SiteName FROM Site JOIN Fact ON Site.SiteID = Fact.SiteID", &wh);
    assert!(a.bag_equal(&b));
    // LEFT from one side equals RIGHT from the other.
    let l = both("SELECT Site.SiteID, Farmer.FarmerName FROM Site LEFT JOIN Farmer ON Site.FarmerID = Farmer.FarmerID", &wh);
    let r = both("SELECT Site.SiteID, Farmer.FarmerName FROM Farmer RIGHT JOIN Site ON Farmer.FarmerID = Site.FarmerID", &wh);
    assert!(l.bag_equal(&r));
    assert_eq!(l.len(), 6);
}

#[test]
fn nested_subquery_depth_two() {
    let wh = random_warehouse(5, 120, 16);
    let sql = "SELECT Farmer.FarmerName, Fact.StartDate, Fact.Qty FROM Fact \
               JOIN Site ON Fact.SiteID = Site.SiteID JOIN Farmer ON Site.FarmerID = Farmer.FarmerID \
               WHERE Fact.Season LIKE 'spring' AND Fact.StartDate LIKE '2017-%' AND Farmer.FarmerID IN \
               (SELECT top.FarmerID FROM (SELECT Site.FarmerID, SUM(Fact.Qty) AS total FROM Fact \
               JOIN Site ON Fact.SiteID = Site.SiteID JOIN Fertiliser ON Fact.FertiliserID = Fertiliser.FertiliserID \
               WHERE Fertiliser.FertName = 'Urea' AND Fact.StartDate LIKE '2016-%' GROUP BY Site.FarmerID \
               ORDER BY total DESC LIMIT 3) AS top)";
    let q = parse_query(sql).unwrap();
    assert_eq!(q.subquery_depth(), 2);
    both(sql, &wh);
}

#[test]
fn date_literals_compare_with_date_columns() {
    let wh = random_warehouse(6, 100, 16);
    let a = both("SELECT COUNT(*) FROM Fact WHERE StartDate >= '2017-01-01'", &wh);
    let expected = random_fact_rows(6, 100).iter().filter(|r| r[4] >= date("2017-01-01")).count() as i64;
    assert_eq!(a.rows[0][0], Value::Int(expected));
    let bad = both("SELECT COUNT(*) FROM Fact WHERE StartDate = 'not a date'", &wh);
    assert_eq!(bad.rows[0][0], Value::Int(0));
}

fn random_fact_rows(seed: u64, n: usize) -> Vec<Vec<Value>> {
    let wh = random_warehouse(seed, n, 1000);
    wh.scan("Fact", None, &crate::storage::Projection::All).unwrap().collect()
}

// ---------------------------------------------------------------------------
// Random query generation

struct Gen {
    rng: ChaCha8Rng,
}

const FACT_COLS: &[&str] = &["Fact.SiteID", "Fact.FertiliserID", "Fact.Qty", "Fact.Amount", "Fact.StartDate", "Fact.Season"];
const SITE_COLS: &[&str] = &["Site.SiteID", "Site.FarmerID", "Site.SiteName", "Site.Area"];
const FARMER_COLS: &[&str] = &["Farmer.FarmerName", "Farmer.County", "Farmer.FarmerID"];
const FERT_COLS: &[&str] = &["Fertiliser.FertName", "Fertiliser.FertiliserID"];
const NUMERIC: &[&str] = &["Fact.Qty", "Fact.Amount", "Site.Area", "Fact.SiteID"];

impl Gen {
    fn pick<'a>(&mut self, xs: &[&'a str]) -> &'a str {
        xs[self.rng.gen_range(0..xs.len())]
    }

    fn from_clause(&mut self) -> (String, Vec<&'static str>) {
        let mut cols: Vec<&str> = FACT_COLS.to_vec();
        let mut sql = "Fact".to_string();
        let kinds = ["JOIN", "LEFT JOIN", "RIGHT JOIN", "INNER JOIN", "LEFT OUTER JOIN"];
        if self.rng.gen_bool(0.6) {
            sql += &format!(" {} Site ON Fact.SiteID = Site.SiteID", self.pick(&kinds));
            cols.extend(SITE_COLS);
            if self.rng.gen_bool(0.5) {
                sql += &format!(" {} Farmer ON Farmer.FarmerID = Site.FarmerID", self.pick(&kinds));
                cols.extend(FARMER_COLS);
            }
        }
        if self.rng.gen_bool(0.4) {
            sql += &format!(" {} Fertiliser ON Fact.FertiliserID = Fertiliser.FertiliserID", self.pick(&kinds));
            cols.extend(FERT_COLS);
        }
        (sql, cols)
    }

    fn literal_for(&mut self, col: &str) -> String {
        match col.rsplit('.').next().unwrap() {
            "Qty" => self.pick(&["0.5", "1", "2.25", "0", "1e6", "-1"]).into(),
            "Area" => self.pick(&["1.5", "2", "3.0"]).into(),
            "StartDate" => self.pick(&["'2016-06-01'", "'2017-01-01'", "'2016-1-1'", "'junk'"]).into(),
            "Season" => self.pick(&["'spring'", "'summer'", "'Spring'"]).into(),
            "SiteName" => self.pick(&["'North 2'", "'South 1'"]).into(),
            "FertName" => self.pick(&["'Urea'", "'CAN'"]).into(),
            "FarmerName" => "'Farmer 2'".into(),
            "County" => self.pick(&["'Cork'", "'Clare'"]).into(),
            _ => self.rng.gen_range(-1..8).to_string(),
        }
    }

    fn predicate(&mut self, cols: &[&str], depth: u32) -> String {
        let choice = self.rng.gen_range(0..if depth > 0 { 8 } else { 6 });
        let col = self.pick(cols);
        match choice {
            0 | 1 => format!("{col} = {}", self.literal_for(col)),
            2 => format!("{col} >= {}", self.literal_for(col)),
            3 => format!("{} >= {col}", self.literal_for(col)),
            4 => {
                let pat = self.pick(&["'2016-%'", "'spr%'", "'%a'", "'Ur_a'", "'%1%'", "'North%'"]);
                format!("{col} LIKE {pat}")
            }
            5 => {
                let c = self.pick(&["Fact.SiteID", "Fact.FertiliserID"]);
                if cols.contains(&c) {
                    let sub = if c == "Fact.SiteID" { "SELECT SiteID FROM Site WHERE Area >= 2" } else { "SELECT FertiliserID FROM Fertiliser WHERE FertName LIKE 'ur%'" };
                    format!("{c} IN ({sub})")
                } else {
                    format!("{col} = {}", self.literal_for(col))
                }
            }
            6 => format!("({} OR {})", self.predicate(cols, depth - 1), self.predicate(cols, depth - 1)),
            _ => format!("{} AND {}", self.predicate(cols, depth - 1), self.predicate(cols, depth - 1)),
        }
    }

    fn where_clause(&mut self, cols: &[&str]) -> String {
        if self.rng.gen_bool(0.2) {
            return String::new();
        }
        let n = self.rng.gen_range(1..=3);
        let preds: Vec<String> = (0..n).map(|_| self.predicate(cols, 2)).collect();
        format!(" WHERE {}", preds.join(" AND "))
    }

    fn query(&mut self) -> String {
        let (from, cols) = self.from_clause();
        let wher = self.where_clause(&cols);
        let limit = if self.rng.gen_bool(0.3) { format!(" LIMIT {}", self.rng.gen_range(0..6)) } else { String::new() };
        match self.rng.gen_range(0..5) {
            0 => {
                let n = self.rng.gen_range(1..=3);
                let items: Vec<&str> = (0..n).map(|_| self.pick(&cols)).collect();
                let order = if self.rng.gen_bool(0.5) {
                    format!(" ORDER BY {} {}", self.pick(&cols), self.pick(&["ASC", "DESC"]))
                } else {
                    String::new()
                };
                format!("SELECT {} FROM {from}{wher}{order}{limit}", items.join(", "))
            }
            1 | 2 => {
                let g = self.pick(&cols);
                let numeric: Vec<&str> = NUMERIC.iter().copied().filter(|c| cols.contains(c)).collect();
                let m = self.pick(&numeric);
                let agg = self.pick(&["SUM", "MAX", "COUNT"]);
                let having = match self.rng.gen_range(0..3) {
                    0 => format!(" HAVING total >= {}", self.literal_for(m)),
                    1 => " HAVING COUNT(*) >= 2".into(),
                    _ => String::new(),
                };
                let order = match self.rng.gen_range(0..3) {
                    0 => " ORDER BY total DESC".to_string(),
                    1 => format!(" ORDER BY MAX({m}) ASC"),
                    _ => String::new(),
                };
                format!("SELECT {g}, {agg}({m}) AS total, COUNT(*) FROM {from}{wher} GROUP BY {g}{having}{order}{limit}")
            }
            3 => {
                let (from2, cols2) = self.from_clause();
                let wher2 = self.where_clause(&cols2);
                let c = self.pick(&["Fact.Season", "Fact.Amount", "Fact.FertiliserID"]);
                let c2 = self.pick(&["Fact.Amount", "Fact.Qty", "Fact.FertiliserID"]);
                let order = if self.rng.gen_bool(0.5) { " ORDER BY Season DESC" } else { "" };
                let first = if c == "Fact.Season" { c.to_string() } else { format!("{c} AS Season") };
                let second = if c == "Fact.Season" { "Fact.Season".to_string() } else { c2.to_string() };
                format!("SELECT {first} FROM {from}{wher} UNION SELECT {second} FROM {from2}{wher2}{order}{limit}")
            }
            _ => {
                let g = self.pick(&cols);
                format!(
                    "SELECT t.k, t.total FROM (SELECT {g} AS k, SUM(Fact.Amount) AS total FROM {from}{wher} GROUP BY {g}) AS t \
                     WHERE t.total >= {} ORDER BY t.total DESC{limit}",
                    self.rng.gen_range(-5..30)
                )
            }
        }
    }
}

fn random_sql(seed: u64) -> String {
    Gen { rng: ChaCha8Rng::seed_from_u64(seed) }.query()
}

fn check_engines(sql: &str, wh: &Warehouse) -> Result<(), TestCaseError> {
    let q = parse_query(sql).map_err(|e| TestCaseError::fail(format!("{sql}: {e}")))?;
    let n = execute_naive_oracle(&q, wh);
    let a = plan_query(&q, wh).and_then(|p| execute_plan(&p, wh));
    let off = plan_with(&q, wh, PlanOptions { pushdown: false }).and_then(|p| execute_plan(&p, wh));
    match (a, n, off) {
        (Ok(a), Ok(n), Ok(off)) => {
            prop_assert!(a.equivalent(&n), "{}\nanalytic {:?}\nnaive {:?}", sql, a.rows, n.rows);
            prop_assert!(a.equivalent(&off), "pushdown changed {}", sql);
        }
        (Err(a), Err(n), Err(_)) => prop_assert_eq!(std::mem::discriminant(&a), std::mem::discriminant(&n), "{}", sql),
        (a, n, _) => prop_assert!(false, "{sql}: analytic {a:?} naive {n:?}"),
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn engines_agree_on_random_queries(data_seed in 0u64..1000, query_seed in any::<u64>(), rows in 0usize..60, part in 1usize..20) {
        let wh = random_warehouse(data_seed, rows, part);
        check_engines(&random_sql(query_seed), &wh)?;
    }

    #[test]
    fn printed_queries_parse_back(seed in any::<u64>()) {
        let sql = random_sql(seed);
        let q = parse_query(&sql).unwrap();
        let printed = q.to_string();
        prop_assert_eq!(parse_query(&printed).unwrap(), q, "{}", printed);
    }
}

#[test]
fn generated_queries_mostly_succeed() {
    let wh = random_warehouse(9, 40, 8);
    let ok = (0..200u64).filter(|s| run_sql(&random_sql(*s), &wh, Engine::Analytic).is_ok()).count();
    assert!(ok >= 150, "only {ok} of 200 generated queries were valid");
}

#[test]
fn generated_queries_return_rows() {
    let wh = random_warehouse(9, 40, 8);
    let mut nonempty = 0;
    for s in 0..200u64 {
        if let Ok(r) = run_sql(&random_sql(s), &wh, Engine::Analytic) {
            nonempty += !r.is_empty() as usize;
        }
    }
    assert!(nonempty >= 80, "only {nonempty} of 200 generated queries returned rows");
}
