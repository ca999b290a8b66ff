use std::sync::OnceLock;

use super::*;
use crate::etl::{load_synthetic, EtlOptions, SourceGenSpec};
use crate::query::{run_sql, Engine};
use crate::schema::build_default_schema;

struct Fixture {
    schema: ConstellationSchema,
    wh: Warehouse,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let schema = build_default_schema();
        let wh = Warehouse::in_memory();
        let spec = SourceGenSpec { seed: 11, n_datasets: 3, rows_per_fact: 400, overlap_fraction: 0.3, bad_fk_fraction: 0.0 };
        load_synthetic(&spec, &wh, &schema, EtlOptions::default()).unwrap();
        Fixture { schema, wh }
    })
}

fn measures(specs: &[&str]) -> Vec<MeasureSpec> {
    specs.iter().map(|s| MeasureSpec::parse(s).unwrap()).collect()
}

fn cube(fact: &str, axes: &[(&str, &str)], ms: &[&str]) -> Cube {
    let f = fixture();
    let axes: Vec<AxisSpec> = axes.iter().map(|(h, l)| AxisSpec::new(h, l)).collect();
    build_cube(&f.schema, &f.wh, fact, &axes, &measures(ms)).unwrap()
}

fn query(fact: &str, axes: &[(&str, &str)], ms: &[&str]) -> CubeQuery {
    CubeQuery {
        fact: fact.into(),
        axes: axes.iter().map(|(h, l)| AxisSpec::new(h, l)).collect(),
        measures: measures(ms),
        filters: Vec::new(),
        predicate: None,
    }
}

fn close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Float(x), Value::Float(y)) => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0),
        _ => a == b,
    }
}

fn assert_close(a: &ResultSet, b: &ResultSet) {
    assert_eq!(a.column_names(), b.column_names());
    assert_eq!(a.rows.len(), b.rows.len(), "row counts differ");
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert!(x.iter().zip(y).all(|(p, q)| close(p, q)), "{x:?} != {y:?}");
    }
}

fn fact_rows(fact: &str) -> i64 {
    let r = run_sql(&format!("SELECT COUNT(*) FROM {fact}"), &fixture().wh, Engine::Naive).unwrap();
    r.rows[0][0].as_i64().unwrap()
}

#[test]
fn cube_matches_relational_group_by() {
    let f = fixture();
    let configs: [(&str, &[(&str, &str)], &[&str]); 3] = [
        ("FieldFact", &[("time", "month"), ("location", "site")], &["SUM(appliedQuantity)", "COUNT(*)", "MAX(durationHours)"]),
        ("Order", &[("time", "year"), ("location", "farmer")], &["SUM(totalCost)", "SUM(quantityOrdered)"]),
        ("Sale", &[("crop", "crop"), ("time", "season")], &["SUM(revenue)", "COUNT(*)"]),
    ];
    for (fact, axes, ms) in configs {
        let c = cube(fact, axes, ms);
        assert!(c.cell_count() > 0);
        let rolap = rolap_answer(&query(fact, axes, ms), &f.schema, &f.wh).unwrap();
        assert_close(&c.to_result_set(), &rolap);
    }
}

#[test]
fn count_cells_sum_to_row_count() {
    let c = cube("FieldFact", &[("crop", "variety"), ("time", "year")], &["COUNT(*)"]);
    let total: i64 = c.cells().map(|(_, v)| v[0].as_i64().unwrap()).sum();
    assert_eq!(total, fact_rows("FieldFact"));
}

#[test]
fn day_level_cell_matches_hand_query() {
    let f = fixture();
    let c = cube("FieldFact", &[("time", "day")], &["SUM(durationHours)"]);
    let (coord, vals) = c.cells().find(|(k, _)| !k[0].is_null()).unwrap();
    let sql = format!(
        "SELECT SUM(F.durationHours) FROM FieldFact AS F JOIN OperationTime AS T ON F.OperationTimeID = T.OperationTimeID \
         WHERE T.StartDate = '{}'",
        coord[0].render()
    );
    let r = run_sql(&sql, &f.wh, Engine::Naive).unwrap();
    assert_eq!(r.rows[0][0], vals[0]);
}

#[test]
fn rollup_equals_rebuild_at_coarser_level() {
    let base = cube("FieldFact", &[("time", "day"), ("location", "field")], &["SUM(appliedCost)", "COUNT(*)", "MAX(yieldEstimate)"]);
    let up = rollup(&base, 0).unwrap();
    let direct = cube("FieldFact", &[("time", "month"), ("location", "field")], &["SUM(appliedCost)", "COUNT(*)", "MAX(yieldEstimate)"]);
    assert_eq!(up.to_result_set().rows, direct.to_result_set().rows);
    let up2 = rollup(&rollup(&up, 1).unwrap(), 1).unwrap();
    let direct2 = cube("FieldFact", &[("time", "month"), ("location", "farmer")], &["SUM(appliedCost)", "COUNT(*)", "MAX(yieldEstimate)"]);
    assert_eq!(up2.to_result_set().rows, direct2.to_result_set().rows);
    assert_eq!(up2.axes[1].level_name(), "farmer");
}

#[test]
fn rollup_of_drilldown_is_identity() {
    let f = fixture();
    let c = cube("FieldFact", &[("time", "season"), ("crop", "crop")], &["SUM(areaTreated)"]);
    let d = drilldown(&c, 0, &f.schema, &f.wh).unwrap();
    assert_eq!(d.axes[0].level_name(), "month");
    assert!(d.cell_count() >= c.cell_count());
    assert_eq!(rollup(&d, 0).unwrap().to_result_set().rows, c.to_result_set().rows);
}

#[test]
fn axis_bounds_are_enforced() {
    let f = fixture();
    let c = cube("FieldFact", &[("time", "year")], &["COUNT(*)"]);
    assert!(matches!(rollup(&c, 0), Err(OlapError::AlreadyAtTop(_))));
    let d = cube("FieldFact", &[("time", "day")], &["COUNT(*)"]);
    assert!(matches!(drilldown(&d, 0, &f.schema, &f.wh), Err(OlapError::AlreadyAtBottom(_))));
    assert!(matches!(rollup(&d, 3), Err(OlapError::UnknownAxis(_))));
}

#[test]
fn unreachable_and_unknown_inputs() {
    let f = fixture();
    let err = build_cube(&f.schema, &f.wh, "Order", &[AxisSpec::new("location", "site")], &measures(&["COUNT(*)"]));
    assert!(matches!(err, Err(OlapError::UnreachableLevel { .. })));
    let err = build_cube(&f.schema, &f.wh, "Nope", &[AxisSpec::new("time", "day")], &measures(&["COUNT(*)"]));
    assert!(matches!(err, Err(OlapError::UnknownFact(_))));
    let err = build_cube(&f.schema, &f.wh, "Sale", &[AxisSpec::new("time", "week")], &measures(&["COUNT(*)"]));
    assert!(matches!(err, Err(OlapError::UnknownLevel { .. })));
    let err = build_cube(&f.schema, &f.wh, "Sale", &[AxisSpec::new("time", "day")], &measures(&["SUM(nothing)"]));
    assert!(matches!(err, Err(OlapError::UnknownMeasure { .. })));
    assert!(matches!(MeasureSpec::parse("AVG(revenue)"), Err(OlapError::UnsupportedAggregator(_))));
    assert!(matches!(MeasureSpec::parse("SUM(*)"), Err(OlapError::UnsupportedAggregator(_))));
    let dup = [AxisSpec::new("time", "day"), AxisSpec::new("time", "year")];
    assert!(matches!(build_cube(&f.schema, &f.wh, "Sale", &dup, &measures(&["COUNT(*)"])), Err(OlapError::DuplicateAxis(_))));
}

#[test]
fn slice_keeps_exact_subset() {
    let c = cube("Sale", &[("time", "year"), ("crop", "crop")], &["SUM(revenue)"]);
    let all: Vec<Value> = c.axes[0].members(c.axes[0].level).unwrap().iter().cloned().collect();
    let same = slice_dice(&c, &[(0, all.clone())]).unwrap();
    assert_eq!(same.to_result_set().rows, c.to_result_set().rows);
    assert!(same.unknown_members.is_empty());

    let year = all[0].clone();
    let s = slice_dice(&c, &[(0, vec![year.clone()])]).unwrap();
    let expected: Vec<_> = c.to_result_set().rows.into_iter().filter(|r| r[0] == year).collect();
    assert_eq!(s.to_result_set().rows, expected);

    let none = slice_dice(&s, &[(0, vec![Value::Int(1850)])]).unwrap();
    assert_eq!(none.cell_count(), 0);
    assert_eq!(none.unknown_members, vec![("time".to_string(), Value::Int(1850))]);
}

#[test]
fn drilldown_keeps_slice_filter() {
    let f = fixture();
    let c = cube("FieldFact", &[("time", "year"), ("location", "farmer")], &["SUM(waterVolume)", "COUNT(*)"]);
    let year = c.cells().next().unwrap().0[0].clone();
    let s = slice_dice(&c, &[(0, vec![year.clone()])]).unwrap();
    let d = drilldown(&s, 0, &f.schema, &f.wh).unwrap();
    assert!(d.cells().all(|(k, _)| k[0].render().starts_with(&year.render())));
    assert_eq!(rollup(&d, 0).unwrap().to_result_set().rows, s.to_result_set().rows);
}

#[test]
fn pivot_transposes() {
    let c = cube("Sale", &[("time", "year"), ("crop", "crop")], &["SUM(revenue)", "COUNT(*)"]);
    let p = pivot(&c, &[0, 1]).unwrap();
    let t = pivot(&c, &[1, 0]).unwrap();
    assert_eq!(p.rows.len(), t.columns.len());
    assert_eq!(p.columns.len(), t.rows.len());
    for m in 0..2 {
        for r in 0..p.rows.len() {
            for col in 0..p.columns.len() {
                assert_eq!(p.grid[m][r][col], t.grid[m][col][r]);
            }
        }
    }
    let filled = p.grid[1].iter().flatten().filter(|v| v.is_some()).count();
    assert_eq!(filled, c.cell_count());
    let csv = p.to_csv(0);
    assert_eq!(csv.lines().count(), p.rows.len() + 1);
    assert!(matches!(pivot(&c, &[0, 0]), Err(OlapError::InvalidAxisOrder(2))));
    let one = cube("Sale", &[("time", "year")], &["COUNT(*)"]);
    assert!(matches!(pivot(&one, &[0]), Err(OlapError::TooFewAxes)));
}

#[test]
fn empty_fact_gives_empty_cube() {
    let schema = build_default_schema();
    let wh = Warehouse::in_memory();
    for name in schema.table_names() {
        let t = schema.table_schema(&name).unwrap();
        wh.load_partitioned_table(&t, &[], 100).unwrap();
    }
    let c = build_cube(&schema, &wh, "Sale", &[AxisSpec::new("time", "month")], &measures(&["SUM(revenue)"])).unwrap();
    assert_eq!(c.cell_count(), 0);
    let q = query("Sale", &[("time", "month")], &["SUM(revenue)"]);
    assert!(rolap_answer(&q, &schema, &wh).unwrap().rows.is_empty());
}

#[test]
fn holap_prefers_covering_cube_and_agrees() {
    let f = fixture();
    let cache = CubeCache::new();
    let axes = [AxisSpec::new("time", "month"), AxisSpec::new("location", "site"), AxisSpec::new("crop", "variety")];
    let ms = measures(&["SUM(appliedQuantity)", "COUNT(*)", "MAX(durationHours)"]);
    cache.get_or_build(&f.schema, &f.wh, "FieldFact", &axes, &ms).unwrap();
    assert_eq!(cache.len(), 1);
    cache.get_or_build(&f.schema, &f.wh, "FieldFact", &axes, &ms).unwrap();
    assert_eq!(cache.len(), 1);

    let mut q = query("FieldFact", &[("time", "year"), ("location", "farmer")], &["SUM(appliedQuantity)", "COUNT(*)"]);
    let a = holap_answer(&q, &cache, &f.schema, &f.wh).unwrap();
    assert_eq!(a.provenance, Provenance::Molap);
    assert_close(&a.result, &rolap_answer(&q, &f.schema, &f.wh).unwrap());

    let year = a.result.rows[0][0].clone();
    q.filters.push(QueryFilter { hierarchy: "time".into(), level: "year".into(), members: vec![year] });
    q.axes = vec![AxisSpec::new("crop", "crop")];
    let a = holap_answer(&q, &cache, &f.schema, &f.wh).unwrap();
    assert_eq!(a.provenance, Provenance::Molap);
    assert_close(&a.result, &rolap_answer(&q, &f.schema, &f.wh).unwrap());

    // Finer than the cube: relational.
    let fine = query("FieldFact", &[("time", "day")], &["COUNT(*)"]);
    assert_eq!(holap_answer(&fine, &cache, &f.schema, &f.wh).unwrap().provenance, Provenance::Rolap);
    // Measure missing from the cube: relational.
    let other = query("FieldFact", &[("time", "year")], &["SUM(waterVolume)"]);
    assert_eq!(holap_answer(&other, &cache, &f.schema, &f.wh).unwrap().provenance, Provenance::Rolap);
}

#[test]
fn predicate_forces_relational_path() {
    let f = fixture();
    let cache = CubeCache::new();
    let ms = measures(&["SUM(appliedQuantity)"]);
    cache.get_or_build(&f.schema, &f.wh, "FieldFact", &[AxisSpec::new("crop", "crop")], &ms).unwrap();
    let mut q = query("FieldFact", &[("crop", "crop")], &["SUM(appliedQuantity)"]);
    q.predicate = Some("j0.CropName LIKE 'w%'".into());
    let a = holap_answer(&q, &cache, &f.schema, &f.wh).unwrap();
    assert_eq!(a.provenance, Provenance::Rolap);
    assert!(a.result.rows.iter().all(|r| r[0].render().to_lowercase().starts_with('w')));
    let empty = CubeCache::new();
    q.predicate = None;
    assert_eq!(holap_answer(&q, &empty, &f.schema, &f.wh).unwrap().provenance, Provenance::Rolap);
}

#[test]
fn filtered_cube_never_covers() {
    let f = fixture();
    let c = cube("Sale", &[("time", "year")], &["COUNT(*)"]);
    let y = c.cells().next().unwrap().0[0].clone();
    let s = slice_dice(&c, &[(0, vec![y])]).unwrap();
    let q = query("Sale", &[("time", "year")], &["COUNT(*)"]);
    assert!(covers(&c, &q, &f.schema));
    assert!(!covers(&s, &q, &f.schema));
}

#[test]
fn cube_csv_has_header_and_cells() {
    let c = cube("Order", &[("location", "farmer")], &["SUM(quantityOrdered)"]);
    let csv = c.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "location:farmer,SUM(quantityOrdered)");
    assert_eq!(lines.count(), c.cell_count());
}
