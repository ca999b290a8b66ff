use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::schema::{ColumnDef, TableSchema};
use crate::value::{Kind, Value};

fn schema() -> TableSchema {
    TableSchema {
        name: "T".into(),
        columns: vec![
            ColumnDef { name: "id".into(), kind: Kind::Int64, nullable: false },
            ColumnDef { name: "qty".into(), kind: Kind::Float64, nullable: true },
            ColumnDef { name: "name".into(), kind: Kind::Text, nullable: true },
            ColumnDef { name: "day".into(), kind: Kind::Date, nullable: true },
        ],
    }
}

fn row(id: i64) -> Vec<Value> {
    vec![
        Value::Int(id),
        if id % 5 == 0 { Value::Null } else { Value::Float(id as f64 * 1.5) },
        Value::text(&format!("n{}", id % 3)),
        Value::Date(17_000 + id),
    ]
}

fn ids(scan: Scan) -> Vec<i64> {
    scan.map(|r| r[0].as_i64().unwrap()).collect()
}

#[test]
fn partitions_follow_partition_size() {
    let wh = Warehouse::in_memory();
    let rows: Vec<_> = (0..10).map(row).collect();
    let pids = wh.load_partitioned_table(&schema(), &rows, 4).unwrap();
    assert_eq!(pids, [0, 1, 2]);
    let sizes: Vec<usize> = wh.catalog().tables["T"].partitions.iter().map(|p| p.rows).collect();
    assert_eq!(sizes, [4, 4, 2]);
    assert_eq!(wh.row_count("T").unwrap(), 10);
    let all: Vec<Vec<Value>> = wh.scan("T", None, &Projection::All).unwrap().collect();
    assert_eq!(all, rows);
}

#[test]
fn empty_load_creates_empty_table() {
    let wh = Warehouse::in_memory();
    assert!(wh.load_partitioned_table(&schema(), &[], 4).unwrap().is_empty());
    assert_eq!(wh.row_count("T").unwrap(), 0);
    assert_eq!(wh.scan("T", None, &Projection::All).unwrap().count(), 0);
}

#[test]
fn type_mismatch_names_row_and_column() {
    let wh = Warehouse::in_memory();
    let mut rows: Vec<_> = (0..3).map(row).collect();
    rows[2][2] = Value::Int(9);
    match wh.load_partitioned_table(&schema(), &rows, 4) {
        Err(StorageError::TypeMismatch { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "name")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(!wh.has_table("T"));
    assert!(matches!(wh.load_partitioned_table(&schema(), &rows[..1], 0), Err(StorageError::InvalidArgument(_))));
}

#[test]
fn ge_pushdown_prunes_partitions() {
    let wh = Warehouse::in_memory();
    let rows: Vec<_> = (0..10).map(row).collect();
    wh.load_partitioned_table(&schema(), &rows, 4).unwrap();
    let mut scan = wh.scan("T", Some(&ScanPredicate::ge("id", Value::Int(5))), &Projection::of(&["id"])).unwrap();
    let got: Vec<i64> = scan.by_ref().map(|r| r[0].as_i64().unwrap()).collect();
    assert_eq!(got, [5, 6, 7, 8, 9]);
    assert_eq!(scan.pruned_partitions(), 1);
}

#[test]
fn date_literal_as_text_is_coerced() {
    let wh = Warehouse::in_memory();
    wh.load_partitioned_table(&schema(), &(0..10).map(row).collect::<Vec<_>>(), 4).unwrap();
    let day = crate::value::format_date(17_007);
    let scan = wh.scan("T", Some(&ScanPredicate::eq("day", Value::text(&day))), &Projection::All).unwrap();
    assert_eq!(ids(scan), [7]);
    let scan = wh.scan("T", Some(&ScanPredicate::eq("day", Value::text("not-a-date"))), &Projection::All).unwrap();
    assert!(ids(scan).is_empty());
}

#[test]
fn unknown_table_and_column() {
    let wh = Warehouse::in_memory();
    assert!(matches!(wh.scan("nope", None, &Projection::All), Err(StorageError::UnknownTable(_))));
    wh.load_partitioned_table(&schema(), &[row(1)], 4).unwrap();
    assert!(matches!(wh.scan("T", None, &Projection::of(&["zzz"])), Err(StorageError::UnknownColumn { .. })));
}

#[test]
fn snapshot_recover_round_trip_in_memory() {
    let wh = Warehouse::in_memory();
    wh.load_partitioned_table(&schema(), &(0..6).map(row).collect::<Vec<_>>(), 4).unwrap();
    let before: Vec<_> = wh.scan("T", None, &Projection::All).unwrap().collect();
    let id = wh.snapshot().unwrap();
    wh.append_rows("T", &[row(100), row(101)]).unwrap();
    let mut other = schema();
    other.name = "U".into();
    wh.load_partitioned_table(&other, &[row(1)], 4).unwrap();
    assert_eq!(wh.row_count("T").unwrap(), 8);
    wh.recover(&id).unwrap();
    let after: Vec<_> = wh.scan("T", None, &Projection::All).unwrap().collect();
    assert_eq!(after, before);
    assert!(!wh.has_table("U"));
    assert!(matches!(wh.recover("snap-999999"), Err(StorageError::UnknownSnapshot(_))));
}

#[test]
fn snapshot_refused_during_write() {
    let wh = Warehouse::in_memory();
    let guard = wh.begin_write();
    assert!(matches!(wh.snapshot(), Err(StorageError::SnapshotDuringWrite)));
    drop(guard);
    assert!(wh.snapshot().is_ok());
}

#[test]
fn scan_sees_version_at_start() {
    let wh = Warehouse::in_memory();
    wh.load_partitioned_table(&schema(), &(0..4).map(row).collect::<Vec<_>>(), 2).unwrap();
    let scan = wh.scan("T", None, &Projection::All).unwrap();
    wh.append_rows("T", &[row(50)]).unwrap();
    assert_eq!(scan.count(), 4);
    assert_eq!(wh.scan("T", None, &Projection::All).unwrap().count(), 5);
}

#[test]
fn disk_store_persists_and_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = (0..9).map(row).collect();
    let id = {
        let wh = Warehouse::open(dir.path()).unwrap();
        wh.load_partitioned_table(&schema(), &rows, 4).unwrap();
        let id = wh.snapshot().unwrap();
        wh.append_rows("T", &[row(77)]).unwrap();
        id
    };
    assert!(dir.path().join("catalog.json").exists());
    assert!(dir.path().join("tables/T/0.seg").exists());
    let wh = Warehouse::open(dir.path()).unwrap();
    assert_eq!(wh.row_count("T").unwrap(), 10);
    assert_eq!(wh.snapshot_ids(), [id.clone()]);
    wh.recover(&id).unwrap();
    let got: Vec<_> = wh.scan("T", None, &Projection::All).unwrap().collect();
    assert_eq!(got, rows);
    let reopened = Warehouse::open(dir.path()).unwrap();
    assert_eq!(reopened.row_count("T").unwrap(), 9);
}

#[test]
fn corrupt_segment_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    {
        let wh = Warehouse::open(dir.path()).unwrap();
        wh.load_partitioned_table(&schema(), &[row(1)], 4).unwrap();
    }
    let seg = dir.path().join("tables/T/0.seg");
    let bytes = std::fs::read(&seg).unwrap();
    std::fs::write(&seg, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(Warehouse::open(dir.path()), Err(StorageError::Corrupt(_))));
}

fn arb_value(kind: Kind) -> BoxedStrategy<Value> {
    let base = match kind {
        Kind::Int64 => (-20i64..20).prop_map(Value::Int).boxed(),
        Kind::Float64 => (-20i64..20).prop_map(|x| Value::Float(x as f64 / 2.0)).boxed(),
        Kind::Text => "[ab]{0,2}".prop_map(|s| Value::text(&s)).boxed(),
        Kind::Date => (0i64..30).prop_map(|d| Value::Date(17_000 + d)).boxed(),
        Kind::Bool => any::<bool>().prop_map(Value::Bool).boxed(),
    };
    prop_oneof![1 => Just(Value::Null), 6 => base].boxed()
}

fn arb_leaf() -> BoxedStrategy<ScanPredicate> {
    let lit = |k| arb_value(k).prop_filter("non-null literal", |v| !v.is_null());
    prop_oneof![
        (lit(Kind::Int64), any::<bool>()).prop_map(|(v, ge)| if ge { ScanPredicate::ge("a", v) } else { ScanPredicate::eq("a", v) }),
        (lit(Kind::Float64), any::<bool>()).prop_map(|(v, ge)| if ge { ScanPredicate::ge("b", v) } else { ScanPredicate::eq("b", v) }),
        (lit(Kind::Int64)).prop_map(|v| ScanPredicate::ge("b", v)),
        "[ab%_]{0,3}".prop_map(|p| ScanPredicate::like("c", &p)),
        (lit(Kind::Date), any::<bool>()).prop_map(|(v, ge)| if ge { ScanPredicate::ge("d", v) } else { ScanPredicate::eq("d", v) }),
        proptest::collection::vec(lit(Kind::Int64), 0..4)
            .prop_map(|vs| ScanPredicate::InSet { column: "a".into(), values: Arc::new(vs.into_iter().collect::<HashSet<_>>()) }),
    ]
    .boxed()
}

fn arb_predicate() -> impl Strategy<Value = ScanPredicate> {
    arb_leaf().prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 1..3).prop_map(ScanPredicate::And),
            proptest::collection::vec(inner, 1..3).prop_map(ScanPredicate::Or),
        ]
    })
}

fn prop_schema() -> TableSchema {
    let col = |n: &str, k| ColumnDef { name: n.into(), kind: k, nullable: true };
    TableSchema {
        name: "P".into(),
        columns: vec![col("a", Kind::Int64), col("b", Kind::Float64), col("c", Kind::Text), col("d", Kind::Date)],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pushdown_matches_filter_after_scan(
        rows in proptest::collection::vec(
            (arb_value(Kind::Int64), arb_value(Kind::Float64), arb_value(Kind::Text), arb_value(Kind::Date))
                .prop_map(|(a, b, c, d)| vec![a, b, c, d]),
            0..40),
        pred in arb_predicate(),
        psize in 1usize..8,
    ) {
        let s = prop_schema();
        let wh = Warehouse::in_memory();
        wh.load_partitioned_table(&s, &rows, psize).unwrap();
        let pushed: Vec<_> = wh.scan("P", Some(&pred), &Projection::All).unwrap().collect();
        let filtered: Vec<_> = rows.iter().filter(|r| pred.matches_row(&s, r)).cloned().collect();
        prop_assert_eq!(pushed, filtered);
    }

    #[test]
    fn partition_sizes_sum_to_row_count(n in 0usize..50, psize in 1usize..9) {
        let wh = Warehouse::in_memory();
        let rows: Vec<_> = (0..n as i64).map(row).collect();
        wh.load_partitioned_table(&schema(), &rows, psize).unwrap();
        let parts = &wh.catalog().tables["T"].partitions;
        prop_assert_eq!(parts.iter().map(|p| p.rows).sum::<usize>(), n);
        prop_assert!(parts.iter().all(|p| p.rows <= psize && p.rows > 0));
    }
}
