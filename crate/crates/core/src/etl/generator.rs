//! Seeded synthetic source datasets shaped like the production farm-management
//! exports: every dataset carries all dimension tables plus the fact tables,
//! with foreign keys local to the dataset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::schema::{ConstellationSchema, DimensionDef};
use crate::storage::staging::ManifestEntry;
use crate::storage::{write_dataset_dir, RawTable, SourceManifest, StagedDataset, StorageError};
use crate::value::{date_from_ymd, format_date, format_float, month_of};

use super::EtlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceGenSpec {
    pub seed: i64,
    pub n_datasets: usize,
    /// Rows per fact table per dataset.
    pub rows_per_fact: usize,
    /// Fraction of each dimension's entities shared by every dataset.
    pub overlap_fraction: f64,
    /// Probability that a fact row gets one unresolvable foreign key.
    #[serde(default)]
    pub bad_fk_fraction: f64,
}

impl Default for SourceGenSpec {
    fn default() -> Self {
        SourceGenSpec { seed: 42, n_datasets: 29, rows_per_fact: 1000, overlap_fraction: 0.3, bad_fk_fraction: 0.0 }
    }
}

impl SourceGenSpec {
    pub fn validate(&self) -> Result<(), EtlError> {
        if self.n_datasets == 0 {
            return Err(EtlError::InvalidSpec("n_datasets must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return Err(EtlError::InvalidSpec("overlap_fraction must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.bad_fk_fraction) {
            return Err(EtlError::InvalidSpec("bad_fk_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Entities per dataset for each dimension.
pub const DIMENSION_SIZES: [(&str, usize); 19] = [
    ("Business", 8),
    ("Crop", 10),
    ("CropState", 15),
    ("Farmer", 12),
    ("Fertiliser", 8),
    ("Field", 30),
    ("Inspection", 15),
    ("Nutrient", 10),
    ("OperationTime", 60),
    ("Pest", 10),
    ("Plan", 8),
    ("Product", 10),
    ("Site", 15),
    ("Spray", 10),
    ("Soil", 12),
    ("Supplier", 6),
    ("Task", 10),
    ("Treatment", 10),
    ("WeatherStation", 5),
];

pub fn dimension_size(dim: &str) -> usize {
    DIMENSION_SIZES.iter().find(|(d, _)| *d == dim).map_or(10, |(_, n)| *n)
}

/// Number of entities of `dim` that every dataset shares.
pub fn shared_count(schema: &ConstellationSchema, dim: &str, overlap: f64) -> usize {
    let n = dimension_size(dim);
    let mut k = ((overlap * n as f64).round() as usize).min(n);
    if dim == "Fertiliser" {
        k = k.max(1);
    }
    // A shared child must reference a shared parent to stay identical.
    if let Some(d) = schema.dimension(dim) {
        for (_, parent) in schema.dimension_links(d) {
            if shared_count(schema, &parent, overlap) == 0 {
                k = 0;
            }
        }
    }
    k
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedFault {
    pub dataset_id: String,
    pub table: String,
    pub row: usize,
    pub column: String,
    pub value: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionLog {
    pub count: usize,
    pub entries: Vec<InjectedFault>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub spec: SourceGenSpec,
    pub datasets: Vec<String>,
    /// Rows per table summed over datasets.
    pub table_rows: BTreeMap<String, usize>,
    pub injected_faults: usize,
}

pub fn dataset_id(index: usize) -> String {
    format!("ds-{:03}", index + 1)
}

fn mix(seed: i64, label: &str) -> u64 {
    // FNV-1a over the label, folded with the seed through splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ (seed as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream per (table, purpose, stream); stream 0 is shared by
/// all datasets, stream d+1 belongs to dataset d.
fn substream(seed: i64, label: &str, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, label));
    rng.set_stream(stream);
    rng
}

const FARMER_FIRST: [&str; 10] = ["Aoife", "Brian", "Ciara", "Declan", "Eimear", "Fionn", "Grainne", "Hugh", "Niamh", "Padraig"];
const FARMER_LAST: [&str; 8] = ["Murphy", "Kelly", "Byrne", "Ryan", "Walsh", "Doyle", "Nolan", "Lynch"];
const CROPS: [&str; 6] = ["Wheat", "Barley", "Oats", "Potato", "Oilseed rape", "Maize"];
const FERTILISERS: [&str; 7] =
    ["Calcium ammonium nitrate", "Ammonium sulphate", "Muriate of potash", "Triple superphosphate", "Compound 10-10-20", "Lime", "Slurry"];
const FERT_GROUPS: [&str; 4] = ["Nitrogen", "Phosphate", "Potash", "Compound"];
const UNITS: [&str; 3] = ["kg", "t", "l"];
const TEXTURES: [&str; 5] = ["Clay loam", "Sandy loam", "Silt loam", "Loam", "Peat"];
const SEASON_STYLES: [fn(&str) -> String; 3] = [|s| s.to_string(), capitalize, |s| s.to_uppercase()];

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

pub fn season_of_month(month: u32) -> &'static str {
    match month {
        3..=5 => "spring",
        6..=8 => "summer",
        9..=11 => "autumn",
        _ => "winter",
    }
}

fn random_date(rng: &mut ChaCha8Rng) -> i64 {
    let start = date_from_ymd(2015, 1, 1).unwrap();
    let end = date_from_ymd(2018, 12, 31).unwrap();
    rng.gen_range(start..=end)
}

fn money(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> String {
    format_float((rng.gen_range(lo..hi) * 100.0).round() / 100.0)
}

/// One generated dimension of one dataset.
struct DimRows {
    /// Local id of entity j (entity order: shared first, then unique).
    local_id: Vec<i64>,
    table: RawTable,
}

struct EntityCtx<'a> {
    dim: &'a DimensionDef,
    j: usize,
    tag: String,
    /// Dataset index; None for shared entities.
    dataset: Option<usize>,
    /// Parent entity picked per link column.
    parents: &'a BTreeMap<String, i64>,
}

fn entity_fields(ctx: &EntityCtx<'_>, rng: &mut ChaCha8Rng) -> BTreeMap<String, String> {
    let dim = ctx.dim;
    let mut out = BTreeMap::new();
    let tag = &ctx.tag;
    for col in &dim.columns {
        let name = col.name.as_str();
        if name == dim.surrogate_key {
            continue;
        }
        if let Some(p) = ctx.parents.get(name) {
            out.insert(name.to_string(), p.to_string());
            continue;
        }
        let natural = dim.natural_key.iter().any(|n| n == name);
        let v = match (dim.name.as_str(), name) {
            ("Fertiliser", "Name") => {
                if ctx.j == 0 && ctx.dataset.is_none() {
                    "Urea".to_string()
                } else {
                    format!("{} {tag}", FERTILISERS[rng.gen_range(0..FERTILISERS.len())])
                }
            }
            ("Fertiliser", "GroupName") => FERT_GROUPS[rng.gen_range(0..FERT_GROUPS.len())].to_string(),
            ("Fertiliser", "Unit") => UNITS[rng.gen_range(0..UNITS.len())].to_string(),
            ("Farmer", "FarmerName") => format!(
                "{} {} {tag}",
                FARMER_FIRST[rng.gen_range(0..FARMER_FIRST.len())],
                FARMER_LAST[rng.gen_range(0..FARMER_LAST.len())]
            ),
            ("Crop", "CropName") => CROPS[rng.gen_range(0..CROPS.len())].to_string(),
            ("Crop", "VarietyName") => format!("Variety {tag}"),
            ("Soil", "TextureLabel") => format!("{} {tag}", TEXTURES[rng.gen_range(0..TEXTURES.len())]),
            ("CropState", "StageScale") => match ctx.dataset {
                None => ctx.j.to_string(),
                Some(d) => (1000 * (d + 1) + ctx.j).to_string(),
            },
            (_, n) if n.contains("Email") => {
                format!("{}.{}@example.ie", dim.name.to_lowercase(), tag.to_lowercase().replace(' ', ""))
            }
            _ => match col.kind {
                crate::value::Kind::Text if natural => format!("{} {tag}", dim.name),
                crate::value::Kind::Text => format!("{name} {}", rng.gen_range(1..100)),
                crate::value::Kind::Int64 => rng.gen_range(0..100).to_string(),
                crate::value::Kind::Float64 => money(rng, 0.0, 100.0),
                crate::value::Kind::Date => format_date(random_date(rng)),
                crate::value::Kind::Bool => rng.gen_bool(0.5).to_string(),
            },
        };
        // Occasional gaps in optional attributes.
        let v = if col.nullable && rng.gen_bool(0.03) { String::new() } else { v };
        out.insert(name.to_string(), v);
    }
    out
}

fn operation_time_fields(j: usize, rng: &mut ChaCha8Rng) -> BTreeMap<String, String> {
    // The first two entities fall in spring 2016 and spring 2017 so that
    // seasonal queries always have matching rows.
    let start = match j {
        0 | 1 => {
            let year = 2016 + j as i32;
            date_from_ymd(year, 3, 1).unwrap() + rng.gen_range(0..92)
        }
        _ => random_date(rng),
    };
    let end = start + rng.gen_range(0..30);
    let season = SEASON_STYLES[rng.gen_range(0..SEASON_STYLES.len())](season_of_month(month_of(start)));
    BTreeMap::from([
        ("StartDate".to_string(), format_date(start)),
        ("EndDate".to_string(), format_date(end)),
        ("Season".to_string(), season),
    ])
}

fn generate_dimension(
    spec: &SourceGenSpec,
    schema: &ConstellationSchema,
    dim: &DimensionDef,
    d: usize,
    done: &BTreeMap<String, DimRows>,
) -> DimRows {
    let n = dimension_size(&dim.name);
    let k = shared_count(schema, &dim.name, spec.overlap_fraction);
    let links = schema.dimension_links(dim);
    let mut shared_rng = substream(spec.seed, &format!("dim/{}", dim.name), 0);
    let mut own_rng = substream(spec.seed, &format!("dim/{}", dim.name), d as u64 + 1);

    let mut entities: Vec<BTreeMap<String, String>> = Vec::with_capacity(n);
    for j in 0..n {
        let shared = j < k;
        let rng = if shared { &mut shared_rng } else { &mut own_rng };
        let mut parents = BTreeMap::new();
        for (col, parent) in &links {
            let prows = &done[parent];
            let pk = shared_count(schema, parent, spec.overlap_fraction);
            let entity = if shared { j % pk.max(1) } else { rng.gen_range(0..prows.local_id.len()) };
            parents.insert(col.clone(), prows.local_id[entity]);
        }
        let tag = if shared { format!("S{j:02}") } else { format!("D{}-{j:02}", d + 1) };
        let ctx = EntityCtx { dim, j, tag, dataset: (!shared).then_some(d), parents: &parents };
        let fields =
            if dim.name == "OperationTime" { operation_time_fields(j, rng) } else { entity_fields(&ctx, rng) };
        entities.push(fields);
    }

    // Local ids are a per-dataset permutation; rows are written in id order.
    let mut order_rng = substream(spec.seed, &format!("order/{}", dim.name), d as u64 + 1);
    let mut ids: Vec<i64> = (1..=n as i64).collect();
    ids.shuffle(&mut order_rng);
    let mut by_id: Vec<usize> = (0..n).collect();
    by_id.sort_by_key(|&j| ids[j]);

    let header: Vec<String> = dim.columns.iter().map(|c| c.name.clone()).collect();
    let mut table = RawTable::new(header);
    for &j in &by_id {
        let id = ids[j].to_string();
        let row: Vec<&str> = dim
            .columns
            .iter()
            .map(|c| if c.name == dim.surrogate_key { id.as_str() } else { entities[j][&c.name].as_str() })
            .collect();
        table.push(row);
    }
    DimRows { local_id: ids, table }
}

fn measure_value(name: &str, kind: crate::value::Kind, rng: &mut ChaCha8Rng) -> String {
    match (name, kind) {
        ("appliedQuantity", _) => money(rng, 0.5, 500.0),
        ("discount", _) => money(rng, 0.0, 0.3),
        (_, crate::value::Kind::Int64) => rng.gen_range(1..100).to_string(),
        _ => money(rng, 0.0, 1000.0),
    }
}

/// Builds every source dataset in memory. Deterministic in `spec`.
pub fn generate_datasets(
    spec: &SourceGenSpec,
    schema: &ConstellationSchema,
) -> Result<(Vec<StagedDataset>, InjectionLog), EtlError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.n_datasets);
    let mut log = InjectionLog::default();
    for d in 0..spec.n_datasets {
        let id = dataset_id(d);
        let mut dims: BTreeMap<String, DimRows> = BTreeMap::new();
        for dim in schema.dimension_load_order() {
            let rows = generate_dimension(spec, schema, dim, d, &dims);
            dims.insert(dim.name.clone(), rows);
        }
        let mut tables: BTreeMap<String, RawTable> = BTreeMap::new();
        for fact in &schema.facts {
            let cols = schema.fact_columns(fact);
            let mut rng = substream(spec.seed, &format!("fact/{}", fact.name), d as u64 + 1);
            let mut fault_rng = substream(spec.seed, &format!("fault/{}", fact.name), d as u64 + 1);
            let mut table = RawTable::new(cols.iter().map(|c| c.name.clone()).collect());
            let sizes: Vec<usize> = fact.dimension_refs.iter().map(|r| dimension_size(r)).collect();
            let mut row: Vec<String> = vec![String::new(); cols.len()];
            for i in 0..spec.rows_per_fact {
                for (c, &n) in sizes.iter().enumerate() {
                    row[c] = rng.gen_range(1..=n as i64).to_string();
                }
                for (c, m) in fact.measures.iter().enumerate() {
                    row[sizes.len() + c] = measure_value(&m.name, m.kind, &mut rng);
                }
                if spec.bad_fk_fraction > 0.0 && fault_rng.gen_bool(spec.bad_fk_fraction) {
                    let c = fault_rng.gen_range(0..sizes.len());
                    let value = sizes[c] as i64 + 1 + fault_rng.gen_range(0..1000);
                    row[c] = value.to_string();
                    log.entries.push(InjectedFault {
                        dataset_id: id.clone(),
                        table: fact.name.clone(),
                        row: i,
                        column: cols[c].name.clone(),
                        value,
                    });
                }
                table.push(row.iter().map(String::as_str));
            }
            tables.insert(fact.name.clone(), table);
        }
        tables.extend(dims.into_iter().map(|(name, d)| (name, d.table)));
        let manifest = SourceManifest {
            dataset_id: id.clone(),
            tables: tables
                .iter()
                .map(|(name, t)| (name.clone(), ManifestEntry { file: format!("{name}.csv"), rows: t.len(), crc32c: 0 }))
                .collect(),
        };
        out.push(StagedDataset { dataset_id: id, tables, source_manifest: manifest, source_path: PathBuf::new() });
    }
    log.count = log.entries.len();
    Ok((out, log))
}

/// Writes `<out>/ds-NNN/` directories (CSV per table plus manifest.json),
/// and `<out>/injection_log.json` when faults were requested.
pub fn generate_synthetic_sources(
    spec: &SourceGenSpec,
    schema: &ConstellationSchema,
    out: &Path,
) -> Result<GenerationSummary, EtlError> {
    let (datasets, log) = generate_datasets(spec, schema)?;
    std::fs::create_dir_all(out).map_err(StorageError::from)?;
    let mut table_rows: BTreeMap<String, usize> = BTreeMap::new();
    let mut ids = Vec::new();
    for ds in &datasets {
        write_dataset_dir(&out.join(&ds.dataset_id), &ds.dataset_id, &ds.tables)?;
        for (name, t) in &ds.tables {
            *table_rows.entry(name.clone()).or_default() += t.len();
        }
        ids.push(ds.dataset_id.clone());
    }
    if spec.bad_fk_fraction > 0.0 {
        let bytes = serde_json::to_vec_pretty(&log).map_err(StorageError::from)?;
        std::fs::write(out.join("injection_log.json"), bytes).map_err(StorageError::from)?;
    }
    Ok(GenerationSummary { spec: spec.clone(), datasets: ids, table_rows, injected_faults: log.count })
}
