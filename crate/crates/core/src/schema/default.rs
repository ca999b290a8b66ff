use crate::value::Kind;

use super::{ColumnDef, ConstellationSchema, DimensionDef, FactDef, HierarchyDef, LevelDef, LevelDerive};

const I: Kind = Kind::Int64;
const F: Kind = Kind::Float64;
const T: Kind = Kind::Text;
const D: Kind = Kind::Date;
const B: Kind = Kind::Bool;

// (name, natural key, supports, columns). Column names are kept exactly as
// the source data dictionary spells them, typos included.
type DimSpec = (&'static str, &'static [&'static str], Option<&'static str>, &'static [(&'static str, Kind)]);

const DIMENSIONS: [DimSpec; 19] = [
    (
        "Business",
        &["Name", "Email"],
        None,
        &[("BusinessID", I), ("Name", T), ("Address", T), ("Phone", T), ("Mobile", T), ("Email", T)],
    ),
    (
        "Crop",
        &["CropName", "VarietyName"],
        None,
        &[
            ("CropID", I),
            ("CropName", T),
            ("VarietyID", I),
            ("VarietyName", T),
            ("EstYield", F),
            ("SeasontSart", D),
            ("SeasonEnd", D),
            ("BbchScale", I),
            ("ScientificName", T),
            ("HarvestEquipment", T),
            ("EquipmentWeight", F),
        ],
    ),
    (
        "CropState",
        &["CropID", "StageScale"],
        Some("Crop"),
        &[
            ("CropStateID", I),
            ("CropID", I),
            ("StageScale", I),
            ("Height", F),
            ("MajorStage", I),
            ("MinStage", I),
            ("MaxStage", I),
            ("Diameter", F),
            ("MinHeight", F),
            ("MaxHeight", F),
            ("CropCoveragePercent", F),
        ],
    ),
    (
        "Farmer",
        &["FarmerName", "Email"],
        None,
        &[("FarmerID", I), ("FarmerName", T), ("Address", T), ("Phone", T), ("Mobile", T), ("Email", T)],
    ),
    (
        "Fertiliser",
        &["Name"],
        None,
        &[("FertiliserID", I), ("Name", T), ("Unit", T), ("Status", B), ("Description", T), ("GroupName", T)],
    ),
    (
        "Field",
        &["SiteID", "FieldName"],
        None,
        &[
            ("FieldID", I),
            ("FieldName", T),
            ("SiteID", I),
            ("Reference", T),
            ("Block", T),
            ("Area", F),
            ("AreaUnit", T),
            ("WorkingArea", F),
            ("WorkingAreaUnit", T),
            ("FieldGPS", T),
            ("Notes", T),
        ],
    ),
    (
        "Inspection",
        &["CropID", "Description", "Date"],
        Some("Crop"),
        &[
            ("InspectionID", I),
            ("CropID", I),
            ("Description", T),
            ("ProblemType", T),
            ("Severity", I),
            ("ProblemNotes", T),
            ("AreaValue", F),
            ("AreaUnit", T),
            ("Order", I),
            ("Date", D),
            ("Notes", T),
            ("GrowthStage", T),
        ],
    ),
    (
        "Nutrient",
        &["NutrientName", "Date"],
        None,
        &[("NutrientID", I), ("NutrientName", T), ("Date", D), ("Quantity", F)],
    ),
    (
        "OperationTime",
        &["StartDate", "EndDate", "Season"],
        None,
        &[("OperationTimeID", I), ("StartDate", D), ("EndDate", D), ("Season", T)],
    ),
    (
        "Pest",
        &["CommonName", "ScientificName"],
        None,
        &[
            ("PestID", I),
            ("CommonName", T),
            ("ScientificName", T),
            ("PestType", T),
            ("Description", T),
            ("Density", F),
            ("MinStage", I),
            ("MaxStage", I),
            ("Coverage", F),
            ("CoverageUnit", T),
        ],
    ),
    (
        "Plan",
        &["PlanName", "RegistrationNo"],
        None,
        &[
            ("PlanID", I),
            ("PlanName", T),
            ("PlanNumber", I),
            ("RegistrationNo", T),
            ("ProductName", T),
            ("ProductRate", F),
            ("Date", D),
            ("WaterVolume", F),
        ],
    ),
    (
        "Product",
        &["ProductName", "GroupName"],
        None,
        &[("ProductID", I), ("ProductName", T), ("GroupName", T)],
    ),
    (
        "Site",
        &["FarmerID", "SiteName"],
        Some("Field"),
        &[
            ("SiteID", I),
            ("FarmerID", I),
            ("SiteName", T),
            ("Reference", T),
            ("Country", T),
            ("AddressName", T),
            ("AddressTown", T),
            ("PostalCode", T),
            ("GPS", T),
            ("Created", D),
            ("CreatedBy", T),
        ],
    ),
    (
        "Spray",
        &["SprayProductName", "AppliedDate"],
        None,
        &[
            ("SprayID", I),
            ("SprayProductName", T),
            ("ProductRate", F),
            ("AppliedArea", F),
            ("AppliedDate", D),
            ("WaterVolume", F),
            ("VolumeUnit", T),
            ("ConfirmDuration", F),
            ("ConfirmWindSPeed", F),
            ("ConfirmDirection", T),
            ("ConfirmTemperature", F),
            ("ConfirmHumidity", F),
            ("ActivityType", T),
        ],
    ),
    (
        "Soil",
        &["TextureLabel", "TestDate"],
        None,
        &[
            ("SoilID", I),
            ("PH", F),
            ("Phosphorus", F),
            ("Potassium", F),
            ("Magnesium", F),
            ("Calcium", F),
            ("CEC", F),
            ("Silt", F),
            ("Clay", F),
            ("Sand", F),
            ("TextureLabel", T),
            ("TestDate", D),
        ],
    ),
    (
        "Supplier",
        &["SupplierName"],
        None,
        &[
            ("SupplierID", I),
            ("SupplierName", T),
            ("SupplierContactName", T),
            ("Address", T),
            ("ContactPhone", T),
            ("ContactMobile", T),
            ("ContactEmail", T),
        ],
    ),
    (
        "Task",
        &["TaskDesc", "TaskDate"],
        None,
        &[
            ("TaskID", I),
            ("TaskDesc", T),
            ("TaskStatus", T),
            ("TaskDate", D),
            ("TaskInterval", I),
            ("CompletedDate", D),
            ("AppCode", T),
        ],
    ),
    (
        "Treatment",
        &["TreatmentName", "LotCode"],
        None,
        &[
            ("TreatmentID", I),
            ("TreatmentName", T),
            ("FormType", T),
            ("LotCode", T),
            ("Rate", F),
            ("ApplCode", T),
            ("LevlNo", I),
            ("Type", T),
            ("Description", T),
            ("ApplDesc", T),
            ("TreatmentComment", T),
        ],
    ),
    (
        "WeatherStation",
        &["StationName", "MeasureDate"],
        None,
        &[
            ("WeatherStationID", I),
            ("StationName", T),
            ("MeasureDate", D),
            ("AirTemperature", F),
            ("SoilTemperature", F),
            ("StationReadingBatch", I),
        ],
    ),
];

const FACTS: [(&str, &[&str], &[(&str, Kind)]); 3] = [
    (
        "FieldFact",
        &[
            "Crop",
            "Field",
            "Fertiliser",
            "Nutrient",
            "OperationTime",
            "Pest",
            "Plan",
            "Spray",
            "Soil",
            "Task",
            "Treatment",
            "WeatherStation",
        ],
        &[
            ("appliedQuantity", F),
            ("appliedCost", F),
            ("areaTreated", F),
            ("yieldEstimate", F),
            ("durationHours", I),
            ("waterVolume", F),
        ],
    ),
    (
        "Order",
        &["Farmer", "Supplier", "Product", "OperationTime"],
        &[
            ("quantityOrdered", I),
            ("unitPrice", F),
            ("totalCost", F),
            ("discount", F),
            ("deliveryDays", I),
            ("taxAmount", F),
        ],
    ),
    (
        "Sale",
        &["Farmer", "Business", "Crop", "OperationTime"],
        &[("quantitySold", I), ("unitPrice", F), ("revenue", F), ("margin", F), ("discount", F)],
    ),
];

/// The fixed agricultural constellation: 3 facts sharing 16 of 19
/// dimensions, plus the time, location and crop hierarchies.
pub fn build_default_schema() -> ConstellationSchema {
    let surrogate = |name: &str| format!("{name}ID");
    let all_keys: Vec<String> = DIMENSIONS.iter().map(|(n, ..)| surrogate(n)).collect();

    let dimensions = DIMENSIONS
        .iter()
        .map(|(name, natural, supports, cols)| {
            let key = surrogate(name);
            let columns = cols
                .iter()
                .map(|(c, kind)| {
                    let is_key = all_keys.iter().any(|k| k == c);
                    let required = is_key || natural.contains(c);
                    ColumnDef::new(c, *kind, !required)
                })
                .collect();
            DimensionDef {
                name: name.to_string(),
                surrogate_key: key,
                natural_key: natural.iter().map(|s| s.to_string()).collect(),
                columns,
                supports: supports.map(str::to_string),
            }
        })
        .collect();

    let facts = FACTS
        .iter()
        .map(|(name, dims, measures)| FactDef {
            name: name.to_string(),
            dimension_refs: dims.iter().map(|s| s.to_string()).collect(),
            measures: measures.iter().map(|(m, k)| ColumnDef::new(m, *k, false)).collect(),
        })
        .collect();

    let level = |name: &str, dim: &str, col: &str, derive: LevelDerive| LevelDef {
        name: name.into(),
        dimension: dim.into(),
        column: col.into(),
        derive,
        year_column: (derive == LevelDerive::YearQualified).then(|| "StartDate".to_string()),
    };
    let hierarchies = vec![
        HierarchyDef {
            name: "time".into(),
            levels: vec![
                level("day", "OperationTime", "StartDate", LevelDerive::Identity),
                level("month", "OperationTime", "StartDate", LevelDerive::Month),
                level("season", "OperationTime", "Season", LevelDerive::YearQualified),
                level("year", "OperationTime", "StartDate", LevelDerive::Year),
            ],
        },
        HierarchyDef {
            name: "location".into(),
            levels: vec![
                level("field", "Field", "FieldID", LevelDerive::Identity),
                level("site", "Site", "SiteID", LevelDerive::Identity),
                level("farmer", "Farmer", "FarmerID", LevelDerive::Identity),
            ],
        },
        HierarchyDef {
            name: "crop".into(),
            levels: vec![
                level("variety", "Crop", "VarietyName", LevelDerive::Identity),
                level("crop", "Crop", "CropName", LevelDerive::Identity),
            ],
        },
    ];

    ConstellationSchema { facts, dimensions, hierarchies }
}
