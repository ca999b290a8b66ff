pub mod etl;
pub mod schema;
pub mod value;
pub mod storage;
pub mod query;
pub mod olap;
pub mod router;
pub mod bench;
