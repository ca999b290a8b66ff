//! Partition file format.
//!
//! ```text
//! magic    8 bytes  "AGRISEG1"
//! u32 LE   header length, then a UTF-8 JSON header
//!          {"table", "partition_id", "rows", "columns": [{"name", "kind"}]}
//! per column, in header order:
//!   u64 LE  payload length
//!   payload null bitmap (ceil(rows/8) bytes, bit set = null), then values:
//!           int64/date: i64 LE; float64: f64 LE; bool: u8; text: u32 LE length + bytes
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::value::Kind;

use super::column::{ColumnData, ColumnSegment, NullMask};
use super::table::Partition;

const MAGIC: &[u8; 8] = b"AGRISEG1";

#[derive(Serialize, Deserialize)]
struct Header {
    table: String,
    partition_id: u32,
    rows: usize,
    columns: Vec<HeaderColumn>,
}

#[derive(Serialize, Deserialize)]
struct HeaderColumn {
    name: String,
    kind: Kind,
}

pub fn encode(p: &Partition, table: &str) -> Vec<u8> {
    let header = Header {
        table: table.to_string(),
        partition_id: p.id,
        rows: p.rows,
        columns: p.segments.iter().map(|s| HeaderColumn { name: s.column.clone(), kind: s.values.kind() }).collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + p.rows * p.segments.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for seg in &p.segments {
        let mut payload = seg.null_mask.to_bytes();
        match &seg.values {
            ColumnData::Int(v) | ColumnData::Date(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
            ColumnData::Float(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
            ColumnData::Bool(v) => payload.extend(v.iter().map(|b| *b as u8)),
            ColumnData::Text(v) => {
                for s in v {
                    payload.extend_from_slice(&(s.len() as u32).to_le_bytes());
                    payload.extend_from_slice(s.as_bytes());
                }
            }
        }
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or("truncated segment file")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a partition file; returns the table name with the partition.
pub fn decode(buf: &[u8]) -> Result<(String, Partition), String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| format!("bad header: {e}"))?;
    let n = header.rows;
    let mut segments = Vec::with_capacity(header.columns.len());
    for col in &header.columns {
        let len = r.u64()? as usize;
        let mut p = Reader { buf: r.take(len)?, pos: 0 };
        let nulls = NullMask::from_bytes(p.take(n.div_ceil(8))?, n);
        let values = match col.kind {
            Kind::Int64 | Kind::Date => {
                let raw = p.take(n * 8)?;
                let v: Vec<i64> = raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect();
                if col.kind == Kind::Int64 {
                    ColumnData::Int(v)
                } else {
                    ColumnData::Date(v)
                }
            }
            Kind::Float64 => {
                let raw = p.take(n * 8)?;
                ColumnData::Float(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            Kind::Bool => ColumnData::Bool(p.take(n)?.iter().map(|b| *b != 0).collect()),
            Kind::Text => {
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    let l = p.u32()? as usize;
                    let s = std::str::from_utf8(p.take(l)?).map_err(|_| "invalid UTF-8 in text column")?;
                    v.push(Arc::<str>::from(s));
                }
                ColumnData::Text(v)
            }
        };
        if p.pos != len {
            return Err(format!("column {} has {} trailing bytes", col.name, len - p.pos));
        }
        segments.push(ColumnSegment::new(&header.table, &col.name, header.partition_id, values, nulls));
    }
    if r.pos != buf.len() {
        return Err("trailing bytes after last column".into());
    }
    Ok((header.table, Partition { id: header.partition_id, rows: n, segments }))
}
