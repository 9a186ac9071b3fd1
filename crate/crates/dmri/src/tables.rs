//! CSV schemas. Every file has a header row, UTF-8 text and `.` decimals.
//!
//! | file            | header                                 |
//! |-----------------|----------------------------------------|
//! | report          | `method,metric,region,value`           |
//! | metric rows     | `metric,region,value`                  |
//! | regional means  | `subject,<region id>,<region id>,...`  |
//! | SCN matrix      | `region,<region id>,<region id>,...`   |

use std::io::Write;
use std::path::Path;

use dmri_core::reliability::{RegionalTable, ScnMatrix};

use crate::{Error, Result};

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Csv { path: path.to_path_buf(), reason: e.to_string() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub metric: String,
    /// Region ID, or `all` for the whole evaluation mask.
    pub region: String,
    pub value: f64,
}

pub fn write_report<W: Write>(out: W, rows: &[ReportRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "metric", "region", "value"])?;
    for r in rows {
        w.write_record([r.method.as_str(), r.metric.as_str(), r.region.as_str(), &r.value.to_string()])?;
    }
    w.flush()
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 4 {
            return Err(csv_err(path, format!("expected 4 fields, found {}", rec.len())));
        }
        let value = rec[3].parse().map_err(|_| Error::NonNumeric { file: path.display().to_string(), token: rec[3].to_string() })?;
        rows.push(ReportRow { method: rec[0].into(), metric: rec[1].into(), region: rec[2].into(), value });
    }
    Ok(rows)
}

/// `metric,region,value` rows as printed by the metric subcommands.
pub fn write_metric_rows<W: Write>(out: W, rows: &[(String, String, f64)]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "region", "value"])?;
    for (m, r, v) in rows {
        w.write_record([m.as_str(), r.as_str(), &v.to_string()])?;
    }
    w.flush()
}

fn parse_header_ids(path: &Path, header: &csv::StringRecord, first: &str) -> Result<Vec<u32>> {
    if header.get(0) != Some(first) {
        return Err(csv_err(path, format!("first header column must be {first:?}")));
    }
    header
        .iter()
        .skip(1)
        .map(|t| t.trim().parse::<u32>().map_err(|_| csv_err(path, format!("region id {t:?} is not an integer"))))
        .collect()
}

fn parse_row(path: &Path, rec: &csv::StringRecord, width: usize) -> Result<(String, Vec<f64>)> {
    if rec.len() != width + 1 {
        return Err(csv_err(path, format!("row has {} fields, expected {}", rec.len(), width + 1)));
    }
    let values = rec
        .iter()
        .skip(1)
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::NonNumeric { file: path.display().to_string(), token: t.to_string() }))
        .collect::<Result<Vec<f64>>>()?;
    Ok((rec[0].to_string(), values))
}

/// Regional means, one row per subject. Returns subject names and the table.
pub fn read_regional_table(path: impl AsRef<Path>) -> Result<(Vec<String>, RegionalTable)> {
    let path = path.as_ref();
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let regions = parse_header_ids(path, rd.headers().map_err(|e| csv_err(path, e))?, "subject")?;
    let mut names = Vec::new();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let (name, values) = parse_row(path, &rec.map_err(|e| csv_err(path, e))?, regions.len())?;
        names.push(name);
        rows.push(values);
    }
    Ok((names, RegionalTable { regions, rows }))
}

pub fn write_regional_table<W: Write>(out: W, names: &[String], table: &RegionalTable) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject".to_string()];
    header.extend(table.regions.iter().map(u32::to_string));
    w.write_record(&header)?;
    for (name, row) in names.iter().zip(&table.rows) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()
}

/// Square correlation matrix. The subject count is not stored and reads
/// back as zero.
pub fn read_scn(path: impl AsRef<Path>) -> Result<ScnMatrix> {
    let path = path.as_ref();
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let regions = parse_header_ids(path, rd.headers().map_err(|e| csv_err(path, e))?, "region")?;
    let mut values = Vec::with_capacity(regions.len() * regions.len());
    let mut count = 0;
    for rec in rd.records() {
        let (id, row) = parse_row(path, &rec.map_err(|e| csv_err(path, e))?, regions.len())?;
        if id.trim().parse::<u32>().ok() != regions.get(count).copied() {
            return Err(csv_err(path, format!("row {count} is labelled {id:?}, expected region {:?}", regions.get(count))));
        }
        values.extend(row);
        count += 1;
    }
    if count != regions.len() {
        return Err(csv_err(path, format!("{count} rows for {} regions", regions.len())));
    }
    Ok(ScnMatrix { regions, subjects: 0, values })
}

pub fn write_scn<W: Write>(out: W, m: &ScnMatrix) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["region".to_string()];
    header.extend(m.regions.iter().map(u32::to_string));
    w.write_record(&header)?;
    for (i, id) in m.regions.iter().enumerate() {
        let mut rec = vec![id.to_string()];
        rec.extend((0..m.size()).map(|j| m.get(i, j).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()
}
