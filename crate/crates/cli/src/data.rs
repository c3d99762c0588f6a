use std::f64::consts::TAU;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use wntorus::TorusSample;

/// Numeric table read from CSV, with the header if one was present.
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn columns(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Reads a comma separated table. The first line is a header when any of
/// its fields is not a number.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut header = None;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Option<Vec<f64>> = record.iter().map(|f| f.parse::<f64>().ok()).collect();
        match parsed {
            Some(values) => rows.push(values),
            None if i == 0 => header = Some(record.iter().map(str::to_string).collect()),
            None => bail!("{}: line {} has a non-numeric field", path.display(), i + 1),
        }
    }
    if rows.is_empty() {
        bail!("{} contains no observations", path.display());
    }
    Ok(Table { header, rows })
}

/// Resolves a comma separated list of column names or zero-based indices.
pub fn resolve_columns(spec: &str, table: &Table) -> Result<Vec<usize>> {
    let width = table.columns();
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let idx = match item.parse::<usize>() {
            Ok(i) => i,
            Err(_) => table
                .header
                .as_ref()
                .and_then(|h| h.iter().position(|name| name == item))
                .with_context(|| format!("no column named '{item}'"))?,
        };
        if idx >= width {
            bail!("column {idx} out of range (the table has {width} columns)");
        }
        if out.contains(&idx) {
            bail!("column {idx} listed twice");
        }
        out.push(idx);
    }
    if out.is_empty() {
        bail!("empty column list");
    }
    Ok(out)
}

pub struct Ingested {
    pub torus: TorusSample,
    pub linear: Option<DMatrix<f64>>,
    pub warnings: Vec<String>,
}

/// Splits the table into torus and linear blocks and wraps the angles.
pub fn ingest(table: &Table, linear_columns: &[usize], degrees: bool) -> Result<Ingested> {
    let torus_columns: Vec<usize> = (0..table.columns()).filter(|c| !linear_columns.contains(c)).collect();
    if torus_columns.is_empty() {
        bail!("no torus columns left after removing the linear columns");
    }
    let mut warnings = Vec::new();
    let mut angles = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let mut out = Vec::with_capacity(torus_columns.len());
        for &c in &torus_columns {
            let raw = row[c];
            if !raw.is_finite() {
                bail!("row {}, column {c}: non-finite value {raw}", i + 1);
            }
            let v = if degrees { raw.to_radians() } else { raw };
            if !(0.0..TAU).contains(&v) {
                let wrapped = wntorus::wrap_angle(v)?.value();
                warnings.push(format!("row {}, column {c}: value {v} outside [0, 2pi) wrapped to {wrapped}", i + 1));
            }
            out.push(v);
        }
        angles.push(out);
    }
    let linear = if linear_columns.is_empty() {
        None
    } else {
        let n = table.rows.len();
        let m = DMatrix::from_fn(n, linear_columns.len(), |i, k| table.rows[i][linear_columns[k]]);
        if let Some(bad) = m.iter().find(|v| !v.is_finite()) {
            bail!("linear block contains non-finite value {bad}");
        }
        Some(m)
    };
    Ok(Ingested { torus: TorusSample::from_rows(&angles)?, linear, warnings })
}
