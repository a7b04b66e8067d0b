use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::CliError;

/// A numeric table read from CSV, with an optional leading date column.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub dates: Option<Vec<String>>,
    pub values: Array2<f64>,
}

fn is_date_header(h: &str) -> bool {
    matches!(
        h.trim().to_ascii_lowercase().as_str(),
        "date" | "time" | "timestamp" | "datetime" | "day"
    )
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim().to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null" | "n/a")
}

impl Dataset {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader<R: io::Read>(reader: R, source: &str) -> Result<Self, CliError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::parse(source, 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.is_empty() {
            return Err(CliError::parse(source, 1, "no columns"));
        }
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(i + 2, |p| p.line() as usize);
                CliError::parse(source, line, e.to_string())
            })?;
            let line = rec.position().map_or(i + 2, |p| p.line() as usize);
            records.push((line, rec));
        }
        if records.is_empty() {
            return Err(CliError::parse(source, 2, "no data rows"));
        }
        let has_date = is_date_header(&headers[0])
            || headers.len() > 1 && records[0].1.get(0).is_some_and(|v| !is_missing(v) && v.parse::<f64>().is_err());
        let first = usize::from(has_date);
        let columns: Vec<String> = headers[first..].to_vec();
        if columns.is_empty() {
            return Err(CliError::parse(source, 1, "no numeric columns"));
        }
        let d = columns.len();
        let mut values = Vec::with_capacity(records.len() * d);
        let mut dates = has_date.then(Vec::new);
        let mut missing = Vec::new();
        for (line, rec) in &records {
            if rec.len() != headers.len() {
                return Err(CliError::parse(
                    source,
                    *line,
                    format!("expected {} fields, found {}", headers.len(), rec.len()),
                ));
            }
            if let Some(ds) = dates.as_mut() {
                ds.push(rec[0].to_string());
            }
            let mut row_missing = false;
            for (j, field) in rec.iter().skip(first).enumerate() {
                if is_missing(field) {
                    row_missing = true;
                    values.push(f64::NAN);
                    continue;
                }
                let v: f64 = field.parse().map_err(|_| {
                    CliError::parse(source, *line, format!("column '{}': cannot parse '{field}' as a number", columns[j]))
                })?;
                if !v.is_finite() {
                    return Err(CliError::parse(source, *line, format!("column '{}': value is not finite", columns[j])));
                }
                values.push(v);
            }
            if row_missing {
                missing.push(*line);
            }
        }
        if !missing.is_empty() {
            let shown: Vec<String> = missing.iter().take(20).map(|l| l.to_string()).collect();
            let more = if missing.len() > 20 {
                format!(" and {} more", missing.len() - 20)
            } else {
                String::new()
            };
            return Err(CliError::parse(
                source,
                missing[0],
                format!("missing values on lines {}{more}", shown.join(", ")),
            ));
        }
        let values = Array2::from_shape_vec((records.len(), d), values).expect("row lengths checked");
        Ok(Dataset { columns, dates, values })
    }
}

/// Writes a matrix as CSV with the given header.
pub fn write_matrix<W: Write>(out: W, header: &[String], m: &Array2<f64>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(CliError::csv)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(CliError::csv)?;
    }
    w.flush().map_err(|e| CliError::Io {
        path: "<output>".into(),
        message: e.to_string(),
    })
}

pub fn default_columns(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}
