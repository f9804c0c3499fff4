//! CSV readers shared by the dataset loaders and the analysis commands.

use std::collections::HashMap;
use std::io::Read;

use crate::error::{Error, Result};

/// One observation of a long-format clustered dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRow {
    /// 1-based line number in the source file (the header is line 1).
    pub line: usize,
    pub cluster: String,
    pub x: f64,
    pub y: f64,
    /// Values of the requested extra columns, in request order.
    pub extras: Vec<f64>,
}

fn parse_f64(field: &str, column: &str, line: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column `{column}`: cannot parse `{field}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column `{column}`: value `{field}` is not finite"),
        });
    }
    Ok(v)
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
}

/// Reads `cluster,x,y` (plus any `extra` columns) from a headed CSV. Other
/// columns, such as `j`, are ignored.
pub fn read_long_rows<R: Read>(input: R, extra: &[&str]) -> Result<Vec<LongRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let ci = column_index(&headers, "cluster")?;
    let xi = column_index(&headers, "x")?;
    let yi = column_index(&headers, "y")?;
    let ei = extra
        .iter()
        .map(|name| column_index(&headers, name))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let get = |idx: usize, name: &str| {
            record.get(idx).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field `{name}`"),
            })
        };
        let cluster = get(ci, "cluster")?.trim().to_string();
        if cluster.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty cluster label".into(),
            });
        }
        let x = parse_f64(get(xi, "x")?, "x", line)?;
        let y = parse_f64(get(yi, "y")?, "y", line)?;
        let extras = ei
            .iter()
            .zip(extra)
            .map(|(&idx, name)| parse_f64(get(idx, name)?, name, line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(LongRow {
            line,
            cluster,
            x,
            y,
            extras,
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

/// Groups row indices by cluster label, clusters in order of first appearance.
pub fn group_rows(rows: &[LongRow]) -> Vec<(String, Vec<usize>)> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (k, row) in rows.iter().enumerate() {
        match index.get(row.cluster.as_str()) {
            Some(&g) => groups[g].1.push(k),
            None => {
                index.insert(row.cluster.as_str(), groups.len());
                groups.push((row.cluster.clone(), vec![k]));
            }
        }
    }
    groups
}

/// A numeric table with named columns, used as ANOVA input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a column. All columns must have the same length.
    pub fn with_column(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if let Some(first) = self.columns.first() {
            if first.len() != values.len() {
                return Err(Error::invalid("table columns must have equal lengths"));
            }
        }
        self.names.push(name.into());
        self.columns.push(values);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.columns[k].as_slice())
            .ok_or_else(|| Error::invalid(format!("no column named `{name}`")))
    }

    /// Reads a headed CSV of numbers. Non-numeric columns are skipped.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for (k, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse {
                line: k + 2,
                message: e.to_string(),
            })?;
            if record.len() != headers.len() {
                return Err(Error::Parse {
                    line: k + 2,
                    message: format!("expected {} fields, got {}", headers.len(), record.len()),
                });
            }
            for (col, field) in raw.iter_mut().zip(record.iter()) {
                col.push(field.trim().to_string());
            }
        }
        let mut table = Table::new();
        for (name, values) in headers.into_iter().zip(raw) {
            let parsed: std::result::Result<Vec<f64>, _> = values.iter().map(|v| v.parse::<f64>()).collect();
            if let Ok(parsed) = parsed {
                table = table.with_column(name, parsed)?;
            }
        }
        Ok(table)
    }
}
