use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Candidates × examples score table used to pick a proxy benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMatrix {
    rows: Vec<String>,
    cols: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl CalibrationMatrix {
    pub fn new(rows: Vec<String>, cols: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != rows.len() {
            return Err(Error::config(format!(
                "{} row ids for {} rows",
                rows.len(),
                values.len()
            )));
        }
        for (i, r) in values.iter().enumerate() {
            if r.len() != cols.len() {
                return Err(Error::config(format!(
                    "row {i} has {} entries, expected {}",
                    r.len(),
                    cols.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("row {i} contains a non-finite score")));
            }
        }
        Ok(CalibrationMatrix { rows, cols, values })
    }

    /// Matrix with generated ids `r0..` and `x0..`.
    pub fn from_values(values: Vec<Vec<f64>>) -> Result<Self> {
        let m = values.len();
        let n = values.first().map_or(0, Vec::len);
        CalibrationMatrix::new(
            (0..m).map(|i| format!("r{i}")).collect(),
            (0..n).map(|j| format!("x{j}")).collect(),
            values,
        )
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn n(&self) -> usize {
        self.cols.len()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.rows
    }

    pub fn col_ids(&self) -> &[String] {
        &self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    /// Per-row mean over all columns.
    pub fn full_means(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    }

    /// Per-row mean over `subset`, summed in ascending column order.
    pub fn subset_means(&self, subset: &[usize]) -> Vec<f64> {
        let mut cols = subset.to_vec();
        cols.sort_unstable();
        self.values
            .iter()
            .map(|r| cols.iter().map(|&j| r[j]).sum::<f64>() / cols.len() as f64)
            .collect()
    }

    /// max − min over every entry.
    pub fn global_range(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in self.values.iter().flatten() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        if lo.is_finite() {
            hi - lo
        } else {
            0.0
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> CalibrationMatrix {
        CalibrationMatrix {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            cols: self.cols.clone(),
            values: idx.iter().map(|&i| self.values[i].clone()).collect(),
        }
    }

    /// Read a delimited table: header `candidate,<example ids...>`, one row per candidate.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::config(format!("calibration table header: {e}")))?
            .clone();
        let cols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::config(format!("calibration table row {line}: {e}")))?;
            let mut it = rec.iter();
            rows.push(it.next().unwrap_or_default().to_string());
            let row = it
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        Error::config(format!("calibration table row {line}: bad number {s:?}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            values.push(row);
        }
        CalibrationMatrix::new(rows, cols, values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::config(format!("writing calibration table: {e}"));
        let mut header = vec!["candidate".to_string()];
        header.extend(self.cols.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (id, row) in self.rows.iter().zip(&self.values) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}
