//! Delimited phenotype/covariate tables: header row, comma- or tab-separated
//! (auto-detected from the header), aligned to the .fam sample order by an
//! id join.

use std::fs;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A parsed delimited table.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub separator: char,
}

impl Table {
    pub fn read<P: AsRef<Path>>(path: P) -> Result<Table> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{}: empty table", path.display())))?;
        let separator = if header_line.contains('\t') { '\t' } else { ',' };
        let headers: Vec<String> =
            header_line.split(separator).map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            let cols: Vec<String> = line.split(separator).map(|c| c.trim().to_string()).collect();
            if cols.len() != headers.len() {
                return Err(Error::Format(format!(
                    "{}: line {} has {} fields, header has {}",
                    path.display(),
                    ln + 2,
                    cols.len(),
                    headers.len()
                )));
            }
            rows.push(cols);
        }
        Ok(Table { headers, rows, separator })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in table header")))
    }

    /// Row index for each target id, joining on `id_col`. Unmatched ids are
    /// an error listing the first 10.
    pub fn align(&self, id_col: &str, target_ids: &[String]) -> Result<Vec<usize>> {
        let idc = self.column_index(id_col)?;
        let mut order = Vec::with_capacity(target_ids.len());
        let mut missing = Vec::new();
        for id in target_ids {
            match self.rows.iter().position(|r| &r[idc] == id) {
                Some(row) => order.push(row),
                None => missing.push(id.clone()),
            }
        }
        if !missing.is_empty() {
            let shown: Vec<String> = missing.iter().take(10).cloned().collect();
            return Err(Error::Data(format!(
                "{} sample id(s) missing from table (first {}: {})",
                missing.len(),
                shown.len(),
                shown.join(", ")
            )));
        }
        Ok(order)
    }

    /// Numeric column in the given row order; a non-numeric cell reports its
    /// row and column.
    pub fn numeric_column(&self, name: &str, order: &[usize]) -> Result<DVector<f64>> {
        let col = self.column_index(name)?;
        let mut out = DVector::zeros(order.len());
        for (i, &row) in order.iter().enumerate() {
            out[i] = self.rows[row][col].parse().map_err(|_| {
                Error::Data(format!(
                    "non-numeric value '{}' at table row {}, column '{}'",
                    self.rows[row][col],
                    row + 2,
                    name
                ))
            })?;
        }
        Ok(out)
    }
}
