use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Column-named table read from CSV. Cells are kept as text and parsed on use,
/// so a cluster column may hold arbitrary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<String>>,
    rows: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "NaN" | "nan" | ".")
}

impl Dataset {
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if names.is_empty() {
            return Err(Error::Data("no columns".into()));
        }
        let mut columns = vec![Vec::new(); names.len()];
        let mut rows = 0;
        for record in rdr.records() {
            let record = record?;
            for (col, cell) in columns.iter_mut().zip(record.iter()) {
                col.push(cell.to_string());
            }
            rows += 1;
        }
        Ok(Self { names, columns, rows })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.1.len());
        if columns.iter().any(|c| c.1.len() != rows) {
            return Err(Error::Dimension("columns have different lengths".into()));
        }
        let (names, columns) = columns
            .into_iter()
            .map(|(name, vals)| (name, vals.iter().map(|v| format!("{v:e}")).collect()))
            .unzip();
        Ok(Self { names, columns, rows })
    }

    /// Adds or replaces a text column (e.g. cluster labels).
    pub fn with_labels(mut self, name: &str, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.rows {
            return Err(Error::Dimension(format!("{} labels for {} rows", labels.len(), self.rows)));
        }
        match self.names.iter().position(|n| n == name) {
            Some(i) => self.columns[i] = labels,
            None => {
                self.names.push(name.to_string());
                self.columns.push(labels);
            }
        }
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn raw(&self, name: &str) -> Result<&[String]> {
        let i = self.names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        Ok(&self.columns[i])
    }

    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        self.raw(name)?
            .iter()
            .enumerate()
            .map(|(row, cell)| {
                if is_missing(cell) {
                    return Err(Error::MissingValue { column: name.to_string(), row: row + 1 });
                }
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("column `{name}` row {}: `{cell}` is not a number", row + 1)))
            })
            .collect()
    }

    pub fn labels(&self, name: &str) -> Result<Vec<String>> {
        self.raw(name)?
            .iter()
            .enumerate()
            .map(|(row, cell)| {
                if is_missing(cell) {
                    Err(Error::MissingValue { column: name.to_string(), row: row + 1 })
                } else {
                    Ok(cell.trim().to_string())
                }
            })
            .collect()
    }
}
