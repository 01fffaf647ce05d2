//! CSV input and output of datasets.

use std::fs::File;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sievi::Dataset;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    pub standardize: bool,
    pub drop_zero_response: bool,
}

/// Column means and sample standard deviations used to z-score predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    pub fn estimate(x: &Array2<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(CliError::Usage("--standardize needs at least two rows".into()));
        }
        let mut means = Vec::with_capacity(x.ncols());
        let mut sds = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            if !(var > 0.0) {
                return Err(sievi::Error::InvalidData("cannot standardize a constant column".into()).into());
            }
            means.push(mean);
            sds.push(var.sqrt());
        }
        Ok(Self { means, sds })
    }

    pub fn apply(&self, x: &mut Array2<f64>) {
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.means[j]) / self.sds[j]);
        }
    }
}

/// Raw numeric table: the selected columns in file order, one row per record.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Reads `columns` (or every column when `None`) as finite numbers, after
/// checking that the header holds every name in `required`.
pub fn read_table(path: &Path, columns: Option<&[String]>, required: &[&str]) -> Result<Table> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if let Some(name) = required.iter().find(|r| !header.iter().any(|h| h == *r)) {
        return Err(CliError::MissingColumn(name.to_string()));
    }
    let wanted: Vec<String> = match columns {
        Some(c) => c.to_vec(),
        None => header.clone(),
    };
    let positions = wanted
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::MissingColumn(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = positions
            .iter()
            .zip(&wanted)
            .map(|(&pos, name)| {
                let cell = record.get(pos).unwrap_or("");
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(CliError::NonNumericCell {
                        row: r + 1,
                        column: name.clone(),
                        value: cell.to_string(),
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { columns: wanted, rows })
}

#[derive(Debug)]
pub struct Ingested {
    pub data: Dataset,
    pub standardization: Option<Standardization>,
    pub dropped: usize,
}

/// Response column `response`, every other column a predictor.
pub fn ingest_csv(path: &Path, response: &str, opts: &IngestOptions) -> Result<Ingested> {
    let table = read_table(path, None, &[response])?;
    let y_col = table
        .columns
        .iter()
        .position(|c| c == response)
        .ok_or_else(|| CliError::MissingColumn(response.to_string()))?;
    let names: Vec<String> = table.columns.iter().filter(|c| *c != response).cloned().collect();
    if names.is_empty() {
        return Err(sievi::Error::InvalidData("no predictor columns".into()).into());
    }
    let kept: Vec<&Vec<f64>> = table
        .rows
        .iter()
        .filter(|row| !opts.drop_zero_response || row[y_col] > 0.0)
        .collect();
    let dropped = table.rows.len() - kept.len();
    if kept.is_empty() {
        return Err(CliError::EmptyAfterFiltering);
    }
    let p = names.len();
    let mut x = Array2::zeros((kept.len(), p));
    let mut y = Vec::with_capacity(kept.len());
    for (i, row) in kept.iter().enumerate() {
        y.push(row[y_col]);
        let mut j = 0;
        for (c, v) in row.iter().enumerate() {
            if c != y_col {
                x[[i, j]] = *v;
                j += 1;
            }
        }
    }
    let standardization = if opts.standardize {
        let s = Standardization::estimate(&x)?;
        s.apply(&mut x);
        Some(s)
    } else {
        None
    };
    Ok(Ingested {
        data: Dataset::new(y, x, names)?,
        standardization,
        dropped,
    })
}

/// Covariates for prediction, matched by name and transformed like the fit.
pub fn read_covariates(
    path: &Path,
    names: &[String],
    standardization: Option<&Standardization>,
) -> Result<Array2<f64>> {
    let table = read_table(path, Some(names), &[])?;
    if table.rows.is_empty() {
        return Err(CliError::EmptyAfterFiltering);
    }
    let mut x = Array2::zeros((table.rows.len(), names.len()));
    for (i, row) in table.rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[[i, j]] = *v;
        }
    }
    if let Some(s) = standardization {
        s.apply(&mut x);
    }
    Ok(x)
}

/// Covariate columns followed by the response column `y`.
pub fn dataset_csv(data: &Dataset) -> String {
    let mut out = data.names().join(",");
    out.push_str(",y\n");
    for i in 0..data.n() {
        for v in data.row(i) {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", data.y()[i]));
    }
    out
}
