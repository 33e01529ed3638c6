//! Header-row CSV tables with one integer label column.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub label_column: String,
    /// Feature columns in order; `None` takes every non-label column.
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
    /// Defaults to `max label + 1`.
    #[serde(default)]
    pub class_count: Option<usize>,
    #[serde(default = "default_true")]
    pub scale: bool,
}

fn default_true() -> bool {
    true
}

impl CsvSchema {
    pub fn with_label(label_column: impl Into<String>) -> Self {
        CsvSchema {
            label_column: label_column.into(),
            feature_columns: None,
            class_count: None,
            scale: true,
        }
    }
}

/// Per-feature min-max scaling fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(inputs: &Matrix) -> Self {
        let d = inputs.cols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in inputs.iter_rows() {
            for (k, &v) in row.iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        MinMaxScaler { min, max }
    }

    /// Values outside the fitted range map outside `[0, 1]`; nothing is clipped.
    /// Constant features map to 0.
    pub fn transform(&self, inputs: &mut Matrix) {
        for i in 0..inputs.rows() {
            for (k, v) in inputs.row_mut(i).iter_mut().enumerate() {
                let span = self.max[k] - self.min[k];
                *v = if span > 0.0 { (*v - self.min[k]) / span } else { 0.0 };
            }
        }
    }
}

/// Loads a CSV table. With `scaler = None` a scaler is fitted on this file
/// (the training split); pass the returned scaler when loading validation data.
pub fn load_csv(
    path: &Path,
    schema: &CsvSchema,
    split: Split,
    scaler: Option<&MinMaxScaler>,
) -> Result<(Dataset, MinMaxScaler)> {
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(&name, e))?;
    let headers = reader.headers().map_err(|e| csv_error(&name, e))?.clone();
    let column = |c: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| Error::format(&name, format!("missing column '{c}'")))
    };
    let label_col = column(&schema.label_column)?;
    let feature_cols: Vec<usize> = match &schema.feature_columns {
        Some(cols) => cols.iter().map(|c| column(c)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&k| k != label_col).collect(),
    };

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(&name, e))?;
        let row = r + 1;
        let cell = |k: usize| -> Result<f64> {
            let raw = record.get(k).unwrap_or("");
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::format(
                    &name,
                    format!("non-numeric value '{raw}' at row {row}, column '{}'", &headers[k]),
                )
            })
        };
        for &k in &feature_cols {
            data.push(cell(k)?);
        }
        let y = cell(label_col)?;
        if y < 0.0 || y.fract() != 0.0 {
            return Err(Error::format(
                &name,
                format!("label {y} at row {row} is not a nonnegative integer"),
            ));
        }
        labels.push(y as usize);
    }

    let mut inputs = Matrix::from_vec(labels.len(), feature_cols.len(), data)?;
    let scaler = match scaler {
        Some(s) => s.clone(),
        None => MinMaxScaler::fit(&inputs),
    };
    if schema.scale {
        if scaler.min.len() != inputs.cols() {
            return Err(Error::shape(format!(
                "scaler fitted on {} features, table has {}",
                scaler.min.len(),
                inputs.cols()
            )));
        }
        scaler.transform(&mut inputs);
    }
    let class_count = schema
        .class_count
        .unwrap_or_else(|| labels.iter().max().map_or(1, |&m| m + 1));
    let dataset = Dataset::new(inputs, labels, class_count, split, name)?;
    Ok((dataset, scaler))
}

/// Writes `f0..f{d-1},label` with shortest round-trip float formatting.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let name = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(&name, e))?;
    let mut header: Vec<String> = (0..dataset.input_dim()).map(|k| format!("f{k}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_error(&name, e))?;
    for i in 0..dataset.len() {
        let mut rec: Vec<String> = dataset.input(i).iter().map(|v| v.to_string()).collect();
        rec.push(dataset.label(i).to_string());
        w.write_record(&rec).map_err(|e| csv_error(&name, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(name: &str, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(name, io);
        }
        unreachable!("is_io_error checked");
    }
    Error::format(name, e.to_string())
}
