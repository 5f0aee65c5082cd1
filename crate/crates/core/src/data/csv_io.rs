//! CSV ingestion: a header row, one feature per column, class index in the
//! column named `label`.

use std::path::Path;

use super::{Dataset, DEFAULT_VAL_FRACTION};
use crate::error::{LdbError, Result};
use crate::tensor::Tensor;

/// Loads a CSV dataset. `classes` defaults to `max(label) + 1`.
pub fn load_csv(path: &Path, classes: Option<usize>, split_seed: u64) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| LdbError::Data(format!("{}: no 'label' column", path.display())))?;
    let width = headers.len() - 1;
    if width == 0 {
        return Err(LdbError::Data(format!("{}: no feature columns", path.display())));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for (col, field) in rec.iter().enumerate() {
            let field = field.trim();
            if col == label_col {
                labels.push(field.parse::<usize>().map_err(|_| {
                    LdbError::Data(format!("{} row {}: bad label {field:?}", path.display(), row + 1))
                })?);
            } else {
                let v = field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    LdbError::Data(format!("{} row {}: bad value {field:?}", path.display(), row + 1))
                })?;
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(LdbError::Data(format!("{}: no rows", path.display())));
    }
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(2, |&m| (m + 1).max(2)));
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, width], data)?, labels, classes, DEFAULT_VAL_FRACTION, split_seed)
}

/// Writes features (flattened per sample) and labels in the format
/// [`load_csv`] reads. Values use shortest round-trip formatting.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let width = ds.features().row_len();
    let mut header: Vec<String> = (0..width).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features().row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.labels()[i].to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| LdbError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> LdbError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => LdbError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        LdbError::Data(format!("{}: {e}", path.display()))
    }
}
