// SPDX-License-Identifier: Apache-2.0

//! CSV datasets: header `label,f1,...,fd`, one example per row, `label`
//! a 0-based class index.

use std::path::Path;

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::labels::Label;

/// Reads a CSV dataset. `classes` defaults to `max(label) + 1`.
pub fn load_csv_dataset(path: &Path, classes: Option<usize>, split: Split) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if headers.get(0) != Some("label") || headers.len() < 2 {
        return Err(Error::format(path, "header must be `label,f1,...,fd`"));
    }
    let dim = headers.len() - 1;
    let mut raw_labels = Vec::new();
    let mut features = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let row = line + 2;
        let label: u32 = record[0]
            .parse()
            .map_err(|_| Error::format(path, format!("row {row}: bad label {:?}", &record[0])))?;
        raw_labels.push(label);
        for field in record.iter().skip(1) {
            let v: f32 = field
                .parse()
                .map_err(|_| Error::format(path, format!("row {row}: bad feature {field:?}")))?;
            features.push(v);
        }
    }
    let classes = classes.unwrap_or_else(|| raw_labels.iter().max().map_or(0, |&m| m as usize + 1));
    let labels = raw_labels
        .into_iter()
        .map(|l| Label::new(l + 1, classes))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, split, classes, vec![dim], features, labels)
}

pub fn write_csv_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["label".to_string()];
    header.extend((1..=ds.feature_len()).map(|i| format!("f{i}")));
    w.write_record(&header)
        .map_err(|e| Error::format(path, e.to_string()))?;
    for i in 0..ds.len() {
        let mut row = vec![ds.labels()[i].index().to_string()];
        row.extend(ds.features(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
