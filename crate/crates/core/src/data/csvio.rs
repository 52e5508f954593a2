use std::path::Path;

use crate::data::epochs::EpochSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::file(path, io),
        other => Error::row(row, format!("{other:?}")),
    }
}

/// Reads trials from a data CSV with `trials * channels` rows of `samples`
/// values each (trial-major, channel rows consecutive) and a labels file with
/// one integer per line. Rows are numbered from 1 in errors. The class count
/// is one more than the largest label.
pub fn csv_import(
    data_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    channels: usize,
    sample_rate: f64,
) -> Result<EpochSet> {
    if channels == 0 {
        return Err(Error::param("channel count must be positive"));
    }
    let data_path = data_path.as_ref();
    let labels_path = labels_path.as_ref();

    let mut values: Vec<f32> = Vec::new();
    let mut samples = None;
    let mut rows = 0;
    for (i, record) in open(data_path)?.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_error(data_path, row, e))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let width = *samples.get_or_insert(record.len());
        if record.len() != width {
            return Err(Error::row(
                row,
                format!("{} columns, expected {width}", record.len()),
            ));
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f32 = cell.parse().map_err(|_| {
                Error::row(row, format!("column {}: {cell:?} is not a number", col + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::row(
                    row,
                    format!("column {}: non-finite value", col + 1),
                ));
            }
            values.push(v);
        }
        rows += 1;
    }
    let samples = samples.ok_or_else(|| Error::row(1, "data file is empty"))?;
    if rows % channels != 0 {
        return Err(Error::row(
            rows,
            format!("{rows} rows is not a multiple of {channels} channels"),
        ));
    }
    let trials = rows / channels;

    let mut labels = Vec::with_capacity(trials);
    for (i, record) in open(labels_path)?.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_error(labels_path, row, e))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 1 {
            return Err(Error::row(
                row,
                format!("{} columns, expected 1", record.len()),
            ));
        }
        let label: usize = record[0]
            .parse()
            .map_err(|_| Error::row(row, format!("{:?} is not a class index", &record[0])))?;
        labels.push(label);
        if labels.len() > trials {
            return Err(Error::row(
                row,
                format!("more labels than the {trials} trials in the data file"),
            ));
        }
    }
    if labels.len() != trials {
        return Err(Error::row(
            labels.len(),
            format!("{} labels for {trials} trials", labels.len()),
        ));
    }
    let class_count = labels.iter().max().map_or(1, |&m| m + 1);
    let data = Tensor::from_vec(&[trials, channels, samples], values)?;
    EpochSet::new(data, labels, sample_rate, class_count)
}
