use std::path::Path;

use ndarray::Array2;

use super::MultivariateSeries;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reads a benchmark CSV: header row, first column a timestamp (parsed for
/// validity only), remaining columns numeric channels.
///
/// Empty cells are rejected unless `forward_fill` is set, in which case they
/// take the previous row's value (an empty cell in the first row is always
/// an error).
pub fn load_csv<F: Scalar>(path: &Path, forward_fill: bool) -> Result<MultivariateSeries<F>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            ),
            _ => Error::MalformedCsv {
                path: path.into(),
                detail: e.to_string(),
            },
        })?;

    let malformed = |detail: String| Error::MalformedCsv {
        path: path.into(),
        detail,
    };

    let headers = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(malformed(format!(
            "expected timestamp plus at least one channel column, found {} columns",
            headers.len()
        )));
    }
    let channel_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = channel_names.len();

    let mut rows: Vec<Vec<F>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(format!("row {}: {e}", i + 2)))?;
        if record.len() != n + 1 {
            return Err(malformed(format!(
                "row {}: expected {} fields, found {}",
                i + 2,
                n + 1,
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(n);
        for (j, cell) in record.iter().skip(1).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                if forward_fill {
                    match rows.last() {
                        Some(prev) => {
                            row.push(prev[j]);
                            continue;
                        }
                        None => {
                            return Err(malformed(format!(
                                "row {}: empty cell in column '{}' with nothing to fill from",
                                i + 2,
                                channel_names[j]
                            )))
                        }
                    }
                }
                return Err(malformed(format!(
                    "row {}: empty cell in column '{}'",
                    i + 2,
                    channel_names[j]
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                malformed(format!(
                    "row {}: cannot parse '{}' in column '{}'",
                    i + 2,
                    cell,
                    channel_names[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(malformed(format!(
                    "row {}: non-finite value in column '{}'",
                    i + 2,
                    channel_names[j]
                )));
            }
            row.push(F::of_f64(v));
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(Error::EmptySeries);
    }
    let t = rows.len();
    let flat: Vec<F> = rows.into_iter().flatten().collect();
    let values = Array2::from_shape_vec((t, n), flat).expect("row collection is rectangular");
    let mut series = MultivariateSeries::new(values, channel_names)?;
    series.frequency = None;
    Ok(series)
}

/// Writes a series back out in the benchmark CSV layout with a synthetic
/// integer timestamp column.
pub fn write_csv<F: Scalar>(path: &Path, series: &MultivariateSeries<F>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::io(
        path,
        std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
    ))?;
    let mut header = vec!["date".to_string()];
    header.extend(series.channel_names.iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e.to_string())))?;
    for (t, row) in series.values.rows().into_iter().enumerate() {
        let mut record = vec![t.to_string()];
        record.extend(row.iter().map(|v| format!("{}", v.as_f64())));
        writer
            .write_record(&record)
            .map_err(|e| Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e.to_string())))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}
