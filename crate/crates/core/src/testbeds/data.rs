use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(r)
}

/// Reads the first two numeric columns of a CSV file, optionally replacing
/// each column by its first difference `x_t − x_{t−1}`.
///
/// A first row whose leading cells are not numeric is treated as a header.
/// Parse errors cite the 1-based line number of the offending record.
pub fn load_csv_2d(path: &Path, apply_first_difference: bool) -> Result<Vec<Vec<f64>>> {
    let mut rows = parse_matrix(File::open(path)?, Some(2))?;
    if apply_first_difference {
        if rows.len() < 3 {
            return Err(Error::InvalidArgument(format!("differencing needs at least 3 rows, found {}", rows.len())));
        }
        rows = rows.windows(2).map(|w| vec![w[1][0] - w[0][0], w[1][1] - w[0][1]]).collect();
    } else if rows.is_empty() {
        return Err(Error::InvalidArgument("no data rows".into()));
    }
    Ok(rows)
}

/// Reads a headed numeric CSV with a constant number of columns.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    parse_matrix(File::open(path)?, None)
}

fn parse_matrix<R: Read>(r: R, take: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut width = take;
    for (i, record) in csv_reader(r).records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let want = width.unwrap_or(record.len());
        if record.len() < want {
            return Err(Error::Parse { line, reason: format!("expected {want} columns, found {}", record.len()) });
        }
        let parsed: std::result::Result<Vec<f64>, &str> =
            record.iter().take(want).map(|c| c.parse::<f64>().map_err(|_| c)).collect();
        match parsed {
            Ok(v) => {
                width = Some(want);
                out.push(v);
            }
            Err(_) if i == 0 => {
                width = Some(take.unwrap_or(record.len()));
            }
            Err(cell) => return Err(Error::Parse { line, reason: format!("non-numeric cell {cell:?}") }),
        }
    }
    Ok(out)
}

/// Writes rows under a header `x0,x1,…` with LF line endings.
pub fn write_matrix_csv(path: &Path, dim: usize, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record((0..dim).map(|i| format!("x{i}")))?;
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
