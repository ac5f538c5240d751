//! CSV input and output.
//!
//! Files are comma separated with one header row and `.` as the decimal
//! point. Data rows are numbered from 1 in error messages; the header is not
//! counted.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{invalid, Error, Result};
use crate::krr::Dataset;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

/// Column names of a CSV file.
pub fn csv_headers(path: &Path) -> Result<Vec<String>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?;
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return invalid(format!("{}: file is empty", path.display()));
    }
    Ok(headers.iter().map(str::to_string).collect())
}

/// Reads the named columns as a row-major matrix.
fn read_columns(path: &Path, columns: &[String]) -> Result<Array2<f64>> {
    if columns.is_empty() {
        return invalid("no columns selected");
    }
    let mut rdr = reader(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return invalid(format!("{}: file is empty", path.display()));
    }
    let positions = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::InvalidInput(format!("{}: missing column '{c}'", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        for (&pos, name) in positions.iter().zip(columns) {
            let cell = record.get(pos).unwrap_or("");
            let parse_err = |message: String| Error::Parse {
                path: path.display().to_string(),
                row,
                column: name.clone(),
                message,
            };
            let v: f64 = cell.parse().map_err(|_| parse_err(format!("'{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("'{cell}' is not finite")));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return invalid(format!("{}: no data rows", path.display()));
    }
    Ok(Array2::from_shape_vec((rows, columns.len()), values).expect("row-major layout"))
}

/// Loads a dataset; `origin_ids` follow the row order of the file.
pub fn load_csv(path: &Path, response_column: &str, feature_columns: &[String]) -> Result<Dataset> {
    if feature_columns.iter().any(|c| c == response_column) {
        return invalid(format!("column '{response_column}' is both a feature and the response"));
    }
    let mut columns = feature_columns.to_vec();
    columns.push(response_column.to_string());
    let table = read_columns(path, &columns)?;
    let d = feature_columns.len();
    let x = table.slice(ndarray::s![.., ..d]).to_owned();
    let y: Array1<f64> = table.column(d).to_owned();
    Dataset::new(x, y)
}

/// Reads predictor columns only, e.g. for prediction.
pub fn load_features(path: &Path, feature_columns: &[String]) -> Result<Array2<f64>> {
    read_columns(path, feature_columns)
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes a numeric table. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn write_table(path: &Path, headers: &[String], rows: &Array2<f64>) -> Result<()> {
    if headers.len() != rows.ncols() {
        return Err(Error::DimensionMismatch { expected: rows.ncols(), got: headers.len() });
    }
    let mut w = create(path)?;
    w.write_record(headers)?;
    for row in rows.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes `x` and `y` with the given column names (features first).
pub fn write_dataset(path: &Path, feature_names: &[String], response_name: &str, data: &Dataset) -> Result<()> {
    let mut headers = feature_names.to_vec();
    headers.push(response_name.to_string());
    let mut table = Array2::zeros((data.n(), data.dim() + 1));
    table.slice_mut(ndarray::s![.., ..data.dim()]).assign(data.x());
    table.column_mut(data.dim()).assign(data.y());
    write_table(path, &headers, &table)
}

/// One `prediction` column.
pub fn write_predictions(out: &mut dyn Write, preds: &Array1<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["prediction"])?;
    for p in preds {
        w.write_record([p.to_string()])?;
    }
    w.flush().map_err(|e| Error::Io { path: "<output>".into(), source: e })
}

/// Default feature names `x1..xd`.
pub fn default_feature_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}
