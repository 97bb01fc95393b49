//! Numeric CSV input for `dcorr`.

use std::io::Read;

use admin_lab::diff::Matrix;

/// Reads a rectangular table of finite numbers. A first row that does not
/// parse is taken as a header. Errors name the 1-based line.
pub fn read_matrix<R: Read>(r: R) -> Result<Matrix, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| format!("line {}: {e}", i + 1))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(format!("line {line}: {e}")),
        };
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(format!("line {line}: non-finite value {v}"));
        }
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(format!(
                    "line {line}: expected {c} fields, found {}",
                    values.len()
                ))
            }
            _ => {}
        }
        data.extend(values);
        rows += 1;
    }
    let cols = cols.ok_or("no data rows")?;
    Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
}
