//! CSV measurement files: columns `c1..cm`, optionally `theta1..thetam`
//! (thermal parameters) or `a1..am` (ground-state directions).

use std::path::Path;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRow {
    /// Line number in the file; the header is line 1.
    pub line: usize,
    pub c: Vec<f64>,
    pub theta: Option<Vec<f64>>,
    pub direction: Option<Vec<f64>>,
}

fn column_group(headers: &csv::StringRecord, prefix: &str, m: usize, path: &Path) -> Result<Option<Vec<usize>>, CliError> {
    let found: Vec<Option<usize>> = (1..=m)
        .map(|i| headers.iter().position(|h| h.trim() == format!("{prefix}{i}")))
        .collect();
    let present = found.iter().filter(|x| x.is_some()).count();
    if present == 0 {
        return Ok(None);
    }
    if present != m {
        return Err(CliError::Csv {
            path: path.to_path_buf(),
            row: 1,
            message: format!("header has {present} of the {m} {prefix}-columns"),
        });
    }
    Ok(Some(found.into_iter().map(Option::unwrap).collect()))
}

pub fn read_measurements(path: &Path, m: usize) -> Result<Vec<MeasurementRow>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let c_cols = column_group(&headers, "c", m, path)?.ok_or_else(|| CliError::Csv {
        path: path.to_path_buf(),
        row: 1,
        message: format!("header must name the columns c1..c{m}"),
    })?;
    let theta_cols = column_group(&headers, "theta", m, path)?;
    let a_cols = column_group(&headers, "a", m, path)?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |col: usize| -> Result<f64, CliError> {
            let raw = record.get(col).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Csv {
                    path: path.to_path_buf(),
                    row: line,
                    message: format!("column {:?}: {raw:?} is not a finite number", &headers[col]),
                }),
            }
        };
        let pick = |cols: &[usize]| cols.iter().map(|&c| field(c)).collect::<Result<Vec<_>, _>>();
        rows.push(MeasurementRow {
            line,
            c: pick(&c_cols)?,
            theta: theta_cols.as_deref().map(pick).transpose()?,
            direction: a_cols.as_deref().map(pick).transpose()?,
        });
    }
    if rows.is_empty() {
        return Err(CliError::Csv {
            path: path.to_path_buf(),
            row: 1,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        kind => CliError::Csv {
            path: path.to_path_buf(),
            row,
            message: format!("{kind:?}"),
        },
    }
}

/// Writes `c1..cm` plus `a1..am` columns.
pub fn write_ground_state_csv(path: &Path, rows: &[(Vec<f64>, Vec<f64>)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if let Some((c, _)) = rows.first() {
        let m = c.len();
        let header: Vec<String> = (1..=m).map(|i| format!("c{i}")).chain((1..=m).map(|i| format!("a{i}"))).collect();
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
    }
    for (c, a) in rows {
        let rec: Vec<String> = c.iter().chain(a).map(|x| x.to_string()).collect();
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
