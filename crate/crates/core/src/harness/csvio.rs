//! The fixed curves.csv schema:
//! `experiment,metric,method,lambda,n,fold,value`, one row per measured
//! cell value. Floats are written with 17 significant digits so the file
//! round-trips bit-exactly; lines end with LF.

use std::io::Write;
use std::path::Path;

use crate::scaling::MetricKind;

use super::HarnessError;

pub const CSV_HEADER: &str = "experiment,metric,method,lambda,n,fold,value";

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub experiment: String,
    pub metric: MetricKind,
    pub method: String,
    pub lambda: f64,
    pub n: f64,
    pub fold: u32,
    pub value: f64,
}

pub fn write_curves_csv(path: &Path, rows: &[CurveRow]) -> Result<(), HarnessError> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.16e},{},{},{:.16e}\n",
            r.experiment,
            r.metric.as_str(),
            r.method,
            r.lambda,
            r.n,
            r.fold,
            r.value
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<CurveRow>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    parse_curves_csv(&text)
}

pub fn parse_curves_csv(text: &str) -> Result<Vec<CurveRow>, HarnessError> {
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(HarnessError::Schema {
                line: 1,
                message: format!("expected header `{CSV_HEADER}`, found `{header}`"),
            })
        }
        None => return Err(HarnessError::Schema { line: 1, message: "empty file".into() }),
    }
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(HarnessError::Schema {
                line: line_no,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let metric = MetricKind::parse(fields[1]).ok_or_else(|| HarnessError::Schema {
            line: line_no,
            message: format!("unknown metric `{}`", fields[1]),
        })?;
        let parse_f64 = |s: &str, name: &str| -> Result<f64, HarnessError> {
            s.parse::<f64>().map_err(|_| HarnessError::Schema {
                line: line_no,
                message: format!("invalid {name} `{s}`"),
            })
        };
        let fold = fields[5].parse::<u32>().map_err(|_| HarnessError::Schema {
            line: line_no,
            message: format!("invalid fold `{}`", fields[5]),
        })?;
        rows.push(CurveRow {
            experiment: fields[0].to_string(),
            metric,
            method: fields[2].to_string(),
            lambda: parse_f64(fields[3], "lambda")?,
            n: parse_f64(fields[4], "n")?,
            fold,
            value: parse_f64(fields[6], "value")?,
        });
    }
    Ok(rows)
}
