//! Power-law fits over the rows of a run, one record per
//! (metric, method, lambda) curve, serialized to fits.json.

use serde::{Deserialize, Serialize};

use crate::scaling::{
    fit_loglog, fit_powerlaw_floor, CurvePoint, MetricKind, PowerLawFit, ScalingCurve,
};

use super::{CurveRow, HarnessError};

/// The fits.json record schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub metric: MetricKind,
    pub method: String,
    pub lambda: f64,
    pub a: f64,
    pub gamma: f64,
    pub c: f64,
    pub r2: f64,
    pub gamma_stderr: f64,
    pub n_points: usize,
    pub clamped: bool,
}

impl FitRecord {
    fn from_fit(metric: MetricKind, method: &str, lambda: f64, fit: &PowerLawFit) -> Self {
        Self {
            metric,
            method: method.to_string(),
            lambda,
            a: fit.amplitude,
            gamma: fit.exponent,
            c: fit.floor,
            r2: fit.r2,
            gamma_stderr: fit.exponent_stderr,
            n_points: fit.n_points,
            clamped: fit.clamped,
        }
    }
}

/// Groups rows into curves keyed by (metric, method, lambda) in order of
/// first appearance and fits each one: the floored power law when at least
/// four distinct N are available, a plain log-log line otherwise. An
/// `n_min` trim drops smaller N before fitting.
pub fn compute_fits(rows: &[CurveRow], n_min: Option<f64>) -> Result<Vec<FitRecord>, HarnessError> {
    let mut keys: Vec<(MetricKind, String, u64)> = Vec::new();
    for r in rows {
        let key = (r.metric, r.method.clone(), r.lambda.to_bits());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut records = Vec::with_capacity(keys.len());
    for (metric, method, lambda_bits) in keys {
        let lambda = f64::from_bits(lambda_bits);
        let points: Vec<CurvePoint> = rows
            .iter()
            .filter(|r| r.metric == metric && r.method == method && r.lambda.to_bits() == lambda_bits)
            .map(|r| CurvePoint { n: r.n, value: r.value, fold: r.fold })
            .collect();
        let mut curve = ScalingCurve::new(metric, points);
        if let Some(n_min) = n_min {
            curve = curve.trimmed(n_min);
        }
        let distinct = {
            let mut ns: Vec<u64> = curve.points.iter().map(|p| p.n.to_bits()).collect();
            ns.sort_unstable();
            ns.dedup();
            ns.len()
        };
        if distinct < 2 {
            return Err(HarnessError::Runtime(format!(
                "curve ({}, {method}, {lambda}) has {distinct} distinct N after trimming",
                metric.as_str()
            )));
        }
        let fit = if distinct >= 4 { fit_powerlaw_floor(&curve)? } else { fit_loglog(&curve)? };
        records.push(FitRecord::from_fit(metric, &method, lambda, &fit));
    }
    Ok(records)
}

/// Plain-text fit table matching fits.json.
pub fn render_fit_table(records: &[FitRecord]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<9} {:<7} {:>9} {:>10} {:>10} {:>11} {:>8} {:>4}\n",
        "metric", "method", "lambda", "gamma", "stderr", "floor", "r2", "n"
    ));
    for r in records {
        out.push_str(&format!(
            "{:<9} {:<7} {:>9} {:>10.4} {:>10.4} {:>11.4e} {:>8.4} {:>4}\n",
            r.metric.as_str(),
            r.method,
            format_lambda(r.lambda),
            r.gamma,
            r.gamma_stderr,
            r.c,
            r.r2,
            r.n_points
        ));
    }
    out
}

fn format_lambda(lambda: f64) -> String {
    if lambda == 0.0 {
        "-".to_string()
    } else {
        format!("{lambda}")
    }
}

pub fn fits_to_json(records: &[FitRecord]) -> String {
    serde_json::to_string_pretty(records).expect("fit records serialize")
}
