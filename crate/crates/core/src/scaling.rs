//! Power-law fitting and extrapolation for uncertainty-vs-resource curves.
//!
//! The model is U(N) = a·N^γ + c. Fitting happens in log-log space after
//! geometric-mean averaging across folds; the floor c is profiled over a
//! log grid plus golden-section refinement. Knee detection fits a
//! flat-then-sloped two-segment model and reports the segment crossing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("resource values must be positive and finite, got {0}")]
    NonPositiveValue(f64),
    #[error("need at least {min} distinct resource values, got {got}")]
    DegenerateAbscissa { min: usize, got: usize },
    #[error("curve has no points")]
    EmptyCurve,
}

/// Metric identity carried by a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Tu,
    Au,
    Eu,
    EuLogit,
    EuVar,
    EuEnt,
    MaxEig,
    MeanEig,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Tu => "tu",
            MetricKind::Au => "au",
            MetricKind::Eu => "eu",
            MetricKind::EuLogit => "eu_logit",
            MetricKind::EuVar => "eu_var",
            MetricKind::EuEnt => "eu_ent",
            MetricKind::MaxEig => "max_eig",
            MetricKind::MeanEig => "mean_eig",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "tu" => MetricKind::Tu,
            "au" => MetricKind::Au,
            "eu" => MetricKind::Eu,
            "eu_logit" => MetricKind::EuLogit,
            "eu_var" => MetricKind::EuVar,
            "eu_ent" => MetricKind::EuEnt,
            "max_eig" => MetricKind::MaxEig,
            "mean_eig" => MetricKind::MeanEig,
            _ => return None,
        })
    }
}

/// One observation: metric value at resource N for a given fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub n: f64,
    pub value: f64,
    pub fold: u32,
}

/// (N, value, fold) observations for one metric.
#[derive(Debug, Clone)]
pub struct ScalingCurve {
    pub metric: MetricKind,
    pub points: Vec<CurvePoint>,
}

impl ScalingCurve {
    pub fn new(metric: MetricKind, points: Vec<CurvePoint>) -> Self {
        Self { metric, points }
    }

    /// Drops points with N < n_min (the small-N transient trim).
    pub fn trimmed(&self, n_min: f64) -> ScalingCurve {
        ScalingCurve {
            metric: self.metric,
            points: self.points.iter().copied().filter(|p| p.n >= n_min).collect(),
        }
    }
}

/// Fitted U(N) = a·N^γ + c plus the bookkeeping needed to propagate the
/// exponent uncertainty into extrapolation bands.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub amplitude: f64,
    pub exponent: f64,
    pub floor: f64,
    pub r2: f64,
    pub exponent_stderr: f64,
    /// Number of distinct fold-averaged abscissae entering the fit.
    pub n_points: usize,
    /// True when nonpositive values had to be clamped to 1e-15 before the
    /// log transform.
    pub clamped: bool,
    /// Mean of ln N over the fitted points (the pivot of the regression).
    pub log_n_mean: f64,
    /// Residual standard deviation in log space.
    pub resid_sd: f64,
}

const VALUE_CLAMP: f64 = 1e-15;

/// Fold-averaged (geometric mean) curve: one (N, value) pair per distinct
/// N, sorted by N. Returns the clamped flag alongside.
fn fold_average(curve: &ScalingCurve) -> Result<(Vec<(f64, f64)>, bool), FitError> {
    if curve.points.is_empty() {
        return Err(FitError::EmptyCurve);
    }
    for p in &curve.points {
        if !p.n.is_finite() || p.n <= 0.0 {
            return Err(FitError::NonPositiveValue(p.n));
        }
    }
    let mut clamped = false;
    let mut by_n: Vec<(f64, f64, usize)> = Vec::new();
    let mut pts = curve.points.clone();
    pts.sort_by(|a, b| a.n.total_cmp(&b.n).then(a.fold.cmp(&b.fold)));
    for p in &pts {
        let mut v = p.value;
        if !v.is_finite() || v <= 0.0 {
            v = VALUE_CLAMP;
            clamped = true;
        }
        match by_n.iter_mut().find(|(n, _, _)| *n == p.n) {
            Some((_, acc, cnt)) => {
                *acc += v.ln();
                *cnt += 1;
            }
            None => by_n.push((p.n, v.ln(), 1)),
        }
    }
    let averaged = by_n
        .into_iter()
        .map(|(n, sum_log, cnt)| (n, (sum_log / cnt as f64).exp()))
        .collect();
    Ok((averaged, clamped))
}

fn ols_loglog(points: &[(f64, f64)]) -> (f64, f64, f64, f64, f64, f64) {
    // Returns (slope, intercept, r2, slope_stderr, x_mean, resid_sd).
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, u)| u.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / m;
    let y_mean = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum();
    let r2 = if ss_tot <= 1e-30 { 1.0 } else { 1.0 - ss_res / ss_tot };
    let dof = m - 2.0;
    let (stderr, resid_sd) = if dof > 0.0 {
        let s2 = ss_res / dof;
        ((s2 / sxx).sqrt(), s2.sqrt())
    } else {
        (0.0, 0.0)
    };
    (slope, intercept, r2, stderr, x_mean, resid_sd)
}

/// Pure power-law fit (floor fixed at 0): OLS of ln U on ln N over
/// fold-averaged points.
pub fn fit_loglog(curve: &ScalingCurve) -> Result<PowerLawFit, FitError> {
    let (avg, clamped) = fold_average(curve)?;
    if avg.len() < 2 {
        return Err(FitError::DegenerateAbscissa { min: 2, got: avg.len() });
    }
    let (slope, intercept, r2, stderr, x_mean, resid_sd) = ols_loglog(&avg);
    Ok(PowerLawFit {
        amplitude: intercept.exp(),
        exponent: slope,
        floor: 0.0,
        r2,
        exponent_stderr: stderr,
        n_points: avg.len(),
        clamped,
        log_n_mean: x_mean,
        resid_sd,
    })
}

fn rss_at_floor(avg: &[(f64, f64)], c: f64) -> Option<f64> {
    let shifted: Vec<(f64, f64)> = avg
        .iter()
        .map(|&(n, u)| (n, u - c))
        .collect();
    if shifted.iter().any(|&(_, u)| u <= 0.0) {
        return None;
    }
    let (slope, intercept, _, _, _, _) = ols_loglog(&shifted);
    let rss: f64 = shifted
        .iter()
        .map(|&(n, u)| {
            let r = u.ln() - (intercept + slope * n.ln());
            r * r
        })
        .sum();
    Some(rss)
}

/// Power law with a profiled floor: U(N) = a·N^γ + c. Candidate floors are
/// parameterized by the gap s = min U − c on a 64-point log grid (the RSS
/// valley around the true floor is narrow in c but wide in log s), then
/// refined by golden section; each candidate refits the log-log line on
/// U − c.
pub fn fit_powerlaw_floor(curve: &ScalingCurve) -> Result<PowerLawFit, FitError> {
    let (avg, clamped) = fold_average(curve)?;
    if avg.len() < 4 {
        return Err(FitError::DegenerateAbscissa { min: 4, got: avg.len() });
    }
    let min_u = avg.iter().map(|&(_, u)| u).fold(f64::INFINITY, f64::min);

    // Gap grid: s = min U (i.e. c = 0) down to min U · 1e-9, log spaced.
    let grid_points = 64usize;
    let gaps: Vec<f64> = (0..grid_points)
        .map(|i| min_u * 10f64.powf(-9.0 * i as f64 / (grid_points - 1) as f64))
        .collect();
    let rss_at_gap = |s: f64| -> f64 {
        let c = (min_u - s).max(0.0);
        rss_at_floor(&avg, c).unwrap_or(f64::INFINITY)
    };
    let mut best_idx = 0usize;
    let mut best_rss = f64::INFINITY;
    for (i, &s) in gaps.iter().enumerate() {
        let rss = rss_at_gap(s);
        if rss < best_rss {
            best_rss = rss;
            best_idx = i;
        }
    }
    let mut best_gap = gaps[best_idx];

    // Golden-section refinement in log-gap space between the neighbors of
    // the best grid candidate.
    let hi = if best_idx == 0 { gaps[0] } else { gaps[best_idx - 1] };
    let lo = if best_idx + 1 < gaps.len() { gaps[best_idx + 1] } else { *gaps.last().unwrap() };
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = rss_at_gap(x1.exp());
    let mut f2 = rss_at_gap(x2.exp());
    for _ in 0..120 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = rss_at_gap(x1.exp());
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = rss_at_gap(x2.exp());
        }
    }
    let refined = (0.5 * (a + b)).exp();
    if rss_at_gap(refined) < best_rss {
        best_gap = refined;
    }
    // Snap to an exact zero floor when it is at least as good.
    let best_c = if rss_at_floor(&avg, 0.0).unwrap_or(f64::INFINITY) <= rss_at_gap(best_gap) {
        0.0
    } else {
        (min_u - best_gap).max(0.0)
    };

    let shifted: Vec<(f64, f64)> = avg.iter().map(|&(n, u)| (n, u - best_c)).collect();
    let (slope, intercept, r2, stderr, x_mean, resid_sd) = ols_loglog(&shifted);
    Ok(PowerLawFit {
        amplitude: intercept.exp(),
        exponent: slope,
        floor: best_c,
        r2,
        exponent_stderr: stderr,
        n_points: avg.len(),
        clamped,
        log_n_mean: x_mean,
        resid_sd,
    })
}

/// Extrapolated value plus a propagated-uncertainty band.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Extrapolation {
    pub n_target: f64,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Evaluates the fit at `n_target` with a 2-sigma log-space band combining
/// the exponent stderr (pivoting about the fitted centroid) with the
/// residual scatter.
pub fn extrapolate(fit: &PowerLawFit, n_target: f64) -> Extrapolation {
    let power = fit.amplitude * n_target.powf(fit.exponent);
    let value = power + fit.floor;
    let dx = n_target.ln() - fit.log_n_mean;
    let m = fit.n_points.max(1) as f64;
    let sd_log = (fit.exponent_stderr * fit.exponent_stderr * dx * dx
        + fit.resid_sd * fit.resid_sd * (1.0 + 1.0 / m))
        .sqrt();
    let half = 2.0 * sd_log;
    Extrapolation {
        n_target,
        value,
        lower: power * (-half).exp() + fit.floor,
        upper: power * half.exp() + fit.floor,
    }
}

/// Smallest N at which the fitted curve drops to `epsilon`, when it does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdCrossing {
    At(f64),
    Unreachable,
}

/// Inverts U(N*) = ε: N* = (a / (ε − c))^(1/|γ|) when γ < 0 and ε > c;
/// otherwise the metric never drops below ε.
pub fn threshold_crossing(fit: &PowerLawFit, epsilon: f64) -> ThresholdCrossing {
    if fit.exponent < 0.0 && epsilon > fit.floor {
        ThresholdCrossing::At((fit.amplitude / (epsilon - fit.floor)).powf(1.0 / -fit.exponent))
    } else {
        ThresholdCrossing::Unreachable
    }
}

/// Detected prior-to-data transition on a scaling curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KneeDetection {
    Knee { n_knee: f64, prior_plateau_level: f64 },
    NoKnee,
}

/// Two-segment fit in log-log space: a flat plateau meeting a power-law
/// line, with the breakpoint chosen to minimize total residual over grid
/// splits. Both segment orders are tried (plateau first for the
/// prior-dominated regime of epistemic curves; plateau last for metrics
/// decaying onto an irreducible floor); the knee is where the plateau level
/// crosses the fitted line. Crossings outside the sampled N range are not
/// resolved by the data and clamp to the range endpoints. NoKnee when a
/// single line explains the data within 2% of the best two-segment fit.
pub fn detect_knee(curve: &ScalingCurve) -> Result<KneeDetection, FitError> {
    let (avg, _) = fold_average(curve)?;
    let m = avg.len();
    if m < 5 {
        return Err(FitError::DegenerateAbscissa { min: 5, got: m });
    }
    let line_rss = |pts: &[(f64, f64)]| -> (f64, f64, f64) {
        let (slope, intercept, _, _, _, _) = ols_loglog(pts);
        let rss = pts
            .iter()
            .map(|&(n, u)| {
                let r = u.ln() - (intercept + slope * n.ln());
                r * r
            })
            .sum();
        (slope, intercept, rss)
    };
    let flat_rss = |pts: &[(f64, f64)]| -> (f64, f64) {
        let level = pts.iter().map(|&(_, u)| u.ln()).sum::<f64>() / pts.len() as f64;
        let rss = pts.iter().map(|&(_, u)| (u.ln() - level) * (u.ln() - level)).sum();
        (level, rss)
    };

    let single_rss = line_rss(&avg).2;

    let mut best: Option<(f64, f64, f64)> = None; // (rss, level, knee_n)
    for split in 2..=(m - 2) {
        for plateau_first in [true, false] {
            let (flat_pts, line_pts) = if plateau_first {
                (&avg[..split], &avg[split..])
            } else {
                (&avg[split..], &avg[..split])
            };
            let (level, f_rss) = flat_rss(flat_pts);
            let (slope, intercept, l_rss) = line_rss(line_pts);
            if slope.abs() < 1e-12 {
                continue;
            }
            let rss = f_rss + l_rss;
            let knee_log_n = (level - intercept) / slope;
            let better = match &best {
                Some((b, _, _)) => rss < *b,
                None => true,
            };
            if better {
                best = Some((rss, level, knee_log_n.exp()));
            }
        }
    }

    match best {
        Some((rss, level, knee)) if single_rss > 1.02 * rss && single_rss > 1e-20 => {
            let n_knee = knee.clamp(avg[0].0, avg[m - 1].0);
            Ok(KneeDetection::Knee { n_knee, prior_plateau_level: level.exp() })
        }
        _ => Ok(KneeDetection::NoKnee),
    }
}
