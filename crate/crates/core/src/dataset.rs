//! Deterministic generators for the desk-scale datasets: two-moons binary
//! classification and linear-Gaussian regression.
//!
//! Both generators draw one point per iteration from their stream, so for a
//! fixed `(seed, stream_id)` the size-N₁ dataset is exactly the prefix of
//! the size-N₂ dataset (N₁ < N₂). Scaling sweeps rely on this nesting.

use std::io::Write;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::linalg::{LinalgError, SpdFactor, SymMatrix, JitterPolicy};
use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least {min} points, got {got}")]
    InvalidCount { min: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Labels are either class indices or real regression targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    Targets(Vec<f64>),
}

/// Generator provenance kept with the data so runs can be reproduced.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub generator: String,
    pub params: String,
    pub seed: u64,
    pub stream_id: u64,
}

/// An N×D design plus labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub inputs: Array2<f64>,
    pub labels: Labels,
    pub meta: DatasetMeta,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn class_labels(&self) -> Option<&[usize]> {
        match &self.labels {
            Labels::Classes(c) => Some(c),
            Labels::Targets(_) => None,
        }
    }

    pub fn targets(&self) -> Option<&[f64]> {
        match &self.labels {
            Labels::Targets(t) => Some(t),
            Labels::Classes(_) => None,
        }
    }

    /// First `n` points (the nested-subsampling contract).
    pub fn prefix(&self, n: usize) -> LabeledDataset {
        assert!(n <= self.len(), "prefix {n} longer than dataset {}", self.len());
        let inputs = self.inputs.slice(ndarray::s![..n, ..]).to_owned();
        let labels = match &self.labels {
            Labels::Classes(c) => Labels::Classes(c[..n].to_vec()),
            Labels::Targets(t) => Labels::Targets(t[..n].to_vec()),
        };
        LabeledDataset { inputs, labels, meta: self.meta.clone() }
    }

    /// CSV with header `x0,x1,...,label`, UTF-8, LF line endings.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), DatasetError> {
        let d = self.input_dim();
        let mut header = String::new();
        for j in 0..d {
            header.push_str(&format!("x{j},"));
        }
        header.push_str("label\n");
        w.write_all(header.as_bytes())?;
        for i in 0..self.len() {
            let mut line = String::new();
            for j in 0..d {
                line.push_str(&format!("{:.17e},", self.inputs[[i, j]]));
            }
            match &self.labels {
                Labels::Classes(c) => line.push_str(&format!("{}", c[i])),
                Labels::Targets(t) => line.push_str(&format!("{:.17e}", t[i])),
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

/// Two interleaved half-circles: class 0 on the upper unit semicircle
/// `(cos t, sin t)`, class 1 on the offset lower semicircle
/// `(1 − cos t, 0.5 − sin t)`, `t` uniform on `[0, π]`, plus isotropic
/// Gaussian noise. `shift` translates every generated point (used to
/// emulate distribution shift on test inputs). Classes alternate point by
/// point so every prefix stays balanced within one.
pub fn gen_two_moons(
    n: usize,
    noise_sd: f64,
    shift: [f64; 2],
    stream: &mut RngStream,
) -> Result<LabeledDataset, DatasetError> {
    if n < 2 {
        return Err(DatasetError::InvalidCount { min: 2, got: n });
    }
    let mut inputs = Array2::zeros((n, 2));
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let t = stream.uniform01() * std::f64::consts::PI;
        let (mut x, mut y) = if i % 2 == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let (nx, ny) = (stream.standard_normal(), stream.standard_normal());
        x += noise_sd * nx + shift[0];
        y += noise_sd * ny + shift[1];
        inputs[[i, 0]] = x;
        inputs[[i, 1]] = y;
        classes.push(i % 2);
    }
    Ok(LabeledDataset {
        inputs,
        labels: Labels::Classes(classes),
        meta: DatasetMeta {
            generator: "two_moons".into(),
            params: format!("n={n},noise_sd={noise_sd},shift=({},{})", shift[0], shift[1]),
            seed: stream.seed(),
            stream_id: stream.stream_id(),
        },
    })
}

/// Regression data `y = θᵀx + ε` with `x ~ N(0, input_cov)` and
/// `ε ~ N(0, noise_sd²)`.
pub fn gen_linear_gaussian(
    n: usize,
    theta_true: &Array1<f64>,
    noise_sd: f64,
    input_cov: &SymMatrix,
    stream: &mut RngStream,
) -> Result<LabeledDataset, DatasetError> {
    let d = theta_true.len();
    if input_cov.dim() != d {
        return Err(DatasetError::DimensionMismatch(format!(
            "theta has {d} entries but input covariance is {}x{}",
            input_cov.dim(),
            input_cov.dim()
        )));
    }
    let factor = SpdFactor::new(input_cov, &JitterPolicy::default())?;
    let l = factor.lower();
    let mut inputs = Array2::zeros((n, d));
    let mut targets = Vec::with_capacity(n);
    let mut z = Array1::zeros(d);
    for i in 0..n {
        for k in 0..d {
            z[k] = stream.standard_normal();
        }
        let x = l.dot(&z);
        let noise = stream.standard_normal();
        let y = theta_true.dot(&x) + noise_sd * noise;
        inputs.row_mut(i).assign(&x);
        targets.push(y);
    }
    Ok(LabeledDataset {
        inputs,
        labels: Labels::Targets(targets),
        meta: DatasetMeta {
            generator: "linear_gaussian".into(),
            params: format!("n={n},d={d},noise_sd={noise_sd}"),
            seed: stream.seed(),
            stream_id: stream.stream_id(),
        },
    })
}
