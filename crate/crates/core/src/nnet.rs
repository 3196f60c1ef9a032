//! Minimal tanh feed-forward network over a flat parameter vector.
//!
//! One parameter representation is shared by MAP training, Jacobians, GGN
//! assembly and HMC: per layer, the weight matrix (fan_out × fan_in,
//! row-major) followed by the bias vector. Gradients are exact reverse-mode,
//! full batch; the loss is the regularized cross-entropy
//! Σ CE + (λ/2)‖θ‖², i.e. the negative log joint under an isotropic
//! Gaussian prior with precision λ.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

use crate::dataset::LabeledDataset;
use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("training loss diverged (NaN/Inf) at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("dataset has no class labels")]
    MissingClassLabels,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Layer shapes for a tanh MLP: input dim, hidden sizes, output logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    /// Dropout flag per hidden layer (applied after the activation).
    pub dropout_after: Vec<bool>,
}

impl MlpSpec {
    /// Tanh MLP with dropout sites after every hidden activation.
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output layers");
        assert!(*layer_sizes.last().unwrap() >= 2, "need at least two output logits");
        let hidden = layer_sizes.len() - 2;
        Self { layer_sizes, dropout_after: vec![true; hidden] }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Total parameter count Σ (fan_in + 1) · fan_out.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// (weights offset, bias offset, fan_in, fan_out) for layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize, usize, usize) {
        let mut offset = 0;
        for k in 0..l {
            offset += (self.layer_sizes[k] + 1) * self.layer_sizes[k + 1];
        }
        let fan_in = self.layer_sizes[l];
        let fan_out = self.layer_sizes[l + 1];
        (offset, offset + fan_in * fan_out, fan_in, fan_out)
    }
}

/// Flat parameter vector matching an [`MlpSpec`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub theta: Array1<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self { theta: Array1::zeros(spec.param_count()) }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Glorot-style init: weights uniform in ±√(6/(fan_in+fan_out)),
    /// biases zero. Deterministic given the stream.
    pub fn init(spec: &MlpSpec, stream: &mut RngStream) -> Self {
        let mut theta = Array1::zeros(spec.param_count());
        for l in 0..spec.num_layers() {
            let (w_off, b_off, fan_in, fan_out) = spec.layer_offsets(l);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for k in 0..fan_in * fan_out {
                theta[w_off + k] = (2.0 * stream.uniform01() - 1.0) * bound;
            }
            let _ = b_off; // biases stay zero
        }
        Self { theta }
    }

    fn weights<'a>(&'a self, spec: &MlpSpec, l: usize) -> ArrayView2<'a, f64> {
        let (w_off, _, fan_in, fan_out) = spec.layer_offsets(l);
        ArrayView2::from_shape((fan_out, fan_in), &self.theta.as_slice().unwrap()[w_off..w_off + fan_in * fan_out])
            .unwrap()
    }

    fn biases<'a>(&'a self, spec: &MlpSpec, l: usize) -> ArrayView1<'a, f64> {
        let (_, b_off, _, fan_out) = spec.layer_offsets(l);
        ArrayView1::from_shape(fan_out, &self.theta.as_slice().unwrap()[b_off..b_off + fan_out]).unwrap()
    }

    /// Flat little-endian f64 binary with an 8-byte length header.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), NnetError> {
        w.write_all(&(self.theta.len() as u64).to_le_bytes())?;
        for v in self.theta.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, NnetError> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header)?;
        let len = u64::from_le_bytes(header) as usize;
        let mut theta = Array1::zeros(len);
        let mut buf = [0u8; 8];
        for i in 0..len {
            r.read_exact(&mut buf)?;
            theta[i] = f64::from_le_bytes(buf);
        }
        Ok(Self { theta })
    }
}

/// MAP-training hyperparameters. `prior_precision` is the λ of the
/// isotropic Gaussian prior; `moment_decays` are the two Adam decays.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub prior_precision: f64,
    pub step_size: f64,
    pub max_epochs: usize,
    pub moment_decays: (f64, f64),
    pub convergence_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            prior_precision: 1.0,
            step_size: 1e-2,
            max_epochs: 5000,
            moment_decays: (0.9, 0.999),
            convergence_tol: 1e-5,
        }
    }
}

/// What training actually did, alongside the returned parameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainReport {
    pub converged: bool,
    pub epochs_run: usize,
    pub final_grad_inf_norm: f64,
    pub final_loss: f64,
}

fn check_input_dim(spec: &MlpSpec, dim: usize) -> Result<(), NnetError> {
    if dim != spec.input_dim() {
        return Err(NnetError::DimensionMismatch(format!(
            "input dim {dim} but spec expects {}",
            spec.input_dim()
        )));
    }
    Ok(())
}

fn check_param_dim(spec: &MlpSpec, theta: &ParamVector) -> Result<(), NnetError> {
    if theta.len() != spec.param_count() {
        return Err(NnetError::DimensionMismatch(format!(
            "parameter vector has {} entries but spec needs {}",
            theta.len(),
            spec.param_count()
        )));
    }
    Ok(())
}

/// Logits for a batch of inputs (rows). Hidden layers use tanh, the output
/// layer is affine.
pub fn mlp_forward_batch(
    spec: &MlpSpec,
    theta: &ParamVector,
    inputs: &Array2<f64>,
) -> Result<Array2<f64>, NnetError> {
    check_input_dim(spec, inputs.ncols())?;
    check_param_dim(spec, theta)?;
    let mut h = inputs.clone();
    for l in 0..spec.num_layers() {
        let w = theta.weights(spec, l);
        let b = theta.biases(spec, l);
        let mut z = h.dot(&w.t());
        z += &b;
        h = if l + 1 < spec.num_layers() { z.mapv(f64::tanh) } else { z };
    }
    Ok(h)
}

/// Logits for one input.
pub fn mlp_forward(spec: &MlpSpec, theta: &ParamVector, x: &Array1<f64>) -> Result<Array1<f64>, NnetError> {
    let batch = x.clone().insert_axis(Axis(0));
    let out = mlp_forward_batch(spec, theta, &batch)?;
    Ok(out.row(0).to_owned())
}

/// Inverted-dropout forward pass: each flagged hidden unit is zeroed with
/// probability `p` and survivors are scaled by 1/(1−p). `p = 0` is exactly
/// the deterministic forward.
pub fn mlp_forward_dropout(
    spec: &MlpSpec,
    theta: &ParamVector,
    x: &Array1<f64>,
    p: f64,
    stream: &mut RngStream,
) -> Result<Array1<f64>, NnetError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnetError::InvalidRate(p));
    }
    if p == 0.0 {
        return mlp_forward(spec, theta, x);
    }
    check_input_dim(spec, x.len())?;
    check_param_dim(spec, theta)?;
    let keep = 1.0 - p;
    let mut h = x.clone();
    for l in 0..spec.num_layers() {
        let w = theta.weights(spec, l);
        let b = theta.biases(spec, l);
        let mut z = w.dot(&h) + b;
        if l + 1 < spec.num_layers() {
            z.mapv_inplace(f64::tanh);
            if spec.dropout_after[l] {
                for v in z.iter_mut() {
                    if stream.uniform01() < p {
                        *v = 0.0;
                    } else {
                        *v /= keep;
                    }
                }
            }
        }
        h = z;
    }
    Ok(h)
}

/// Max-subtracted softmax; invariant to adding a constant to all logits.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = logits.mapv(|v| (v - m).exp());
    let s = e.sum();
    e /= s;
    e
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Loss and exact gradient of Σ CE + (λ/2)‖θ‖² over a classification
/// dataset.
pub fn mlp_loss_grad(
    spec: &MlpSpec,
    theta: &ParamVector,
    data: &LabeledDataset,
    prior_precision: f64,
) -> Result<(f64, Array1<f64>), NnetError> {
    let labels = data.class_labels().ok_or(NnetError::MissingClassLabels)?;
    check_param_dim(spec, theta)?;
    let n = data.len();
    let num_layers = spec.num_layers();

    let mut grad = &theta.theta * prior_precision;
    let mut loss = 0.5 * prior_precision * theta.theta.dot(&theta.theta);

    if n > 0 {
        check_input_dim(spec, data.inputs.ncols())?;
        // Forward, caching activations (activations[0] = inputs).
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(num_layers + 1);
        activations.push(data.inputs.clone());
        for l in 0..num_layers {
            let w = theta.weights(spec, l);
            let b = theta.biases(spec, l);
            let mut z = activations[l].dot(&w.t());
            z += &b;
            if l + 1 < num_layers {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        let logits = &activations[num_layers];
        let c = spec.output_dim();

        // delta = softmax(f) − onehot(y); loss += Σ [logsumexp − f_y].
        let mut delta = Array2::zeros((n, c));
        for i in 0..n {
            let row = logits.row(i);
            let lse = log_sum_exp(row);
            let y = labels[i];
            if y >= c {
                return Err(NnetError::DimensionMismatch(format!("label {y} out of range for C = {c}")));
            }
            loss += lse - row[y];
            for j in 0..c {
                delta[[i, j]] = (row[j] - lse).exp();
            }
            delta[[i, y]] -= 1.0;
        }

        // Backward through the layers.
        let mut g = delta;
        for l in (0..num_layers).rev() {
            let (w_off, b_off, fan_in, fan_out) = spec.layer_offsets(l);
            let grad_w = g.t().dot(&activations[l]);
            let grad_b = g.sum_axis(Axis(0));
            {
                let gslice = grad.as_slice_mut().unwrap();
                let gw = grad_w.as_slice().unwrap();
                for k in 0..fan_in * fan_out {
                    gslice[w_off + k] += gw[k];
                }
                for k in 0..fan_out {
                    gslice[b_off + k] += grad_b[k];
                }
            }
            if l > 0 {
                let w = theta.weights(spec, l);
                let mut upstream = g.dot(&w);
                // tanh'(z) = 1 − h² with h the cached activation.
                upstream *= &activations[l].mapv(|h| 1.0 - h * h);
                g = upstream;
            }
        }
    }
    Ok((loss, grad))
}

/// Jacobian of the logits with respect to the parameters, C×P: row c is the
/// gradient of logit c at `x`.
pub fn mlp_jacobian(spec: &MlpSpec, theta: &ParamVector, x: &Array1<f64>) -> Result<Array2<f64>, NnetError> {
    check_input_dim(spec, x.len())?;
    check_param_dim(spec, theta)?;
    let num_layers = spec.num_layers();
    let c = spec.output_dim();
    let p = spec.param_count();

    let mut activations: Vec<Array1<f64>> = Vec::with_capacity(num_layers + 1);
    activations.push(x.clone());
    for l in 0..num_layers {
        let w = theta.weights(spec, l);
        let b = theta.biases(spec, l);
        let mut z = w.dot(&activations[l]) + b;
        if l + 1 < num_layers {
            z.mapv_inplace(f64::tanh);
        }
        activations.push(z);
    }

    let mut jac = Array2::zeros((c, p));
    for out_class in 0..c {
        let mut delta = Array1::zeros(c);
        delta[out_class] = 1.0;
        let mut g = delta;
        for l in (0..num_layers).rev() {
            let (w_off, b_off, fan_in, fan_out) = spec.layer_offsets(l);
            {
                let mut row = jac.row_mut(out_class);
                let a = &activations[l];
                for r in 0..fan_out {
                    for cc in 0..fan_in {
                        row[w_off + r * fan_in + cc] = g[r] * a[cc];
                    }
                    row[b_off + r] = g[r];
                }
            }
            if l > 0 {
                let w = theta.weights(spec, l);
                let mut upstream = w.t().dot(&g);
                upstream *= &activations[l].mapv(|h| 1.0 - h * h);
                g = upstream;
            }
        }
    }
    Ok(jac)
}

/// Full-batch Adam minimization of the regularized cross-entropy. Runs to
/// ‖grad‖∞ ≤ tol or `max_epochs`, whichever first; deterministic given the
/// init stream.
pub fn train_map(
    spec: &MlpSpec,
    data: &LabeledDataset,
    config: &TrainConfig,
    stream: &mut RngStream,
) -> Result<(ParamVector, TrainReport), NnetError> {
    let mut theta = ParamVector::init(spec, stream);
    let p = theta.len();
    let (beta1, beta2) = config.moment_decays;
    let eps = 1e-8;
    let mut m = Array1::<f64>::zeros(p);
    let mut v = Array1::<f64>::zeros(p);
    let mut last_loss = f64::INFINITY;
    let mut last_grad_norm = f64::INFINITY;
    let mut epochs_run = 0;
    let mut converged = false;

    for epoch in 1..=config.max_epochs {
        let (loss, grad) = mlp_loss_grad(spec, &theta, data, config.prior_precision)?;
        if !loss.is_finite() {
            return Err(NnetError::DivergedLoss { epoch });
        }
        let grad_norm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        last_loss = loss;
        last_grad_norm = grad_norm;
        epochs_run = epoch;
        if grad_norm <= config.convergence_tol {
            converged = true;
            break;
        }
        m.zip_mut_with(&grad, |mi, gi| *mi = beta1 * *mi + (1.0 - beta1) * gi);
        v.zip_mut_with(&grad, |vi, gi| *vi = beta2 * *vi + (1.0 - beta2) * gi * gi);
        let t = epoch as f64;
        let m_hat_scale = 1.0 / (1.0 - beta1.powf(t));
        let v_hat_scale = 1.0 / (1.0 - beta2.powf(t));
        for i in 0..p {
            let m_hat = m[i] * m_hat_scale;
            let v_hat = v[i] * v_hat_scale;
            theta.theta[i] -= config.step_size * m_hat / (v_hat.sqrt() + eps);
        }
    }

    Ok((
        theta,
        TrainReport {
            converged,
            epochs_run,
            final_grad_inf_norm: last_grad_norm,
            final_loss: last_loss,
        },
    ))
}
