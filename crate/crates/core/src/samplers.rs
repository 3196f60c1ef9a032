//! Posterior sampling and ensemble inference over network weights: HMC with
//! leapfrog integration and Metropolis correction, MC-dropout ensembles,
//! and deep ensembles. All three feed the same uncertainty-decomposition
//! path in [`crate::uq`].

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::LabeledDataset;
use crate::nnet::{
    mlp_forward, mlp_forward_batch, mlp_forward_dropout, mlp_loss_grad, softmax, train_map, MlpSpec,
    NnetError, ParamVector, TrainConfig,
};
use crate::rng::RngStream;
use crate::uq::{EnsembleSource, PredictiveEnsemble, UqError};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("gradient became non-finite during integration")]
    NonFiniteGradient,
    #[error("acceptance rate {0} below 0.01 after warmup")]
    ZeroAcceptance(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Uq(#[from] UqError),
}

/// Differentiable unnormalized log density over ℝ^P.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn logp_grad(&self, theta: &Array1<f64>) -> (f64, Array1<f64>);
}

/// HMC protocol parameters. `prior_sd` is the standard deviation of the
/// isotropic Gaussian prior a Bayesian-MLP target places on every weight.
#[derive(Debug, Clone)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub warmup: usize,
    pub samples: usize,
    pub prior_sd: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self { step_size: 0.01, leapfrog_steps: 20, warmup: 1000, samples: 200, prior_sd: 1.0 }
    }
}

/// Retained posterior draws (warmup discarded), one row per draw.
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub draws: Array2<f64>,
    pub accept_rate: f64,
    pub config: HmcConfig,
}

impl PosteriorSamples {
    pub fn num_draws(&self) -> usize {
        self.draws.nrows()
    }

    /// Same flat binary layout as [`ParamVector`], one record per draw.
    pub fn write_binary<W: std::io::Write>(&self, mut w: W) -> Result<(), SamplerError> {
        for row in self.draws.rows() {
            let pv = ParamVector { theta: row.to_owned() };
            pv.write_binary(&mut w)?;
        }
        Ok(())
    }

    pub fn read_binary<R: std::io::Read>(mut r: R, config: HmcConfig) -> Result<Self, SamplerError> {
        let mut rows: Vec<Array1<f64>> = Vec::new();
        loop {
            match ParamVector::read_binary(&mut r) {
                Ok(pv) => rows.push(pv.theta),
                Err(NnetError::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
        }
        let p = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut draws = Array2::zeros((rows.len(), p));
        for (i, row) in rows.iter().enumerate() {
            draws.row_mut(i).assign(row);
        }
        Ok(Self { draws, accept_rate: 1.0, config })
    }
}

/// Standard HMC: leapfrog integration with identity mass and a Metropolis
/// accept step. Deterministic given the stream; fails fast on non-finite
/// gradients and flags chains whose post-warmup acceptance collapses.
pub fn hmc_sample<T: LogDensity>(
    target: &T,
    init: &Array1<f64>,
    config: &HmcConfig,
    stream: &mut RngStream,
) -> Result<PosteriorSamples, SamplerError> {
    let p = target.dim();
    if init.len() != p {
        return Err(SamplerError::DimensionMismatch(format!(
            "init has {} entries, target dim {p}",
            init.len()
        )));
    }
    let mut theta = init.clone();
    let (mut logp, mut grad) = target.logp_grad(&theta);
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(SamplerError::NonFiniteGradient);
    }

    let total = config.warmup + config.samples;
    let mut draws = Array2::zeros((config.samples, p));
    let mut accepted_post_warmup = 0usize;
    let mut momentum = Array1::zeros(p);

    for iter in 0..total {
        for m in momentum.iter_mut() {
            *m = stream.standard_normal();
        }
        let h0 = -logp + 0.5 * momentum.dot(&momentum);

        let mut theta_prop = theta.clone();
        let mut p_prop = momentum.clone();
        let mut grad_prop = grad.clone();
        let eps = config.step_size;
        let mut diverged = false;

        p_prop.scaled_add(0.5 * eps, &grad_prop);
        for step in 0..config.leapfrog_steps {
            theta_prop.scaled_add(eps, &p_prop);
            let (lp, g) = target.logp_grad(&theta_prop);
            if !lp.is_finite() || g.iter().any(|v| !v.is_finite()) {
                diverged = true;
                break;
            }
            grad_prop = g;
            let half = if step + 1 == config.leapfrog_steps { 0.5 * eps } else { eps };
            p_prop.scaled_add(half, &grad_prop);
        }

        let mut accept = false;
        if !diverged {
            let (lp, _) = {
                let (lp, g) = target.logp_grad(&theta_prop);
                (lp, g)
            };
            let h1 = -lp + 0.5 * p_prop.dot(&p_prop);
            let log_ratio = h0 - h1;
            let u: f64 = stream.uniform01();
            if log_ratio >= 0.0 || u < log_ratio.exp() {
                accept = true;
                theta = theta_prop;
                let (lp2, g2) = target.logp_grad(&theta);
                logp = lp2;
                grad = g2;
            }
        }

        if iter >= config.warmup {
            if accept {
                accepted_post_warmup += 1;
            }
            draws.row_mut(iter - config.warmup).assign(&theta);
        }
    }

    let accept_rate = if config.samples > 0 {
        accepted_post_warmup as f64 / config.samples as f64
    } else {
        0.0
    };
    if accept_rate < 0.01 {
        return Err(SamplerError::ZeroAcceptance(accept_rate));
    }
    Ok(PosteriorSamples { draws, accept_rate, config: config.clone() })
}

/// Log posterior of an MLP under softmax-CE likelihood and an isotropic
/// N(0, prior_sd²) prior: the negative of the regularized cross-entropy.
pub struct BnnLogPosterior<'a> {
    pub spec: &'a MlpSpec,
    pub data: &'a LabeledDataset,
    pub prior_sd: f64,
}

impl LogDensity for BnnLogPosterior<'_> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn logp_grad(&self, theta: &Array1<f64>) -> (f64, Array1<f64>) {
        let pv = ParamVector { theta: theta.clone() };
        let lambda = 1.0 / (self.prior_sd * self.prior_sd);
        match mlp_loss_grad(self.spec, &pv, self.data, lambda) {
            Ok((loss, grad)) => (-loss, -grad),
            Err(_) => (f64::NEG_INFINITY, Array1::from_elem(theta.len(), f64::NAN)),
        }
    }
}

/// Predictive ensemble at one input from a set of posterior draws.
pub fn bnn_posterior_predict(
    samples: &PosteriorSamples,
    spec: &MlpSpec,
    x: &Array1<f64>,
) -> Result<PredictiveEnsemble, SamplerError> {
    if samples.draws.ncols() != spec.param_count() {
        return Err(SamplerError::DimensionMismatch(format!(
            "draws have {} parameters, spec needs {}",
            samples.draws.ncols(),
            spec.param_count()
        )));
    }
    let k = samples.num_draws();
    let mut members = Array2::zeros((k, spec.output_dim()));
    for i in 0..k {
        let theta = ParamVector { theta: samples.draws.row(i).to_owned() };
        let logits = mlp_forward(spec, &theta, x)?;
        members.row_mut(i).assign(&softmax(&logits));
    }
    Ok(PredictiveEnsemble::new(members, EnsembleSource::Hmc)?)
}

/// Predictive ensembles for a whole test set, evaluated draw-by-draw with
/// batched forward passes (one ensemble per test row).
pub fn bnn_predict_testset(
    samples: &PosteriorSamples,
    spec: &MlpSpec,
    inputs: &Array2<f64>,
) -> Result<Vec<PredictiveEnsemble>, SamplerError> {
    let k = samples.num_draws();
    let n = inputs.nrows();
    let c = spec.output_dim();
    let mut stacked = vec![Array2::zeros((k, c)); n];
    for i in 0..k {
        let theta = ParamVector { theta: samples.draws.row(i).to_owned() };
        let logits = mlp_forward_batch(spec, &theta, inputs)?;
        for (row_idx, row) in logits.rows().into_iter().enumerate() {
            stacked[row_idx].row_mut(i).assign(&softmax(&row.to_owned()));
        }
    }
    stacked
        .into_iter()
        .map(|m| PredictiveEnsemble::new(m, EnsembleSource::Hmc).map_err(SamplerError::from))
        .collect()
}

/// K stochastic forward passes with independently resampled dropout masks.
pub fn mcd_predict(
    spec: &MlpSpec,
    theta: &ParamVector,
    x: &Array1<f64>,
    p: f64,
    k: usize,
    stream: &mut RngStream,
) -> Result<PredictiveEnsemble, SamplerError> {
    if !(0.0..1.0).contains(&p) {
        return Err(SamplerError::InvalidRate(p));
    }
    let mut members = Array2::zeros((k, spec.output_dim()));
    for i in 0..k {
        let logits = mlp_forward_dropout(spec, theta, x, p, stream)?;
        members.row_mut(i).assign(&softmax(&logits));
    }
    Ok(PredictiveEnsemble::new(members, EnsembleSource::Mcd)?)
}

/// Trains M networks that differ only in their initialization streams.
/// Members train in parallel; the returned order matches the stream order.
pub fn deep_ensemble_train(
    spec: &MlpSpec,
    data: &LabeledDataset,
    config: &TrainConfig,
    init_streams: Vec<RngStream>,
) -> Result<Vec<ParamVector>, SamplerError> {
    init_streams
        .into_par_iter()
        .map(|mut stream| {
            let (theta, _) = train_map(spec, data, config, &mut stream)?;
            Ok(theta)
        })
        .collect()
}

/// Member predictions at one input combined into an ensemble.
pub fn deep_ensemble_predict(
    members: &[ParamVector],
    spec: &MlpSpec,
    x: &Array1<f64>,
) -> Result<PredictiveEnsemble, SamplerError> {
    let mut rows = Array2::zeros((members.len(), spec.output_dim()));
    for (i, theta) in members.iter().enumerate() {
        let logits = mlp_forward(spec, theta, x)?;
        rows.row_mut(i).assign(&softmax(&logits));
    }
    Ok(PredictiveEnsemble::new(rows, EnsembleSource::DeepEnsemble)?)
}
