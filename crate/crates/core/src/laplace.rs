//! Full-covariance linearized Laplace approximation with GGN curvature.
//!
//! The posterior surrogate is N(θ_MAP, Σ) with
//! Σ = (Σₙ JₙᵀΛ(fₙ)Jₙ + λI)⁻¹, where Λ(f) = diag(π) − ππᵀ is the softmax
//! Hessian of the negative log-likelihood and J the per-point Jacobian of
//! the logits. Pushing the Gaussian through the linearized network gives a
//! Gaussian over logits with covariance Σ_logit(x) = J_x Σ J_xᵀ, from which
//! three epistemic-uncertainty estimators follow:
//!
//! * `eu_logit` — variance in logit space. For the binary head this is the
//!   variance of the logit difference f₁ − f₀ (the scalar-sigmoid channel;
//!   softmax only sees the difference, and the plain trace would retain a
//!   λ⁻¹ contribution from directions the likelihood never constrains).
//!   The full C×C covariance and its trace remain available.
//! * `eu_var` — Monte Carlo variance of the class-1 probability, bounded
//!   by 0.25.
//! * `eu_ent` — Monte Carlo mutual information between predictions and
//!   parameters, computed by the same entropy decomposition used for every
//!   other ensemble in this crate.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{gen_two_moons, DatasetError, LabeledDataset};
use crate::linalg::{spd_inverse, sym_eigvals, JitterPolicy, LinalgError, SpdFactor, SymMatrix};
use crate::nnet::{
    mlp_forward, mlp_jacobian, softmax, train_map, MlpSpec, NnetError, ParamVector, TrainConfig,
};
use crate::rng::{streams, RngStream};
use crate::scaling::{CurvePoint, MetricKind, ScalingCurve};
use crate::uq::{categorical_covariance, decompose_entropy, EnsembleSource, PredictiveEnsemble, UqError};

#[derive(Debug, Error)]
pub enum LaplaceError {
    #[error("parameter count {got} exceeds the full-covariance cap {cap}")]
    ParameterCapExceeded { got: usize, cap: usize },
    #[error("need at least 2 Monte Carlo samples, got {0}")]
    InvalidSampleCount(usize),
    #[error("binary-head operation called with {0} output logits")]
    WrongHeadSize(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Uq(#[from] UqError),
}

/// Full covariance is only feasible for small heads; anything larger should
/// use structured curvature, which is out of scope here.
pub const DEFAULT_PARAM_CAP: usize = 500;

/// Softmax-link GGN block: Λ(f) = diag(π) − ππᵀ at the given logits.
/// PSD with zero row sums; for C = 2 the (0,0) entry is π(1−π).
pub fn lambda_softmax(logits: &Array1<f64>) -> SymMatrix {
    categorical_covariance(&softmax(logits))
}

/// Gaussian surrogate over the flat parameter vector.
#[derive(Debug, Clone)]
pub struct GgnPosterior {
    pub theta_map: ParamVector,
    pub precision: SymMatrix,
    pub cov: SymMatrix,
    pub prior_precision: f64,
    /// Lower Cholesky factor of the covariance, used for posterior draws.
    cov_chol: Array2<f64>,
}

impl GgnPosterior {
    pub fn dim(&self) -> usize {
        self.precision.dim()
    }
}

/// Assembles precision = Σₙ JₙᵀΛ(fₙ)Jₙ + λI, summing the per-point terms
/// in index order (a fixed reduction tree keeps runs bit-reproducible), and
/// inverts it for the covariance.
pub fn build_ggn_posterior(
    spec: &MlpSpec,
    theta_map: &ParamVector,
    data: &LabeledDataset,
    prior_precision: f64,
) -> Result<GgnPosterior, LaplaceError> {
    build_ggn_posterior_with_cap(spec, theta_map, data, prior_precision, DEFAULT_PARAM_CAP)
}

pub fn build_ggn_posterior_with_cap(
    spec: &MlpSpec,
    theta_map: &ParamVector,
    data: &LabeledDataset,
    prior_precision: f64,
    param_cap: usize,
) -> Result<GgnPosterior, LaplaceError> {
    let p = spec.param_count();
    if p > param_cap {
        return Err(LaplaceError::ParameterCapExceeded { got: p, cap: param_cap });
    }
    let mut precision = Array2::<f64>::zeros((p, p));
    for i in 0..data.len() {
        let x = data.inputs.row(i).to_owned();
        let jac = mlp_jacobian(spec, theta_map, &x)?;
        let logits = mlp_forward(spec, theta_map, &x)?;
        let lam = lambda_softmax(&logits);
        let m = lam.as_array().dot(&jac);
        precision += &jac.t().dot(&m);
    }
    let mut precision = SymMatrix::from_nearly_symmetric(precision)?;
    precision.add_scaled_identity(prior_precision);
    let cov = spd_inverse(&precision, &JitterPolicy::default())?.x;
    let cov_chol = SpdFactor::new(&cov, &JitterPolicy::default())?.lower().clone();
    Ok(GgnPosterior { theta_map: theta_map.clone(), precision, cov, prior_precision, cov_chol })
}

/// Gaussian over logits at one input: mean f(x; θ_MAP), covariance
/// Σ_logit = J Σ Jᵀ.
#[derive(Debug, Clone)]
pub struct LogitGaussian {
    pub mean: Array1<f64>,
    pub cov: SymMatrix,
}

impl LogitGaussian {
    pub fn num_classes(&self) -> usize {
        self.mean.len()
    }

    /// Trace of Σ_logit (summed per-logit variances).
    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }

    /// Scalar logit-space EU. For the binary head this is the variance of
    /// the logit difference f₁ − f₀ (the quantity the sigmoid sees); for
    /// larger heads it falls back to the trace.
    pub fn scalar_eu(&self) -> f64 {
        if self.num_classes() == 2 {
            let c = self.cov.as_array();
            (c[[0, 0]] + c[[1, 1]] - 2.0 * c[[0, 1]]).max(0.0)
        } else {
            self.trace()
        }
    }

    /// Class-1 probability of the mean logits (binary head).
    pub fn mean_class1_prob(&self) -> Result<f64, LaplaceError> {
        if self.num_classes() != 2 {
            return Err(LaplaceError::WrongHeadSize(self.num_classes()));
        }
        Ok(sigmoid(self.mean[1] - self.mean[0]))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Σ_logit(x) = J_x Σ J_xᵀ for a fitted posterior.
pub fn logit_covariance(
    post: &GgnPosterior,
    spec: &MlpSpec,
    x: &Array1<f64>,
) -> Result<LogitGaussian, LaplaceError> {
    let jac = mlp_jacobian(spec, &post.theta_map, x)?;
    if jac.ncols() != post.dim() {
        return Err(LaplaceError::DimensionMismatch(format!(
            "jacobian has {} columns, posterior dim {}",
            jac.ncols(),
            post.dim()
        )));
    }
    let mean = mlp_forward(spec, &post.theta_map, x)?;
    let cov = jac.dot(post.cov.as_array()).dot(&jac.t());
    Ok(LogitGaussian { mean, cov: SymMatrix::from_nearly_symmetric(cov)? })
}

/// Delta-method approximation of the probability-space variance for the
/// binary head: [π(1−π)]² · EU_logit with π the sigmoid of the mean logit
/// difference.
pub fn delta_method_eu(mean_logits: &Array1<f64>, eu_logit: f64) -> Result<f64, LaplaceError> {
    if mean_logits.len() != 2 {
        return Err(LaplaceError::WrongHeadSize(mean_logits.len()));
    }
    let pi = sigmoid(mean_logits[1] - mean_logits[0]);
    let g = pi * (1.0 - pi);
    Ok(g * g * eu_logit)
}

/// S parameter-space deviations δθ_s = L z_s with L Lᵀ = Σ, drawn once and
/// reused across test points so a sweep prices every input against the same
/// posterior sample set.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub deviations: Array2<f64>,
}

impl PosteriorDraws {
    pub fn sample(post: &GgnPosterior, s: usize, stream: &mut RngStream) -> Result<Self, LaplaceError> {
        if s < 2 {
            return Err(LaplaceError::InvalidSampleCount(s));
        }
        let p = post.dim();
        let mut z = Array1::zeros(p);
        let mut deviations = Array2::zeros((s, p));
        for k in 0..s {
            for i in 0..p {
                z[i] = stream.standard_normal();
            }
            deviations.row_mut(k).assign(&post.cov_chol.dot(&z));
        }
        Ok(Self { deviations })
    }

    pub fn num_samples(&self) -> usize {
        self.deviations.nrows()
    }
}

/// Per-input epistemic-uncertainty estimators of the GLM predictive.
#[derive(Debug, Clone, Copy)]
pub struct EuReport {
    /// Exact logit-space variance (binary: of the logit difference).
    pub eu_logit: f64,
    /// (S−1)-denominator MC variance of the class-1 probability.
    pub eu_var: f64,
    /// Delta-method approximation to `eu_var`.
    pub eu_var_delta: f64,
    /// MC mutual information (entropy decomposition of the sample set).
    pub eu_ent: f64,
    pub mc_samples: usize,
}

/// GLM predictive at `x` under shared posterior draws: linearized logits
/// f_lin = f(x; θ_MAP) + J δθ_s, softmaxed into an ensemble, plus the
/// estimator report.
pub fn glm_predictive_with_draws(
    post: &GgnPosterior,
    spec: &MlpSpec,
    x: &Array1<f64>,
    draws: &PosteriorDraws,
) -> Result<(PredictiveEnsemble, EuReport), LaplaceError> {
    let s = draws.num_samples();
    let jac = mlp_jacobian(spec, &post.theta_map, x)?;
    let logit_gaussian = {
        let mean = mlp_forward(spec, &post.theta_map, x)?;
        let cov = jac.dot(post.cov.as_array()).dot(&jac.t());
        LogitGaussian { mean, cov: SymMatrix::from_nearly_symmetric(cov)? }
    };
    let c = spec.output_dim();
    if c != 2 {
        return Err(LaplaceError::WrongHeadSize(c));
    }

    let delta_logits = draws.deviations.dot(&jac.t()); // S × C
    let mut members = Array2::zeros((s, c));
    for k in 0..s {
        let f = &logit_gaussian.mean + &delta_logits.row(k);
        members.row_mut(k).assign(&softmax(&f));
    }
    let ensemble = PredictiveEnsemble::new(members, EnsembleSource::LaplaceMc)?;

    // Unbiased sample variance of the class-1 probability.
    let p1 = ensemble.members().column(1).to_owned();
    let mean_p1 = p1.sum() / s as f64;
    let eu_var = p1.iter().map(|v| (v - mean_p1) * (v - mean_p1)).sum::<f64>() / (s as f64 - 1.0);

    let eu_logit = logit_gaussian.scalar_eu();
    let eu_var_delta = delta_method_eu(&logit_gaussian.mean, eu_logit)?;
    let eu_ent = decompose_entropy(&ensemble)?.eu;

    Ok((ensemble, EuReport { eu_logit, eu_var, eu_var_delta, eu_ent, mc_samples: s }))
}

/// GLM predictive with fresh draws from `stream` (S ≥ 2).
pub fn glm_predictive_mc(
    post: &GgnPosterior,
    spec: &MlpSpec,
    x: &Array1<f64>,
    s: usize,
    stream: &mut RngStream,
) -> Result<(PredictiveEnsemble, EuReport), LaplaceError> {
    let draws = PosteriorDraws::sample(post, s, stream)?;
    glm_predictive_with_draws(post, spec, x, &draws)
}

/// Extremes of the data-precision spectrum (precision − λI).
#[derive(Debug, Clone, Copy)]
pub struct SpectrumSummary {
    pub max_eig: f64,
    pub mean_eig: f64,
}

/// Eigenvalue summary of the accumulated data term. The data term is a sum
/// of PSD blocks, so negative values can only be rounding noise and are
/// clamped at zero.
pub fn hessian_spectrum(post: &GgnPosterior) -> SpectrumSummary {
    let mut data_term = post.precision.clone();
    data_term.add_scaled_identity(-post.prior_precision);
    let eigs = sym_eigvals(&data_term);
    let clamped: Vec<f64> = eigs.iter().map(|&e| e.max(0.0)).collect();
    let max_eig = clamped.last().copied().unwrap_or(0.0);
    let mean_eig = clamped.iter().sum::<f64>() / clamped.len().max(1) as f64;
    SpectrumSummary { max_eig, mean_eig }
}

/// Protocol configuration for the two-moons LLA sweep: nested training
/// sizes, a prior-precision grid, repeated folds, a fixed test set.
#[derive(Debug, Clone)]
pub struct LlaSweepConfig {
    pub n_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub folds: u32,
    pub hidden: Vec<usize>,
    pub noise_sd: f64,
    pub test_size: usize,
    pub test_shift: [f64; 2],
    pub mc_samples: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for LlaSweepConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![5, 10, 20, 50, 100, 200, 500],
            lambda_grid: vec![0.001, 0.01, 0.1, 1.0],
            folds: 3,
            hidden: vec![50],
            noise_sd: 0.1,
            test_size: 100,
            test_shift: [0.0, 0.0],
            mc_samples: 1000,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl LlaSweepConfig {
    pub fn mlp_spec(&self) -> MlpSpec {
        let mut sizes = vec![2];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(2);
        MlpSpec::new(sizes)
    }
}

/// Test-set-averaged metrics for one (λ, N, fold) cell.
#[derive(Debug, Clone, Copy)]
pub struct LlaCell {
    pub lambda: f64,
    pub n: usize,
    pub fold: u32,
    pub eu_logit: f64,
    pub eu_var: f64,
    pub eu_ent: f64,
    pub converged: bool,
}

/// Trains one MAP model on the nested prefix and returns its GGN posterior.
pub fn fit_lla_cell(
    spec: &MlpSpec,
    full_train: &LabeledDataset,
    n: usize,
    lambda: f64,
    train: &TrainConfig,
    init_stream: &mut RngStream,
) -> Result<(ParamVector, GgnPosterior, bool), LaplaceError> {
    let data = full_train.prefix(n);
    let config = TrainConfig { prior_precision: lambda, ..train.clone() };
    let (theta, report) = train_map(spec, &data, &config, init_stream)?;
    let post = build_ggn_posterior(spec, &theta, &data, lambda)?;
    Ok((theta, post, report.converged))
}

/// Runs the full (λ × N × fold) sweep: MAP training, GGN posterior, and the
/// three EU metrics averaged over the fixed test set. Cells run in
/// parallel; each owns its streams, so the result is deterministic.
pub fn lla_scaling_experiment(config: &LlaSweepConfig) -> Result<Vec<LlaCell>, LaplaceError> {
    let spec = config.mlp_spec();
    let n_max = *config.n_grid.iter().max().expect("nonempty n_grid");
    let test = {
        let mut s = RngStream::new(config.seed, streams::TEST_DATA);
        gen_two_moons(config.test_size, config.noise_sd, config.test_shift, &mut s)?
    };

    let mut cells: Vec<(usize, usize, u32)> = Vec::new(); // (lambda_idx, n_idx, fold)
    for fold in 0..config.folds {
        for (n_idx, _) in config.n_grid.iter().enumerate() {
            for (l_idx, _) in config.lambda_grid.iter().enumerate() {
                cells.push((l_idx, n_idx, fold));
            }
        }
    }

    let results: Result<Vec<LlaCell>, LaplaceError> = cells
        .par_iter()
        .map(|&(l_idx, n_idx, fold)| {
            let lambda = config.lambda_grid[l_idx];
            let n = config.n_grid[n_idx];
            let full_train = {
                let mut s = RngStream::new(config.seed, streams::train_data(fold));
                gen_two_moons(n_max, config.noise_sd, [0.0, 0.0], &mut s)?
            };
            let mut init = RngStream::new(config.seed, streams::init(fold, 0));
            let (_theta, post, converged) =
                fit_lla_cell(&spec, &full_train, n, lambda, &config.train, &mut init)?;
            let cell_id = (n_idx * config.lambda_grid.len() + l_idx) as u32;
            let mut mc = RngStream::new(config.seed, streams::mc(fold, cell_id));
            let draws = PosteriorDraws::sample(&post, config.mc_samples, &mut mc)?;
            let (mut sum_logit, mut sum_var, mut sum_ent) = (0.0, 0.0, 0.0);
            for i in 0..test.len() {
                let x = test.inputs.row(i).to_owned();
                let (_, report) = glm_predictive_with_draws(&post, &spec, &x, &draws)?;
                sum_logit += report.eu_logit;
                sum_var += report.eu_var;
                sum_ent += report.eu_ent;
            }
            let m = test.len() as f64;
            Ok(LlaCell {
                lambda,
                n,
                fold,
                eu_logit: sum_logit / m,
                eu_var: sum_var / m,
                eu_ent: sum_ent / m,
                converged,
            })
        })
        .collect();
    results
}

/// Groups sweep cells into one scaling curve per λ for the given metric,
/// preserving the λ-grid order.
pub fn lla_curves(cells: &[LlaCell], lambda_grid: &[f64], metric: MetricKind) -> Vec<(f64, ScalingCurve)> {
    lambda_grid
        .iter()
        .map(|&lambda| {
            let points = cells
                .iter()
                .filter(|c| c.lambda == lambda)
                .map(|c| CurvePoint {
                    n: c.n as f64,
                    value: match metric {
                        MetricKind::EuLogit => c.eu_logit,
                        MetricKind::EuVar => c.eu_var,
                        MetricKind::EuEnt => c.eu_ent,
                        _ => panic!("lla sweep only produces eu metrics"),
                    },
                    fold: c.fold,
                })
                .collect();
            (lambda, ScalingCurve::new(metric, points))
        })
        .collect()
}

/// Spectrum cell: data-precision eigenvalue summary at one (λ, N, fold).
#[derive(Debug, Clone, Copy)]
pub struct SpectrumCell {
    pub lambda: f64,
    pub n: usize,
    pub fold: u32,
    pub max_eig: f64,
    pub mean_eig: f64,
}

/// Hessian-spectrum protocol: same training pipeline as the sweep, but the
/// reported quantities are the extreme and average eigenvalues of the data
/// precision.
pub fn spectrum_experiment(config: &LlaSweepConfig) -> Result<Vec<SpectrumCell>, LaplaceError> {
    let spec = config.mlp_spec();
    let n_max = *config.n_grid.iter().max().expect("nonempty n_grid");
    let mut cells: Vec<(usize, usize, u32)> = Vec::new();
    for fold in 0..config.folds {
        for (n_idx, _) in config.n_grid.iter().enumerate() {
            for (l_idx, _) in config.lambda_grid.iter().enumerate() {
                cells.push((l_idx, n_idx, fold));
            }
        }
    }
    cells
        .par_iter()
        .map(|&(l_idx, n_idx, fold)| {
            let lambda = config.lambda_grid[l_idx];
            let n = config.n_grid[n_idx];
            let full_train = {
                let mut s = RngStream::new(config.seed, streams::train_data(fold));
                gen_two_moons(n_max, config.noise_sd, [0.0, 0.0], &mut s)?
            };
            let mut init = RngStream::new(config.seed, streams::init(fold, 0));
            let (_theta, post, _) = fit_lla_cell(&spec, &full_train, n, lambda, &config.train, &mut init)?;
            let spectrum = hessian_spectrum(&post);
            Ok(SpectrumCell { lambda, n, fold, max_eig: spectrum.max_eig, mean_eig: spectrum.mean_eig })
        })
        .collect()
}

/// Second-order expansion of the MC mutual information:
/// EU_ent ≈ ½ Tr(I(π̄) · Cov(π)) with I(π̄) = diag(1/π̄).
pub fn entropy_second_order(ensemble: &PredictiveEnsemble) -> Result<f64, LaplaceError> {
    let mean = ensemble.members().mean_axis(Axis(0)).expect("nonempty");
    let d = crate::uq::decompose_variance(ensemble)?;
    let mut acc = 0.0;
    for i in 0..mean.len() {
        acc += d.eu_cov.as_array()[[i, i]] / mean[i].max(1e-12);
    }
    Ok(0.5 * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetMeta, Labels};
    use ndarray::array;

    fn class_dataset(inputs: Array2<f64>, labels: Vec<usize>) -> LabeledDataset {
        LabeledDataset {
            inputs,
            labels: Labels::Classes(labels),
            meta: DatasetMeta { generator: "manual".into(), params: String::new(), seed: 0, stream_id: 0 },
        }
    }

    #[test]
    fn lambda_softmax_uniform_binary() {
        let lam = lambda_softmax(&array![0.0, 0.0]);
        let m = lam.as_array();
        assert!((m[[0, 0]] - 0.25).abs() < 1e-15);
        assert!((m[[0, 1]] + 0.25).abs() < 1e-15);
        assert!((m[[1, 1]] - 0.25).abs() < 1e-15);
        // Rows sum to zero.
        assert!((m[[0, 0]] + m[[0, 1]]).abs() < 1e-15);
    }

    #[test]
    fn lambda_softmax_saturated_head_vanishes() {
        let lam = lambda_softmax(&array![40.0, -40.0]);
        for v in lam.as_array().iter() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_softmax_three_class_uniform_spectrum() {
        // Closed form: diag(1/3) − (1/9)·ones has eigenvalues {0, 1/3, 1/3}.
        let lam = lambda_softmax(&array![0.0, 0.0, 0.0]);
        let eigs = sym_eigvals(&lam);
        assert!(eigs[0].abs() < 1e-12);
        assert!((eigs[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((eigs[2] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_gives_prior_posterior() {
        let spec = MlpSpec::new(vec![2, 3, 2]);
        let mut stream = RngStream::new(1, 0);
        let theta = ParamVector::init(&spec, &mut stream);
        let empty = class_dataset(Array2::zeros((0, 2)), vec![]);
        let lambda = 2.0;
        let post = build_ggn_posterior(&spec, &theta, &empty, lambda).unwrap();
        let p = spec.param_count();
        for i in 0..p {
            for j in 0..p {
                let want_prec = if i == j { lambda } else { 0.0 };
                let want_cov = if i == j { 1.0 / lambda } else { 0.0 };
                assert!((post.precision.as_array()[[i, j]] - want_prec).abs() < 1e-12);
                assert!((post.cov.as_array()[[i, j]] - want_cov).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn duplicated_dataset_doubles_data_term() {
        let spec = MlpSpec::new(vec![2, 4, 2]);
        let mut stream = RngStream::new(2, 0);
        let theta = ParamVector::init(&spec, &mut stream);
        let inputs = Array2::from_shape_fn((10, 2), |_| stream.standard_normal());
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let data = class_dataset(inputs.clone(), labels.clone());
        let mut doubled_inputs = Array2::zeros((20, 2));
        doubled_inputs.slice_mut(ndarray::s![..10, ..]).assign(&inputs);
        doubled_inputs.slice_mut(ndarray::s![10.., ..]).assign(&inputs);
        let mut doubled_labels = labels.clone();
        doubled_labels.extend_from_slice(&labels);
        let doubled = class_dataset(doubled_inputs, doubled_labels);

        let lambda = 0.7;
        let p1 = build_ggn_posterior(&spec, &theta, &data, lambda).unwrap();
        let p2 = build_ggn_posterior(&spec, &theta, &doubled, lambda).unwrap();
        let p = spec.param_count();
        for i in 0..p {
            for j in 0..p {
                let d1 = p1.precision.as_array()[[i, j]] - if i == j { lambda } else { 0.0 };
                let d2 = p2.precision.as_array()[[i, j]] - if i == j { lambda } else { 0.0 };
                assert!((d2 - 2.0 * d1).abs() < 1e-9, "entry ({i},{j}): {d2} vs 2*{d1}");
            }
        }
    }

    #[test]
    fn ggn_matches_finite_difference_jacobian_oracle() {
        // Rebuild the precision with central-difference Jacobians.
        let spec = MlpSpec::new(vec![2, 4, 2]);
        let mut stream = RngStream::new(3, 0);
        let theta = ParamVector::init(&spec, &mut stream);
        let inputs = Array2::from_shape_fn((20, 2), |_| stream.standard_normal());
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let data = class_dataset(inputs.clone(), labels);
        let lambda = 0.5;
        let post = build_ggn_posterior(&spec, &theta, &data, lambda).unwrap();

        let p = spec.param_count();
        let h = 1e-5;
        let mut oracle = Array2::<f64>::zeros((p, p));
        for n in 0..20 {
            let x = inputs.row(n).to_owned();
            let mut jac = Array2::zeros((2, p));
            for i in 0..p {
                let mut tp = theta.clone();
                tp.theta[i] += h;
                let fp = mlp_forward(&spec, &tp, &x).unwrap();
                let mut tm = theta.clone();
                tm.theta[i] -= h;
                let fm = mlp_forward(&spec, &tm, &x).unwrap();
                for c in 0..2 {
                    jac[[c, i]] = (fp[c] - fm[c]) / (2.0 * h);
                }
            }
            let logits = mlp_forward(&spec, &theta, &x).unwrap();
            let lam = lambda_softmax(&logits);
            oracle += &jac.t().dot(lam.as_array()).dot(&jac);
        }
        for i in 0..p {
            oracle[[i, i]] += lambda;
        }
        let scale = oracle.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut max_rel = 0.0f64;
        for i in 0..p {
            for j in 0..p {
                let rel = (post.precision.as_array()[[i, j]] - oracle[[i, j]]).abs() / scale;
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel < 1e-4, "max relative deviation {max_rel}");
    }

    #[test]
    fn covariance_inverts_precision() {
        let spec = MlpSpec::new(vec![2, 4, 2]);
        let mut stream = RngStream::new(4, 0);
        let theta = ParamVector::init(&spec, &mut stream);
        let inputs = Array2::from_shape_fn((15, 2), |_| stream.standard_normal());
        let labels: Vec<usize> = (0..15).map(|i| i % 2).collect();
        let data = class_dataset(inputs, labels);
        let post = build_ggn_posterior(&spec, &theta, &data, 0.3).unwrap();
        let prod = post.cov.as_array().dot(post.precision.as_array());
        let p = spec.param_count();
        for i in 0..p {
            for j in 0..p {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[[i, j]] - want).abs() < 1e-6, "({i},{j}): {}", prod[[i, j]]);
            }
        }
    }

    #[test]
    fn parameter_cap_is_enforced() {
        let spec = MlpSpec::new(vec![2, 200, 2]); // P = 1002 > 500
        let theta = ParamVector::zeros(&spec);
        let data = class_dataset(Array2::zeros((0, 2)), vec![]);
        assert!(matches!(
            build_ggn_posterior(&spec, &theta, &data, 1.0),
            Err(LaplaceError::ParameterCapExceeded { .. })
        ));
    }

    #[test]
    fn prior_only_logit_covariance_identities() {
        let spec = MlpSpec::new(vec![2, 5, 2]);
        let mut stream = RngStream::new(5, 0);
        let theta = ParamVector::init(&spec, &mut stream);
        let empty = class_dataset(Array2::zeros((0, 2)), vec![]);
        let lambda = 4.0;
        let post = build_ggn_posterior(&spec, &theta, &empty, lambda).unwrap();
        let x = array![0.7, -0.2];
        let lg = logit_covariance(&post, &spec, &x).unwrap();
        let jac = mlp_jacobian(&spec, &theta, &x).unwrap();
        // trace(Σ_logit) = λ⁻¹ ‖J‖²_F and scalar EU = λ⁻¹ ‖dᵀJ‖².
        let fro: f64 = jac.iter().map(|v| v * v).sum();
        assert!((lg.trace() - fro / lambda).abs() < 1e-10 * fro.max(1.0));
        let diff = &jac.row(1).to_owned() - &jac.row(0).to_owned();
        let want = diff.dot(&diff) / lambda;
        assert!((lg.scalar_eu() - want).abs() < 1e-10 * want.max(1.0));
    }

    #[test]
    fn zero_logit_covariance_means_zero_eu() {
        // J = 0 collapses Σ_logit to the zero matrix, and with it every
        // scalar summary.
        let lg = LogitGaussian { mean: array![0.3, -0.3], cov: SymMatrix::zeros(2) };
        assert_eq!(lg.scalar_eu(), 0.0);
        assert_eq!(lg.trace(), 0.0);
    }

    #[test]
    fn orthogonal_test_jacobian_reduces_to_prior_term() {
        // Linear softmax head: g_n = ∇(f0 − f1) couples to a test point
        // through x*ᵀx_n + 1, which vanishes for x_n = (1, 0), x* = (−1, t).
        let spec = MlpSpec::new(vec![2, 2]);
        let theta = ParamVector::zeros(&spec);
        let n = 40;
        let inputs = Array2::from_shape_fn((n, 2), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let data = class_dataset(inputs, labels);
        let lambda = 0.8;
        let post = build_ggn_posterior(&spec, &theta, &data, lambda).unwrap();
        let x_star = array![-1.0, 0.7];
        let lg = logit_covariance(&post, &spec, &x_star).unwrap();
        let jac = mlp_jacobian(&spec, &theta, &x_star).unwrap();
        let prior_term = jac.dot(&jac.t()) / lambda;
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (lg.cov.as_array()[[i, j]] - prior_term[[i, j]]).abs() < 1e-9,
                    "({i},{j}): {} vs {}",
                    lg.cov.as_array()[[i, j]],
                    prior_term[[i, j]]
                );
            }
        }
    }

    #[test]
    fn eu_logit_roughly_halves_on_duplicated_data() {
        let spec = MlpSpec::new(vec![2, 8, 2]);
        let mut stream = RngStream::new(6, 0);
        let theta = ParamVector::init(&spec, &mut stream);
        let n = 60;
        let inputs = Array2::from_shape_fn((n, 2), |_| stream.standard_normal());
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let data = class_dataset(inputs.clone(), labels.clone());
        let mut doubled_inputs = Array2::zeros((2 * n, 2));
        doubled_inputs.slice_mut(ndarray::s![..n, ..]).assign(&inputs);
        doubled_inputs.slice_mut(ndarray::s![n.., ..]).assign(&inputs);
        let mut doubled_labels = labels.clone();
        doubled_labels.extend_from_slice(&labels);
        let doubled = class_dataset(doubled_inputs, doubled_labels);

        // Data-dominated regime: negligible prior precision.
        let lambda = 1e-6;
        let p1 = build_ggn_posterior(&spec, &theta, &data, lambda).unwrap();
        let p2 = build_ggn_posterior(&spec, &theta, &doubled, lambda).unwrap();
        let x = array![0.4, -0.9];
        let e1 = logit_covariance(&p1, &spec, &x).unwrap().scalar_eu();
        let e2 = logit_covariance(&p2, &spec, &x).unwrap().scalar_eu();
        let ratio = e2 / e1;
        assert!((ratio - 0.5).abs() < 0.15 * 0.5, "ratio {ratio}");
    }

    #[test]
    fn delta_method_closed_forms() {
        assert!((delta_method_eu(&array![0.0, 0.0], 1.0).unwrap() - 0.0625).abs() < 1e-15);
        // Saturated head: the sigmoid gradient vanishes.
        let v = delta_method_eu(&array![-30.0, 30.0], 10.0).unwrap();
        assert!(v < 1e-20);
        assert!(matches!(
            delta_method_eu(&array![0.0, 0.0, 0.0], 1.0),
            Err(LaplaceError::WrongHeadSize(3))
        ));
    }

    #[test]
    fn collapsed_posterior_produces_zero_mc_spread() {
        let spec = MlpSpec::new(vec![2, 3, 2]);
        let mut stream = RngStream::new(7, 0);
        let theta = ParamVector::init(&spec, &mut stream);
        let empty = class_dataset(Array2::zeros((0, 2)), vec![]);
        // λ = 1e12 collapses the prior-only posterior: draws deviate by
        // ~1e-6, so probability-space spreads sit at squared scale.
        let post = build_ggn_posterior(&spec, &theta, &empty, 1e12).unwrap();
        let mut mc = RngStream::new(7, 1);
        let (ensemble, report) = glm_predictive_mc(&post, &spec, &array![0.3, 0.3], 500, &mut mc).unwrap();
        assert_eq!(ensemble.num_members(), 500);
        assert!(report.eu_var < 1e-12, "eu_var {}", report.eu_var);
        assert!(report.eu_ent < 1e-9, "eu_ent {}", report.eu_ent);
    }

    #[test]
    fn mc_sample_count_is_validated() {
        let spec = MlpSpec::new(vec![2, 3, 2]);
        let theta = ParamVector::zeros(&spec);
        let empty = class_dataset(Array2::zeros((0, 2)), vec![]);
        let post = build_ggn_posterior(&spec, &theta, &empty, 1.0).unwrap();
        let mut mc = RngStream::new(7, 1);
        assert!(matches!(
            glm_predictive_mc(&post, &spec, &array![0.0, 0.0], 1, &mut mc),
            Err(LaplaceError::InvalidSampleCount(1))
        ));
    }

    #[test]
    fn eu_var_matches_high_s_reference() {
        let spec = MlpSpec::new(vec![2, 6, 2]);
        let mut stream = RngStream::new(8, 0);
        let theta = ParamVector::init(&spec, &mut stream);
        let inputs = Array2::from_shape_fn((30, 2), |_| stream.standard_normal());
        let labels: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let data = class_dataset(inputs, labels);
        let post = build_ggn_posterior(&spec, &theta, &data, 0.5).unwrap();
        let x = array![0.2, 0.5];
        // High-S reference run.
        let mut ref_stream = RngStream::new(8, 10);
        let (_, reference) = glm_predictive_mc(&post, &spec, &x, 1_000_000, &mut ref_stream).unwrap();
        let mut mc = RngStream::new(8, 11);
        let (_, report) = glm_predictive_mc(&post, &spec, &x, 2000, &mut mc).unwrap();
        // MC standard error of a variance estimate ~ eu_var * sqrt(2/S).
        let se = reference.eu_var * (2.0f64 / 2000.0).sqrt();
        assert!(
            (report.eu_var - reference.eu_var).abs() <= 3.0 * se,
            "{} vs {} (3se = {})",
            report.eu_var,
            reference.eu_var,
            3.0 * se
        );
        // Entropy EU bounds.
        assert!(report.eu_ent >= 0.0 && report.eu_ent <= (2.0f64).ln() + 1e-9);
    }

    #[test]
    fn eu_ent_equals_shared_entropy_decomposition() {
        let spec = MlpSpec::new(vec![2, 5, 2]);
        let mut stream = RngStream::new(9, 0);
        let theta = ParamVector::init(&spec, &mut stream);
        let inputs = Array2::from_shape_fn((20, 2), |_| stream.standard_normal());
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let data = class_dataset(inputs, labels);
        let post = build_ggn_posterior(&spec, &theta, &data, 1.0).unwrap();
        let mut mc = RngStream::new(9, 1);
        let (ensemble, report) = glm_predictive_mc(&post, &spec, &array![0.1, -0.4], 256, &mut mc).unwrap();
        let triple = decompose_entropy(&ensemble).unwrap();
        assert_eq!(report.eu_ent.to_bits(), triple.eu.to_bits());
    }

    #[test]
    fn spectrum_of_empty_data_is_zero_and_doubles_with_data() {
        let spec = MlpSpec::new(vec![2, 4, 2]);
        let mut stream = RngStream::new(10, 0);
        let theta = ParamVector::init(&spec, &mut stream);
        let empty = class_dataset(Array2::zeros((0, 2)), vec![]);
        let post = build_ggn_posterior(&spec, &theta, &empty, 1.0).unwrap();
        let s = hessian_spectrum(&post);
        assert!(s.max_eig.abs() < 1e-12);
        assert!(s.mean_eig.abs() < 1e-12);

        let inputs = Array2::from_shape_fn((12, 2), |_| stream.standard_normal());
        let labels: Vec<usize> = (0..12).map(|i| i % 2).collect();
        let data = class_dataset(inputs.clone(), labels.clone());
        let post1 = build_ggn_posterior(&spec, &theta, &data, 1.0).unwrap();
        let mut doubled_inputs = Array2::zeros((24, 2));
        doubled_inputs.slice_mut(ndarray::s![..12, ..]).assign(&inputs);
        doubled_inputs.slice_mut(ndarray::s![12.., ..]).assign(&inputs);
        let mut doubled_labels = labels.clone();
        doubled_labels.extend_from_slice(&labels);
        let post2 = build_ggn_posterior(&spec, &theta, &class_dataset(doubled_inputs, doubled_labels), 1.0)
            .unwrap();
        let s1 = hessian_spectrum(&post1);
        let s2 = hessian_spectrum(&post2);
        assert!((s2.max_eig - 2.0 * s1.max_eig).abs() < 1e-8 * s1.max_eig.max(1.0));
        assert!((s2.mean_eig - 2.0 * s1.mean_eig).abs() < 1e-8 * s1.mean_eig.max(1.0));
    }
}
