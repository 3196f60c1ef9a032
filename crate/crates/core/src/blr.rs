//! Exact conjugate Bayesian linear regression.
//!
//! With a Gaussian prior N(m₀, S₀) and Gaussian noise σ², the posterior is
//! N(m_N, S_N) with S_N = (σ⁻²ΦᵀΦ + S₀⁻¹)⁻¹ and
//! m_N = S_N (S₀⁻¹ m₀ + σ⁻² Φᵀ y). The predictive at x* is Gaussian with
//! variance σ² + φ(x*)ᵀ S_N φ(x*), which splits the total uncertainty into
//! the aleatoric noise part and the epistemic quadratic form. The module
//! also carries the large-N entropy expansion and the generalization-error
//! decomposition G_N = AU + KL used to cross-check the 1/N contraction.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::dataset::LabeledDataset;
use crate::linalg::{
    spd_inverse, spd_solve_vec, JitterPolicy, LinalgError, SpdFactor, SymMatrix,
};
use crate::rng::RngStream;
use crate::uq::{gaussian_entropy, gaussian_kl, UqError};

#[derive(Debug, Error)]
pub enum BlrError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Uq(#[from] UqError),
    #[error("dataset has no real targets")]
    MissingTargets,
}

/// Basis family mapping an input to a feature vector.
#[derive(Debug, Clone)]
pub enum Basis {
    /// φ(x) = x.
    Identity,
    /// Powers 1, x, x², ... of a scalar input.
    Polynomial { degree: usize },
    /// Fixed random tanh features drawn once: φ_j(x) = tanh(w_jᵀx + b_j).
    RandomFeatures { weights: Array2<f64>, biases: Array1<f64> },
}

impl Basis {
    /// Fixed random-feature basis drawn from `stream`.
    pub fn random_features(input_dim: usize, num_features: usize, stream: &mut RngStream) -> Self {
        let weights = Array2::from_shape_fn((num_features, input_dim), |_| stream.standard_normal());
        let biases = Array1::from_iter((0..num_features).map(|_| stream.standard_normal()));
        Basis::RandomFeatures { weights, biases }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Basis::Identity => input_dim,
            Basis::Polynomial { degree } => degree + 1,
            Basis::RandomFeatures { weights, .. } => weights.nrows(),
        }
    }

    pub fn apply(&self, x: &Array1<f64>) -> Result<Array1<f64>, BlrError> {
        match self {
            Basis::Identity => Ok(x.clone()),
            Basis::Polynomial { degree } => {
                if x.len() != 1 {
                    return Err(BlrError::DimensionMismatch(format!(
                        "polynomial basis needs scalar inputs, got dim {}",
                        x.len()
                    )));
                }
                let mut phi = Array1::zeros(degree + 1);
                let mut p = 1.0;
                for j in 0..=*degree {
                    phi[j] = p;
                    p *= x[0];
                }
                Ok(phi)
            }
            Basis::RandomFeatures { weights, biases } => {
                if x.len() != weights.ncols() {
                    return Err(BlrError::DimensionMismatch(format!(
                        "random features expect dim {}, got {}",
                        weights.ncols(),
                        x.len()
                    )));
                }
                let z = weights.dot(x) + biases;
                Ok(z.mapv(f64::tanh))
            }
        }
    }
}

/// Conjugate model: basis, Gaussian prior and known noise variance.
#[derive(Debug, Clone)]
pub struct BlrModel {
    pub basis: Basis,
    pub prior_mean: Array1<f64>,
    pub prior_cov: SymMatrix,
    pub noise_var: f64,
}

impl BlrModel {
    /// Standard-normal prior (m₀ = 0, S₀ = I) over `p` weights.
    pub fn with_default_prior(basis: Basis, p: usize, noise_var: f64) -> Self {
        Self {
            basis,
            prior_mean: Array1::zeros(p),
            prior_cov: SymMatrix::identity(p),
            noise_var,
        }
    }

    fn feature_matrix(&self, data: &LabeledDataset) -> Result<Array2<f64>, BlrError> {
        let p = self.prior_mean.len();
        let mut phi = Array2::zeros((data.len(), p));
        for (i, row) in data.inputs.rows().into_iter().enumerate() {
            let f = self.basis.apply(&row.to_owned())?;
            if f.len() != p {
                return Err(BlrError::DimensionMismatch(format!(
                    "feature dim {} does not match prior dim {p}",
                    f.len()
                )));
            }
            phi.row_mut(i).assign(&f);
        }
        Ok(phi)
    }
}

/// Gaussian posterior over the weights.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: Array1<f64>,
    pub cov: SymMatrix,
}

/// Predictive Gaussian at one test input, with the variance split into its
/// aleatoric (σ²) and epistemic (φᵀ S_N φ) parts.
#[derive(Debug, Clone, Copy)]
pub struct PredictiveGaussian {
    pub mean: f64,
    pub variance: f64,
    pub aleatoric_part: f64,
    pub epistemic_part: f64,
}

impl PredictiveGaussian {
    /// Total uncertainty: Gaussian entropy of the predictive.
    pub fn tu(&self) -> f64 {
        gaussian_entropy(self.variance).expect("predictive variance is positive")
    }

    /// Aleatoric entropy ½ ln(2πe σ²).
    pub fn au(&self) -> f64 {
        gaussian_entropy(self.aleatoric_part).expect("noise variance is positive")
    }

    /// Entropy-gap epistemic part, TU − AU = ½ ln(1 + EU_var/σ²).
    pub fn eu_entropy(&self) -> f64 {
        0.5 * (1.0 + self.epistemic_part / self.aleatoric_part).ln()
    }
}

/// Closed-form conjugate update. The posterior covariance is obtained by
/// solving against the accumulated precision; ΦᵀΦ is never inverted on its
/// own.
pub fn blr_fit(model: &BlrModel, data: &LabeledDataset) -> Result<GaussianPosterior, BlrError> {
    let targets = data.targets().ok_or(BlrError::MissingTargets)?;
    let p = model.prior_mean.len();
    let policy = JitterPolicy::default();
    let prior_precision = spd_inverse(&model.prior_cov, &policy)?.x;

    let mut precision = prior_precision.clone();
    let mut rhs = prior_precision.matvec(&model.prior_mean);
    if !data.is_empty() {
        let phi = model.feature_matrix(data)?;
        let y = Array1::from_vec(targets.to_vec());
        let gram = phi.t().dot(&phi);
        let mut data_term = SymMatrix::from_nearly_symmetric(gram)?;
        data_term.scale(1.0 / model.noise_var);
        precision.add_assign(&data_term)?;
        rhs += &(phi.t().dot(&y) / model.noise_var);
    }
    let cov = spd_inverse(&precision, &policy)?.x;
    let mean = spd_solve_vec(&precision, &rhs, &policy)?.x;
    debug_assert_eq!(mean.len(), p);
    Ok(GaussianPosterior { mean, cov })
}

/// Predictive Gaussian at `x_star` under a fitted posterior.
pub fn blr_predict(
    post: &GaussianPosterior,
    model: &BlrModel,
    x_star: &Array1<f64>,
) -> Result<PredictiveGaussian, BlrError> {
    let phi = model.basis.apply(x_star)?;
    if phi.len() != post.mean.len() {
        return Err(BlrError::DimensionMismatch(format!(
            "feature dim {} vs posterior dim {}",
            phi.len(),
            post.mean.len()
        )));
    }
    let epistemic = post.cov.quad_form(&phi);
    Ok(PredictiveGaussian {
        mean: post.mean.dot(&phi),
        variance: model.noise_var + epistemic,
        aleatoric_part: model.noise_var,
        epistemic_part: epistemic,
    })
}

/// Large-N expansion of the predictive entropy:
/// ½ ln(2πe σ²) + φ(x*)ᵀ Σ_Φ⁻¹ φ(x*) / (2N).
pub fn blr_tu_asymptotic(
    phi_star: &Array1<f64>,
    n: usize,
    feature_cov: &SymMatrix,
    noise_var: f64,
) -> Result<f64, BlrError> {
    if phi_star.len() != feature_cov.dim() {
        return Err(BlrError::DimensionMismatch(format!(
            "feature dim {} vs covariance dim {}",
            phi_star.len(),
            feature_cov.dim()
        )));
    }
    let solved = spd_solve_vec(feature_cov, phi_star, &JitterPolicy::default())?.x;
    let quad = phi_star.dot(&solved);
    Ok(gaussian_entropy(noise_var)? + quad / (2.0 * n as f64))
}

/// Generalization error `G_N` and its aleatoric + KL split for the
/// identity-basis model against a known true process.
#[derive(Debug, Clone, Copy)]
pub struct GeneralizationError {
    pub g_n: f64,
    pub au: f64,
    pub kl: f64,
}

/// `G_N = H[p] + KL[p ‖ q_N]` where `p = N(θ_trueᵀx, σ_true²)` is the true
/// conditional and `q_N = N(m_Nᵀx, σ_true² + xᵀ S_N x)` the posterior
/// predictive. Identity basis only.
pub fn blr_generalization_error(
    post: &GaussianPosterior,
    model: &BlrModel,
    theta_true: &Array1<f64>,
    sigma_true_sq: f64,
    x_next: &Array1<f64>,
) -> Result<GeneralizationError, BlrError> {
    if !matches!(model.basis, Basis::Identity) {
        return Err(BlrError::DimensionMismatch(
            "generalization error is defined for the identity basis".into(),
        ));
    }
    if x_next.len() != post.mean.len() {
        return Err(BlrError::DimensionMismatch(format!(
            "input dim {} vs posterior dim {}",
            x_next.len(),
            post.mean.len()
        )));
    }
    let mu_true = theta_true.dot(x_next);
    let mu_pred = post.mean.dot(x_next);
    let sigma_pred_sq = sigma_true_sq + post.cov.quad_form(x_next);
    let au = gaussian_entropy(sigma_true_sq)?;
    let kl = gaussian_kl(mu_true, sigma_true_sq, mu_pred, sigma_pred_sq)?;
    Ok(GeneralizationError { g_n: au + kl, au, kl })
}

/// Predictive variances on a grid of probe points for every prefix size
/// N = 0..=data.len(). Row N holds σ²_N(x) for each probe; the precision is
/// accumulated one rank-1 data term at a time so successive rows share all
/// earlier terms exactly.
pub fn blr_contraction_trace(
    model: &BlrModel,
    data: &LabeledDataset,
    x_grid: &[Array1<f64>],
) -> Result<Vec<Vec<f64>>, BlrError> {
    let targets = data.targets().ok_or(BlrError::MissingTargets)?;
    let _ = targets;
    let p = model.prior_mean.len();
    let policy = JitterPolicy::default();
    let mut precision = spd_inverse(&model.prior_cov, &policy)?.x;
    let probes: Vec<Array1<f64>> = x_grid
        .iter()
        .map(|x| model.basis.apply(x))
        .collect::<Result<_, _>>()?;

    let mut out = Vec::with_capacity(data.len() + 1);
    let variances = |prec: &SymMatrix| -> Result<Vec<f64>, BlrError> {
        let factor = SpdFactor::new(prec, &policy)?;
        probes
            .iter()
            .map(|phi| {
                let s = factor.solve_vec(phi);
                Ok(model.noise_var + phi.dot(&s))
            })
            .collect()
    };
    out.push(variances(&precision)?);
    for i in 0..data.len() {
        let phi = model.basis.apply(&data.inputs.row(i).to_owned())?;
        if phi.len() != p {
            return Err(BlrError::DimensionMismatch("feature dim".into()));
        }
        let mut rank1 = Array2::zeros((p, p));
        for a in 0..p {
            for b in 0..p {
                rank1[[a, b]] = phi[a] * phi[b] / model.noise_var;
            }
        }
        precision.add_assign(&SymMatrix::from_nearly_symmetric(rank1)?)?;
        out.push(variances(&precision)?);
    }
    Ok(out)
}
