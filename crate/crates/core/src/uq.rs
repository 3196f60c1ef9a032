//! Decomposition of predictive ensembles into total, aleatoric and
//! epistemic uncertainty.
//!
//! The entropy route: TU is the Shannon entropy of the ensemble-averaged
//! predictive distribution, AU the average entropy of the members, and
//! EU = TU − AU (the mutual information between prediction and parameters).
//! The variance route applies the law of total variance to the one-hot
//! target, giving C×C covariance matrices with the same additive split.
//! All entropies are in nats.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SymMatrix;

#[derive(Debug, Error)]
pub enum UqError {
    #[error("probability vector violates simplex constraints: {0}")]
    InvalidSimplex(String),
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error("epistemic covariance is undefined for a single member")]
    SingleMember,
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("empty list of uncertainty triples")]
    EmptyList,
}

/// Probabilities are clamped here before taking logs so that one-hot
/// members are legal inputs and never produce NaN.
const PROB_FLOOR: f64 = 1e-12;

/// Point on the C-class probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Array1<f64>,
}

impl ProbVector {
    pub fn new(probs: Array1<f64>) -> Result<Self, UqError> {
        if probs.is_empty() {
            return Err(UqError::InvalidSimplex("empty vector".into()));
        }
        for &p in probs.iter() {
            if !(0.0..=1.0 + 1e-9).contains(&p) || !p.is_finite() {
                return Err(UqError::InvalidSimplex(format!("entry {p} outside [0, 1]")));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(UqError::InvalidSimplex(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &Array1<f64> {
        &self.probs
    }
}

/// Where an ensemble of predictive distributions came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleSource {
    Mcd,
    DeepEnsemble,
    Hmc,
    LaplaceMc,
}

/// K predictive distributions over C classes for one input, one row per
/// ensemble member or stochastic pass.
#[derive(Debug, Clone)]
pub struct PredictiveEnsemble {
    members: Array2<f64>,
    pub source: EnsembleSource,
}

impl PredictiveEnsemble {
    pub fn new(members: Array2<f64>, source: EnsembleSource) -> Result<Self, UqError> {
        if members.nrows() == 0 {
            return Err(UqError::EmptyEnsemble);
        }
        for row in members.rows() {
            ProbVector::new(row.to_owned())?;
        }
        Ok(Self { members, source })
    }

    pub fn num_members(&self) -> usize {
        self.members.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.members.ncols()
    }

    pub fn members(&self) -> &Array2<f64> {
        &self.members
    }
}

/// (TU, AU, EU) in nats. `eu` is kept raw (it can be a hair below zero at
/// finite precision); use [`UncertaintyTriple::eu_clamped`] for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyTriple {
    pub tu: f64,
    pub au: f64,
    pub eu: f64,
}

impl UncertaintyTriple {
    pub fn eu_clamped(&self) -> f64 {
        self.eu.max(0.0)
    }
}

/// Law-of-total-variance split of the one-hot target covariance.
#[derive(Debug, Clone)]
pub struct MomentDecomposition {
    pub tu_cov: SymMatrix,
    pub au_cov: SymMatrix,
    pub eu_cov: SymMatrix,
}

/// Shannon entropy in nats, with 0·ln 0 = 0.
pub fn shannon_entropy(p: &ProbVector) -> f64 {
    entropy_of_slice(p.probs().as_slice().expect("contiguous"))
}

fn entropy_of_slice(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        h -= p * p.max(PROB_FLOOR).ln();
    }
    h
}

/// Sum in ascending value order so the result is invariant (bit-exact)
/// under permutation of the addends.
fn permutation_stable_sum(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

/// Entropy-based decomposition: TU from the row-mean distribution, AU as
/// the mean member entropy, EU as their difference.
pub fn decompose_entropy(ensemble: &PredictiveEnsemble) -> Result<UncertaintyTriple, UqError> {
    let k = ensemble.num_members();
    if k == 0 {
        return Err(UqError::EmptyEnsemble);
    }
    let c = ensemble.num_classes();
    let members = ensemble.members();

    let mut mean = vec![0.0; c];
    let mut col = vec![0.0; k];
    for j in 0..c {
        for i in 0..k {
            col[i] = members[[i, j]];
        }
        mean[j] = permutation_stable_sum(&mut col) / k as f64;
    }
    let tu = entropy_of_slice(&mean);

    let mut entropies: Vec<f64> = (0..k)
        .map(|i| entropy_of_slice(members.row(i).as_slice().expect("contiguous")))
        .collect();
    let au = permutation_stable_sum(&mut entropies) / k as f64;

    Ok(UncertaintyTriple { tu, au, eu: tu - au })
}

/// Covariance of a categorical distribution, `diag(p) − p pᵀ`. This is the
/// per-member conditional covariance of the one-hot target and doubles as
/// the softmax Fisher/GGN block.
pub fn categorical_covariance(probs: &Array1<f64>) -> SymMatrix {
    let c = probs.len();
    let mut m = Array2::zeros((c, c));
    for i in 0..c {
        for j in 0..c {
            let v = if i == j { probs[i] * (1.0 - probs[i]) } else { -probs[i] * probs[j] };
            m[[i, j]] = v;
        }
    }
    SymMatrix::from_nearly_symmetric(m).expect("square by construction")
}

/// Variance-based decomposition (law of total variance on the one-hot
/// target): AU is the mean conditional covariance, EU the population
/// covariance of the member means, TU their sum (an exact identity).
pub fn decompose_variance(ensemble: &PredictiveEnsemble) -> Result<MomentDecomposition, UqError> {
    let k = ensemble.num_members();
    if k == 0 {
        return Err(UqError::EmptyEnsemble);
    }
    if k < 2 {
        return Err(UqError::SingleMember);
    }
    let c = ensemble.num_classes();
    let members = ensemble.members();

    let mut au = Array2::<f64>::zeros((c, c));
    for i in 0..k {
        au += categorical_covariance(&members.row(i).to_owned()).as_array();
    }
    au /= k as f64;

    let mean = members.mean_axis(ndarray::Axis(0)).expect("nonempty");
    let mut eu = Array2::<f64>::zeros((c, c));
    for i in 0..k {
        let d = &members.row(i).to_owned() - &mean;
        for a in 0..c {
            for b in 0..c {
                eu[[a, b]] += d[a] * d[b];
            }
        }
    }
    eu /= k as f64;

    let tu = &au + &eu;
    Ok(MomentDecomposition {
        tu_cov: SymMatrix::from_nearly_symmetric(tu).expect("square"),
        au_cov: SymMatrix::from_nearly_symmetric(au).expect("square"),
        eu_cov: SymMatrix::from_nearly_symmetric(eu).expect("square"),
    })
}

/// Entropy of N(μ, σ²): ½ ln(2πe σ²).
pub fn gaussian_entropy(variance: f64) -> Result<f64, UqError> {
    if variance <= 0.0 || !variance.is_finite() {
        return Err(UqError::NonPositiveVariance(variance));
    }
    Ok(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * variance).ln())
}

/// KL[N(μ₁,σ₁²) ‖ N(μ₂,σ₂²)] in nats.
pub fn gaussian_kl(mu1: f64, var1: f64, mu2: f64, var2: f64) -> Result<f64, UqError> {
    if var1 <= 0.0 || !var1.is_finite() {
        return Err(UqError::NonPositiveVariance(var1));
    }
    if var2 <= 0.0 || !var2.is_finite() {
        return Err(UqError::NonPositiveVariance(var2));
    }
    Ok(0.5 * (var2 / var1).ln() + (var1 + (mu1 - mu2) * (mu1 - mu2)) / (2.0 * var2) - 0.5)
}

/// Componentwise mean of per-point triples (the test-set average).
pub fn average_metrics(per_point: &[UncertaintyTriple]) -> Result<UncertaintyTriple, UqError> {
    if per_point.is_empty() {
        return Err(UqError::EmptyList);
    }
    let n = per_point.len() as f64;
    let (mut tu, mut au, mut eu) = (0.0, 0.0, 0.0);
    for t in per_point {
        tu += t.tu;
        au += t.au;
        eu += t.eu;
    }
    Ok(UncertaintyTriple { tu: tu / n, au: au / n, eu: eu / n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ensemble(rows: Array2<f64>) -> PredictiveEnsemble {
        PredictiveEnsemble::new(rows, EnsembleSource::Mcd).unwrap()
    }

    #[test]
    fn entropy_uniform_and_onehot() {
        let u = ProbVector::new(array![0.5, 0.5]).unwrap();
        assert!((shannon_entropy(&u) - std::f64::consts::LN_2).abs() < 1e-12);
        let onehot = ProbVector::new(array![1.0, 0.0]).unwrap();
        assert_eq!(shannon_entropy(&onehot), 0.0);
    }

    #[test]
    fn entropy_matches_direct_scalar_evaluation() {
        // Oracle: -sum p ln p evaluated term by term.
        let p = [0.25f64, 0.75];
        let expected: f64 = -p.iter().map(|&v| v * v.ln()).sum::<f64>();
        assert!((expected - 0.562335).abs() < 1e-6);
        let pv = ProbVector::new(array![0.25, 0.75]).unwrap();
        assert!((shannon_entropy(&pv) - expected).abs() < 1e-12);
    }

    #[test]
    fn invalid_simplex_is_rejected() {
        assert!(ProbVector::new(array![0.6, 0.6]).is_err());
        assert!(ProbVector::new(array![1.2, -0.2]).is_err());
    }

    #[test]
    fn decompose_maximal_disagreement() {
        let e = ensemble(array![[1.0, 0.0], [0.0, 1.0]]);
        let t = decompose_entropy(&e).unwrap();
        assert!((t.tu - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(t.au, 0.0);
        assert!((t.eu - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn decompose_identical_members_has_no_epistemic_part() {
        let e = ensemble(array![[0.3, 0.7], [0.3, 0.7], [0.3, 0.7]]);
        let t = decompose_entropy(&e).unwrap();
        assert!(t.eu.abs() <= 1e-12, "eu = {}", t.eu);
    }

    #[test]
    fn decompose_hand_evaluated_oracle() {
        // Independent scalar evaluation of TU/AU/EU for two members.
        let rows = [[0.9f64, 0.1], [0.5, 0.5]];
        let mean = [0.7f64, 0.3];
        let h = |p: &[f64]| -p.iter().map(|&v| v * v.ln()).sum::<f64>();
        let tu = h(&mean);
        let au = 0.5 * (h(&rows[0]) + h(&rows[1]));
        assert!((tu - 0.610864).abs() < 1e-5);
        assert!((au - 0.509120).abs() < 1e-5);
        assert!((tu - au - 0.101744).abs() < 1e-5);

        let e = ensemble(array![[0.9, 0.1], [0.5, 0.5]]);
        let t = decompose_entropy(&e).unwrap();
        assert!((t.tu - tu).abs() < 1e-12);
        assert!((t.au - au).abs() < 1e-12);
        assert!((t.eu - (tu - au)).abs() < 1e-12);
    }

    #[test]
    fn single_member_forces_tu_equals_au() {
        let e = ensemble(array![[0.2, 0.8]]);
        let t = decompose_entropy(&e).unwrap();
        assert_eq!(t.tu.to_bits(), t.au.to_bits());
        assert_eq!(t.eu, 0.0);
    }

    #[test]
    fn permutation_invariance_is_bit_exact() {
        let rows = array![[0.11, 0.89], [0.5, 0.5], [0.77, 0.23], [0.305, 0.695]];
        let permuted = array![[0.77, 0.23], [0.11, 0.89], [0.305, 0.695], [0.5, 0.5]];
        let a = decompose_entropy(&ensemble(rows)).unwrap();
        let b = decompose_entropy(&ensemble(permuted)).unwrap();
        assert_eq!(a.tu.to_bits(), b.tu.to_bits());
        assert_eq!(a.au.to_bits(), b.au.to_bits());
        assert_eq!(a.eu.to_bits(), b.eu.to_bits());
    }

    #[test]
    fn variance_decomposition_identical_members() {
        let e = ensemble(array![[0.3, 0.7], [0.3, 0.7]]);
        let d = decompose_variance(&e).unwrap();
        for v in d.eu_cov.as_array().iter() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn variance_decomposition_two_point_oracle() {
        // Population variance of {0.2, 0.8} is 0.09.
        let e = ensemble(array![[0.8, 0.2], [0.2, 0.8]]);
        let d = decompose_variance(&e).unwrap();
        assert!((d.eu_cov.as_array()[[1, 1]] - 0.09).abs() < 1e-12);
        let tr = |m: &SymMatrix| m.trace();
        assert!((tr(&d.tu_cov) - tr(&d.au_cov) - tr(&d.eu_cov)).abs() < 1e-12);
    }

    #[test]
    fn variance_decomposition_single_member_is_error() {
        let e = ensemble(array![[0.3, 0.7]]);
        assert!(matches!(decompose_variance(&e), Err(UqError::SingleMember)));
    }

    #[test]
    fn gaussian_entropy_closed_forms() {
        let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
        assert!((gaussian_entropy(1.0).unwrap() - 0.5 * two_pi_e.ln()).abs() < 1e-12);
        assert!((gaussian_entropy(1.0).unwrap() - 1.418939).abs() < 1e-6);
        // Inverse of the formula: variance e²/(2πe) has entropy exactly 1.
        let v = std::f64::consts::E.powi(2) / two_pi_e;
        assert!((gaussian_entropy(v).unwrap() - 1.0).abs() < 1e-12);
        // Direct scalar evaluation at 0.25.
        assert!((gaussian_entropy(0.25).unwrap() - 0.5 * (two_pi_e * 0.25).ln()).abs() < 1e-12);
        assert!((gaussian_entropy(0.25).unwrap() - 0.725792).abs() < 1e-6);
        assert!(gaussian_entropy(0.0).is_err());
        assert!(gaussian_entropy(-1.0).is_err());
    }

    #[test]
    fn gaussian_kl_closed_forms() {
        assert_eq!(gaussian_kl(0.3, 2.0, 0.3, 2.0).unwrap(), 0.0);
        assert!((gaussian_kl(1.0, 1.0, 0.0, 1.0).unwrap() - 0.5).abs() < 1e-12);
        let expected = (2.0f64).ln() + 1.0 / 8.0 - 0.5;
        assert!((gaussian_kl(0.0, 1.0, 0.0, 4.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.318147).abs() < 1e-6);
    }

    #[test]
    fn average_metrics_arithmetic() {
        let a = UncertaintyTriple { tu: 1.0, au: 0.6, eu: 0.4 };
        let b = UncertaintyTriple { tu: 0.5, au: 0.5, eu: 0.0 };
        let avg = average_metrics(&[a, b]).unwrap();
        assert!((avg.tu - 0.75).abs() < 1e-15);
        assert!((avg.au - 0.55).abs() < 1e-15);
        assert!((avg.eu - 0.20).abs() < 1e-15);
        let single = average_metrics(&[a]).unwrap();
        assert_eq!(single.tu, a.tu);
        assert!(average_metrics(&[]).is_err());
    }
}
