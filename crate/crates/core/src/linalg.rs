//! Dense symmetric linear algebra shared by every other module.
//!
//! Everything here is deterministic and dependency-free: Cholesky
//! factorization with an escalating-jitter retry schedule for barely-SPD
//! curvature matrices, and eigenvalues via cyclic Jacobi rotations. The
//! matrices in this crate stay small (posterior covariances up to a few
//! hundred rows), so simplicity wins over asymptotics.

use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (factorization failed at maximum jitter {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {delta:e} exceeds tolerance")]
    NotSymmetric { i: usize, j: usize, delta: f64 },
    #[error("categorical weights must be nonnegative with positive sum")]
    InvalidWeights,
}

/// Dense symmetric matrix. Symmetry is checked on construction
/// (1e-12 relative) and preserved by every operation that returns one.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: Array2<f64>,
}

impl SymMatrix {
    /// Wraps a dense array, verifying squareness and symmetry.
    pub fn from_array(data: Array2<f64>) -> Result<Self, LinalgError> {
        let (r, c) = data.dim();
        if r != c {
            return Err(LinalgError::DimensionMismatch { expected: r, found: c });
        }
        let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..r {
            for j in (i + 1)..r {
                let delta = (data[[i, j]] - data[[j, i]]).abs();
                if delta > 1e-12 * scale {
                    return Err(LinalgError::NotSymmetric { i, j, delta });
                }
            }
        }
        Ok(Self { data })
    }

    /// Wraps a product that is symmetric up to rounding (e.g. `J Σ Jᵀ`),
    /// averaging the off-diagonal pairs so downstream code sees exact
    /// symmetry.
    pub fn from_nearly_symmetric(mut data: Array2<f64>) -> Result<Self, LinalgError> {
        let (r, c) = data.dim();
        if r != c {
            return Err(LinalgError::DimensionMismatch { expected: r, found: c });
        }
        for i in 0..r {
            for j in (i + 1)..r {
                let avg = 0.5 * (data[[i, j]] + data[[j, i]]);
                data[[i, j]] = avg;
                data[[j, i]] = avg;
            }
        }
        Ok(Self { data })
    }

    pub fn identity(dim: usize) -> Self {
        Self { data: Array2::eye(dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { data: Array2::zeros((dim, dim)) }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut data = Array2::zeros((diag.len(), diag.len()));
        for (i, &v) in diag.iter().enumerate() {
            data[[i, i]] = v;
        }
        Self { data }
    }

    /// `s * I` for `dim` rows.
    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        Self::from_diag(&vec![s; dim])
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn trace(&self) -> f64 {
        self.data.diag().sum()
    }

    pub fn matvec(&self, v: &Array1<f64>) -> Array1<f64> {
        self.data.dot(v)
    }

    /// Quadratic form `vᵀ A v`.
    pub fn quad_form(&self, v: &Array1<f64>) -> f64 {
        v.dot(&self.data.dot(v))
    }

    /// In-place `self += other`, used for accumulating per-point curvature
    /// terms in a fixed index order.
    pub fn add_assign(&mut self, other: &SymMatrix) -> Result<(), LinalgError> {
        if self.dim() != other.dim() {
            return Err(LinalgError::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        self.data += &other.data;
        Ok(())
    }

    pub fn add_scaled_identity(&mut self, s: f64) {
        for i in 0..self.dim() {
            self.data[[i, i]] += s;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data *= s;
    }
}

/// Jitter escalation schedule for barely-positive-definite systems: start at
/// `initial_scale * trace(a) / dim`, multiply by `growth` per retry, give up
/// after `max_retries` escalations.
#[derive(Debug, Clone)]
pub struct JitterPolicy {
    pub initial_scale: f64,
    pub growth: f64,
    pub max_retries: usize,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self { initial_scale: 1e-10, growth: 10.0, max_retries: 6 }
    }
}

/// Result of a successful SPD solve: the solution plus the jitter that had
/// to be added to the diagonal (0.0 when the plain factorization succeeded).
#[derive(Debug, Clone)]
pub struct SolveOutcome<T> {
    pub x: T,
    pub jitter_added: f64,
}

/// Lower-triangular Cholesky factor of `a + jitter * I`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: Array2<f64>,
    pub jitter_added: f64,
}

const RESIDUAL_TOL: f64 = 1e-8;

fn cholesky_lower(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[[j, j]] = dj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / dj;
        }
    }
    Some(l)
}

impl SpdFactor {
    /// Factors `a` (escalating the diagonal jitter per `policy` whenever a
    /// pivot goes nonpositive) and returns the factor of the last attempt.
    pub fn new(a: &SymMatrix, policy: &JitterPolicy) -> Result<Self, LinalgError> {
        let base = policy.initial_scale * a.trace() / a.dim() as f64;
        let mut jitter = 0.0;
        let mut max_tried = 0.0;
        for retry in 0..=policy.max_retries {
            let mut m = a.as_array().clone();
            if jitter > 0.0 {
                for i in 0..a.dim() {
                    m[[i, i]] += jitter;
                }
            }
            if let Some(l) = cholesky_lower(&m) {
                return Ok(Self { l, jitter_added: jitter });
            }
            max_tried = jitter;
            jitter = if retry == 0 { base } else { jitter * policy.growth };
            if jitter <= 0.0 {
                break; // trace <= 0: the schedule cannot produce a positive jitter
            }
        }
        Err(LinalgError::NotPositiveDefinite { max_jitter: max_tried })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// The lower-triangular factor `L` with `L Lᵀ = a + jitter I`.
    pub fn lower(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn solve_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.dim();
        let mut y = b.clone();
        for i in 0..n {
            for k in 0..i {
                let t = self.l[[i, k]] * y[k];
                y[i] -= t;
            }
            y[i] /= self.l[[i, i]];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let t = self.l[[k, i]] * y[k];
                y[i] -= t;
            }
            y[i] /= self.l[[i, i]];
        }
        y
    }

    pub fn solve_mat(&self, b: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(b.dim());
        for (j, col) in b.columns().into_iter().enumerate() {
            let x = self.solve_vec(&col.to_owned());
            out.column_mut(j).assign(&x);
        }
        out
    }

    /// `log det(a + jitter I)` from the factor diagonal.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diag().iter().map(|d| d.ln()).sum::<f64>()
    }
}

fn inf_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solves `a x = b` for SPD `a`, escalating diagonal jitter per `policy`
/// until the factorization succeeds and the relative residual
/// `‖a x − b‖∞ / (1 + ‖b‖∞)` drops below 1e-8 (one round of iterative
/// refinement is applied first when it does not).
pub fn spd_solve_vec(
    a: &SymMatrix,
    b: &Array1<f64>,
    policy: &JitterPolicy,
) -> Result<SolveOutcome<Array1<f64>>, LinalgError> {
    if b.len() != a.dim() {
        return Err(LinalgError::DimensionMismatch { expected: a.dim(), found: b.len() });
    }
    let factor = SpdFactor::new(a, policy)?;
    let mut x = factor.solve_vec(b);
    let denom = 1.0 + inf_norm(b);
    for _ in 0..2 {
        let r = b - &a.as_array().dot(&x);
        if inf_norm(&r) / denom <= RESIDUAL_TOL {
            break;
        }
        x += &factor.solve_vec(&r);
    }
    let r = b - &a.as_array().dot(&x);
    if inf_norm(&r) / denom > RESIDUAL_TOL {
        return Err(LinalgError::NotPositiveDefinite { max_jitter: factor.jitter_added });
    }
    Ok(SolveOutcome { x, jitter_added: factor.jitter_added })
}

/// Matrix right-hand-side version of [`spd_solve_vec`]; used to form
/// explicit posterior covariances from precision matrices.
pub fn spd_solve_mat(
    a: &SymMatrix,
    b: &Array2<f64>,
    policy: &JitterPolicy,
) -> Result<SolveOutcome<Array2<f64>>, LinalgError> {
    if b.nrows() != a.dim() {
        return Err(LinalgError::DimensionMismatch { expected: a.dim(), found: b.nrows() });
    }
    let factor = SpdFactor::new(a, policy)?;
    let mut x = factor.solve_mat(b);
    let mut worst = 0.0f64;
    for j in 0..b.ncols() {
        let bj = b.column(j).to_owned();
        let denom = 1.0 + inf_norm(&bj);
        let mut xj = x.column(j).to_owned();
        for _ in 0..2 {
            let r = &bj - &a.as_array().dot(&xj);
            if inf_norm(&r) / denom <= RESIDUAL_TOL {
                break;
            }
            xj += &factor.solve_vec(&r);
        }
        let r = &bj - &a.as_array().dot(&xj);
        worst = worst.max(inf_norm(&r) / denom);
        x.column_mut(j).assign(&xj);
    }
    if worst > RESIDUAL_TOL {
        return Err(LinalgError::NotPositiveDefinite { max_jitter: factor.jitter_added });
    }
    Ok(SolveOutcome { x, jitter_added: factor.jitter_added })
}

/// SPD inverse via [`spd_solve_mat`] against the identity, symmetrized.
pub fn spd_inverse(a: &SymMatrix, policy: &JitterPolicy) -> Result<SolveOutcome<SymMatrix>, LinalgError> {
    let out = spd_solve_mat(a, &Array2::eye(a.dim()), policy)?;
    Ok(SolveOutcome {
        x: SymMatrix::from_nearly_symmetric(out.x)?,
        jitter_added: out.jitter_added,
    })
}

/// Eigenvalues of a symmetric matrix in ascending order, via cyclic Jacobi
/// rotations. Deterministic; intended for dims up to a few hundred.
pub fn sym_eigvals(a: &SymMatrix) -> Vec<f64> {
    let n = a.dim();
    let mut m = a.as_array().clone();
    if n == 1 {
        return vec![m[[0, 0]]];
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    let tol = 1e-15 * scale;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(m[[i, j]].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[[k, p]];
                    let akq = m[[k, q]];
                    m[[k, p]] = c * akp - s * akq;
                    m[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[[p, k]];
                    let aqk = m[[q, k]];
                    m[[p, k]] = c * apk - s * aqk;
                    m[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = m.diag().to_vec();
    eigs.sort_by(|x, y| x.total_cmp(y));
    eigs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use ndarray::array;

    fn policy() -> JitterPolicy {
        JitterPolicy::default()
    }

    #[test]
    fn solve_identity_is_identity() {
        let a = SymMatrix::identity(3);
        let b = array![1.0, 2.0, 3.0];
        let out = spd_solve_vec(&a, &b, &policy()).unwrap();
        assert_eq!(out.x, b);
        assert_eq!(out.jitter_added, 0.0);
    }

    /// Brute-force inverse oracle via the adjugate of a 3x3 matrix.
    fn inverse_3x3(a: &Array2<f64>) -> Array2<f64> {
        let det = a[[0, 0]] * (a[[1, 1]] * a[[2, 2]] - a[[1, 2]] * a[[2, 1]])
            - a[[0, 1]] * (a[[1, 0]] * a[[2, 2]] - a[[1, 2]] * a[[2, 0]])
            + a[[0, 2]] * (a[[1, 0]] * a[[2, 1]] - a[[1, 1]] * a[[2, 0]]);
        let mut inv = Array2::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                let mut sub = [0.0; 4];
                let mut idx = 0;
                for r in 0..3 {
                    for c in 0..3 {
                        if r != i && c != j {
                            sub[idx] = a[[r, c]];
                            idx += 1;
                        }
                    }
                }
                let cof = sub[0] * sub[3] - sub[1] * sub[2];
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                inv[[j, i]] = sign * cof / det;
            }
        }
        inv
    }

    #[test]
    fn solve_hilbert_matches_adjugate_inverse() {
        let mut h = Array2::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                h[[i, j]] = 1.0 / (i as f64 + j as f64 + 1.0);
            }
        }
        let b = Array1::ones(3);
        let expected = inverse_3x3(&h).dot(&b);
        let a = SymMatrix::from_array(h).unwrap();
        let out = spd_solve_vec(&a, &b, &policy()).unwrap();
        for i in 0..3 {
            let rel = (out.x[i] - expected[i]).abs() / expected[i].abs().max(1.0);
            assert!(rel < 1e-6, "component {i}: {} vs {}", out.x[i], expected[i]);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = SymMatrix::from_diag(&[1.0, -1.0]);
        let b = array![1.0, 1.0];
        match spd_solve_vec(&a, &b, &policy()) {
            Err(LinalgError::NotPositiveDefinite { .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn solve_recovers_random_spd_solution() {
        let mut stream = RngStream::new(11, 0);
        for &dim in &[5usize, 40, 300] {
            let mut g = Array2::zeros((dim, dim));
            for i in 0..dim {
                for j in 0..dim {
                    g[[i, j]] = stream.standard_normal();
                }
            }
            let mut a = g.t().dot(&g);
            for i in 0..dim {
                a[[i, i]] += 1.0;
            }
            let a = SymMatrix::from_nearly_symmetric(a).unwrap();
            let x0 = Array1::from_iter((0..dim).map(|_| stream.standard_normal()));
            let b = a.as_array().dot(&x0);
            let out = spd_solve_vec(&a, &b, &policy()).unwrap();
            let err = (&out.x - &x0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let norm = x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err / norm < 1e-7, "dim {dim}: relative error {}", err / norm);
        }
    }

    #[test]
    fn eigvals_diagonal_case() {
        let a = SymMatrix::from_diag(&[3.0, 1.0, 2.0]);
        let e = sym_eigvals(&a);
        assert_eq!(e, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn eigvals_identity() {
        let e = sym_eigvals(&SymMatrix::identity(4));
        assert_eq!(e, vec![1.0; 4]);
    }

    #[test]
    fn eigvals_2x2_match_characteristic_roots() {
        // Closed-form roots of λ² - tr λ + det for [[2,1],[1,2]]: 1 and 3.
        let a = SymMatrix::from_array(array![[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let e = sym_eigvals(&a);
        let (tr, det) = (4.0f64, 3.0f64);
        let disc = (tr * tr / 4.0 - det).sqrt();
        let expected = [tr / 2.0 - disc, tr / 2.0 + disc];
        for (got, want) in e.iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn eigvals_sum_matches_trace() {
        let mut stream = RngStream::new(5, 3);
        let dim = 60;
        let mut g = Array2::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                g[[i, j]] = stream.standard_normal();
            }
        }
        let a = SymMatrix::from_nearly_symmetric(g.t().dot(&g)).unwrap();
        let e = sym_eigvals(&a);
        assert_eq!(e.len(), dim);
        let sum: f64 = e.iter().sum();
        assert!((sum - a.trace()).abs() / a.trace().abs() < 1e-8);
    }

    #[test]
    fn ggn_style_assembly_has_nonnegative_spectrum() {
        // Matrices of the form Σ JᵀΛJ + λI with λ > 0 must be positive.
        let mut stream = RngStream::new(9, 1);
        let p = 20;
        let mut acc = SymMatrix::zeros(p);
        for _ in 0..15 {
            let j = Array2::from_shape_fn((2, p), |_| stream.standard_normal());
            let pi = {
                let u: f64 = stream.uniform01();
                0.05 + 0.9 * u
            };
            let lam = array![[pi * (1.0 - pi), -pi * (1.0 - pi)], [-pi * (1.0 - pi), pi * (1.0 - pi)]];
            let term = j.t().dot(&lam).dot(&j);
            acc.add_assign(&SymMatrix::from_nearly_symmetric(term).unwrap()).unwrap();
        }
        acc.add_scaled_identity(0.5);
        let e = sym_eigvals(&acc);
        assert!(e.iter().all(|&v| v >= 0.5 - 1e-9), "min eig {}", e[0]);
    }

    #[test]
    fn non_square_input_is_dimension_mismatch() {
        let err = SymMatrix::from_array(Array2::zeros((2, 3))).unwrap_err();
        matches!(err, LinalgError::DimensionMismatch { .. })
            .then_some(())
            .expect("expected DimensionMismatch");
    }
}
