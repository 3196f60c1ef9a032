//! Python bindings for the uncertainty scaling laboratory: dataset
//! generators, entropy decompositions, Bayesian linear regression, the
//! two-moons linearized-Laplace pipeline, power-law fitting, and the
//! experiment runner.

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use uqscale::blr;
use uqscale::dataset;
use uqscale::harness;
use uqscale::laplace;
use uqscale::nnet;
use uqscale::rng::RngStream;
use uqscale::scaling;
use uqscale::uq;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    if rows.is_empty() {
        return Ok(Array2::zeros((0, 0)));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let mut m = Array2::zeros((rows.len(), cols));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    Ok(m)
}

/// Two-moons samples: returns (points, labels).
#[pyfunction]
#[pyo3(signature = (n, noise_sd=0.1, shift=(0.0, 0.0), seed=0, stream_id=0))]
fn gen_two_moons(
    n: usize,
    noise_sd: f64,
    shift: (f64, f64),
    seed: u64,
    stream_id: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut stream = RngStream::new(seed, stream_id);
    let d = dataset::gen_two_moons(n, noise_sd, [shift.0, shift.1], &mut stream).map_err(value_err)?;
    let points = d.inputs.rows().into_iter().map(|r| r.to_vec()).collect();
    let labels = d.class_labels().unwrap().to_vec();
    Ok((points, labels))
}

/// Shannon entropy (nats) of a probability vector.
#[pyfunction]
fn shannon_entropy(probs: Vec<f64>) -> PyResult<f64> {
    let p = uq::ProbVector::new(Array1::from_vec(probs)).map_err(value_err)?;
    Ok(uq::shannon_entropy(&p))
}

/// Entropy decomposition of an ensemble (rows of class probabilities):
/// returns (tu, au, eu) in nats.
#[pyfunction]
fn decompose_entropy(members: Vec<Vec<f64>>) -> PyResult<(f64, f64, f64)> {
    let m = to_matrix(members)?;
    let e = uq::PredictiveEnsemble::new(m, uq::EnsembleSource::DeepEnsemble).map_err(value_err)?;
    let t = uq::decompose_entropy(&e).map_err(value_err)?;
    Ok((t.tu, t.au, t.eu))
}

/// Entropy of N(mu, variance), ½ ln(2πe σ²).
#[pyfunction]
fn gaussian_entropy(variance: f64) -> PyResult<f64> {
    uq::gaussian_entropy(variance).map_err(value_err)
}

/// KL[N(mu1, var1) || N(mu2, var2)] in nats.
#[pyfunction]
fn gaussian_kl(mu1: f64, var1: f64, mu2: f64, var2: f64) -> PyResult<f64> {
    uq::gaussian_kl(mu1, var1, mu2, var2).map_err(value_err)
}

/// Fitted power law U(N) = a·N^gamma + c.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct PowerLawFit {
    inner: scaling::PowerLawFit,
}

#[pymethods]
impl PowerLawFit {
    #[getter]
    fn amplitude(&self) -> f64 {
        self.inner.amplitude
    }

    #[getter]
    fn exponent(&self) -> f64 {
        self.inner.exponent
    }

    #[getter]
    fn floor(&self) -> f64 {
        self.inner.floor
    }

    #[getter]
    fn r2(&self) -> f64 {
        self.inner.r2
    }

    #[getter]
    fn exponent_stderr(&self) -> f64 {
        self.inner.exponent_stderr
    }

    /// Value and 2-sigma band at n_target: returns (value, lower, upper).
    fn extrapolate(&self, n_target: f64) -> (f64, f64, f64) {
        let e = scaling::extrapolate(&self.inner, n_target);
        (e.value, e.lower, e.upper)
    }

    /// Smallest N at which the fit drops to epsilon, or None.
    fn threshold_crossing(&self, epsilon: f64) -> Option<f64> {
        match scaling::threshold_crossing(&self.inner, epsilon) {
            scaling::ThresholdCrossing::At(n) => Some(n),
            scaling::ThresholdCrossing::Unreachable => None,
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "PowerLawFit(a={}, gamma={}, c={}, r2={:.4})",
            self.inner.amplitude, self.inner.exponent, self.inner.floor, self.inner.r2
        )
    }
}

fn build_curve(ns: Vec<f64>, values: Vec<f64>) -> PyResult<scaling::ScalingCurve> {
    if ns.len() != values.len() {
        return Err(PyValueError::new_err("ns and values must have the same length"));
    }
    Ok(scaling::ScalingCurve::new(
        scaling::MetricKind::Eu,
        ns.iter()
            .zip(values.iter())
            .map(|(&n, &value)| scaling::CurvePoint { n, value, fold: 0 })
            .collect(),
    ))
}

/// OLS power-law fit in log-log space (floor fixed at zero).
#[pyfunction]
fn fit_loglog(ns: Vec<f64>, values: Vec<f64>) -> PyResult<PowerLawFit> {
    let fit = scaling::fit_loglog(&build_curve(ns, values)?).map_err(value_err)?;
    Ok(PowerLawFit { inner: fit })
}

/// Power-law fit with a profiled floor.
#[pyfunction]
fn fit_powerlaw_floor(ns: Vec<f64>, values: Vec<f64>) -> PyResult<PowerLawFit> {
    let fit = scaling::fit_powerlaw_floor(&build_curve(ns, values)?).map_err(value_err)?;
    Ok(PowerLawFit { inner: fit })
}

/// Prior-to-data knee of a scaling curve: (n_knee, plateau_level) or None.
#[pyfunction]
fn detect_knee(ns: Vec<f64>, values: Vec<f64>) -> PyResult<Option<(f64, f64)>> {
    match scaling::detect_knee(&build_curve(ns, values)?).map_err(value_err)? {
        scaling::KneeDetection::Knee { n_knee, prior_plateau_level } => {
            Ok(Some((n_knee, prior_plateau_level)))
        }
        scaling::KneeDetection::NoKnee => Ok(None),
    }
}

/// Conjugate Bayesian linear regression with an identity basis and
/// N(0, I) prior.
#[pyclass]
struct Blr {
    model: blr::BlrModel,
    posterior: Option<blr::GaussianPosterior>,
}

#[pymethods]
impl Blr {
    #[new]
    fn new(dim: usize, noise_var: f64) -> PyResult<Self> {
        if noise_var <= 0.0 {
            return Err(PyValueError::new_err("noise_var must be positive"));
        }
        Ok(Self {
            model: blr::BlrModel::with_default_prior(blr::Basis::Identity, dim, noise_var),
            posterior: None,
        })
    }

    /// Conjugate update from inputs (rows) and real targets.
    fn fit(&mut self, x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<()> {
        let inputs = to_matrix(x)?;
        if inputs.nrows() != y.len() {
            return Err(PyValueError::new_err("x and y must have the same length"));
        }
        let data = dataset::LabeledDataset {
            inputs,
            labels: dataset::Labels::Targets(y),
            meta: dataset::DatasetMeta {
                generator: "python".into(),
                params: String::new(),
                seed: 0,
                stream_id: 0,
            },
        };
        self.posterior = Some(blr::blr_fit(&self.model, &data).map_err(value_err)?);
        Ok(())
    }

    /// Predictive at one input: dict with mean, variance, aleatoric,
    /// epistemic, tu, au, eu.
    fn predict<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let post = self
            .posterior
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("call fit() before predict()"))?;
        let pred = blr::blr_predict(post, &self.model, &Array1::from_vec(x)).map_err(value_err)?;
        let out = PyDict::new(py);
        out.set_item("mean", pred.mean)?;
        out.set_item("variance", pred.variance)?;
        out.set_item("aleatoric", pred.aleatoric_part)?;
        out.set_item("epistemic", pred.epistemic_part)?;
        out.set_item("tu", pred.tu())?;
        out.set_item("au", pred.au())?;
        out.set_item("eu", pred.eu_entropy())?;
        Ok(out)
    }

    /// Posterior mean vector.
    fn posterior_mean(&self) -> PyResult<Vec<f64>> {
        let post = self
            .posterior
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("call fit() before posterior_mean()"))?;
        Ok(post.mean.to_vec())
    }
}

/// Two-moons linearized-Laplace pipeline: MAP training plus a full GGN
/// covariance, queried per test point.
#[pyclass]
struct TwoMoonsLla {
    spec: nnet::MlpSpec,
    posterior: laplace::GgnPosterior,
    mc_samples: usize,
    seed: u64,
}

#[pymethods]
impl TwoMoonsLla {
    #[new]
    #[pyo3(signature = (n, lam, hidden=vec![50], noise_sd=0.1, seed=0, step_size=1e-3, max_epochs=200, mc_samples=1000))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n: usize,
        lam: f64,
        hidden: Vec<usize>,
        noise_sd: f64,
        seed: u64,
        step_size: f64,
        max_epochs: usize,
        mc_samples: usize,
    ) -> PyResult<Self> {
        let mut sizes = vec![2];
        sizes.extend_from_slice(&hidden);
        sizes.push(2);
        let spec = nnet::MlpSpec::new(sizes);
        let mut data_stream = RngStream::new(seed, uqscale::rng::streams::train_data(0));
        let data = dataset::gen_two_moons(n, noise_sd, [0.0, 0.0], &mut data_stream).map_err(value_err)?;
        let train = nnet::TrainConfig {
            prior_precision: lam,
            step_size,
            max_epochs,
            ..nnet::TrainConfig::default()
        };
        let mut init = RngStream::new(seed, uqscale::rng::streams::init(0, 0));
        let (_, posterior, _) =
            laplace::fit_lla_cell(&spec, &data, n, lam, &train, &mut init).map_err(runtime_err)?;
        Ok(Self { spec, posterior, mc_samples, seed })
    }

    /// Epistemic-uncertainty estimators at one input: dict with eu_logit,
    /// eu_var, eu_var_delta, eu_ent.
    fn eu_metrics<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let mut mc = RngStream::new(self.seed, uqscale::rng::streams::mc(0, 0));
        let (_, report) = laplace::glm_predictive_mc(
            &self.posterior,
            &self.spec,
            &Array1::from_vec(x),
            self.mc_samples,
            &mut mc,
        )
        .map_err(runtime_err)?;
        let out = PyDict::new(py);
        out.set_item("eu_logit", report.eu_logit)?;
        out.set_item("eu_var", report.eu_var)?;
        out.set_item("eu_var_delta", report.eu_var_delta)?;
        out.set_item("eu_ent", report.eu_ent)?;
        out.set_item("mc_samples", report.mc_samples)?;
        Ok(out)
    }

    /// Class probabilities of the MAP network at one input.
    fn predict_proba(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let logits = nnet::mlp_forward(&self.spec, &self.posterior.theta_map, &Array1::from_vec(x))
            .map_err(value_err)?;
        Ok(nnet::softmax(&logits).to_vec())
    }
}

/// Runs an experiment from TOML config text; writes curves.csv, fits.json
/// and report.svg into out_dir and returns a summary dict.
#[pyfunction]
#[pyo3(signature = (config_toml, out_dir, overrides=vec![]))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_toml: &str,
    out_dir: &str,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = harness::parse_config_str(config_toml, &overrides).map_err(value_err)?;
    let record = harness::run_experiment(&cfg, std::path::Path::new(out_dir)).map_err(runtime_err)?;
    let out = PyDict::new(py);
    out.set_item("experiment", record.experiment)?;
    out.set_item("seed", record.seed)?;
    out.set_item("n_rows", record.n_rows)?;
    out.set_item("config_hash", record.config_hash)?;
    out.set_item("wall_clock_s", record.wall_clock_s)?;
    let fits: Vec<(String, f64, f64, f64)> = record
        .fits
        .iter()
        .map(|f| (f.metric.as_str().to_string(), f.lambda, f.gamma, f.c))
        .collect();
    out.set_item("fits", fits)?;
    Ok(out)
}

#[pymodule]
fn uqscale_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gen_two_moons, m)?)?;
    m.add_function(wrap_pyfunction!(shannon_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kl, m)?)?;
    m.add_function(wrap_pyfunction!(fit_loglog, m)?)?;
    m.add_function(wrap_pyfunction!(fit_powerlaw_floor, m)?)?;
    m.add_function(wrap_pyfunction!(detect_knee, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PowerLawFit>()?;
    m.add_class::<Blr>()?;
    m.add_class::<TwoMoonsLla>()?;
    Ok(())
}
