//! Experiment drivers. Every protocol expands into independent cells
//! (N × fold, times the lambda grid where applicable); cells run on the
//! rayon pool, each owning its streams, and rows are gathered in fixed cell
//! order so artifacts are byte-reproducible.

use std::path::Path;
use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use crate::blr::{blr_fit, blr_predict, Basis, BlrModel};
use crate::dataset::{gen_linear_gaussian, gen_two_moons, LabeledDataset};
use crate::laplace::{lla_scaling_experiment, spectrum_experiment, LlaSweepConfig};
use crate::linalg::SymMatrix;
use crate::nnet::{train_map, MlpSpec, TrainConfig};
use crate::rng::{streams, RngStream};
use crate::samplers::{
    bnn_predict_testset, deep_ensemble_predict, deep_ensemble_train, hmc_sample, mcd_predict,
    BnnLogPosterior, HmcConfig,
};
use crate::scaling::MetricKind;
use crate::uq::{average_metrics, decompose_entropy, UncertaintyTriple};

use super::config::{ExperimentConfig, ExperimentKind};
use super::csvio::{read_curves_csv, write_curves_csv, CurveRow};
use super::fits::{compute_fits, fits_to_json, render_fit_table, FitRecord};
use super::svg::write_report_svg;
use super::HarnessError;

/// Outcome of one `run` invocation. The three artifact files are written to
/// the output directory; wall-clock and version stay out of them so reruns
/// are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub experiment: String,
    pub seed: u64,
    pub n_rows: usize,
    pub wall_clock_s: f64,
    pub version: String,
    #[serde(skip)]
    pub rows: Vec<CurveRow>,
    #[serde(skip)]
    pub fits: Vec<FitRecord>,
}

fn triple_rows(
    experiment: &str,
    method: &str,
    lambda: f64,
    n: usize,
    fold: u32,
    t: &UncertaintyTriple,
) -> Vec<CurveRow> {
    [(MetricKind::Tu, t.tu), (MetricKind::Au, t.au), (MetricKind::Eu, t.eu)]
        .into_iter()
        .map(|(metric, value)| CurveRow {
            experiment: experiment.into(),
            metric,
            method: method.into(),
            lambda,
            n: n as f64,
            fold,
            value,
        })
        .collect()
}

/// Bayesian linear regression contraction sweep: identity basis, known
/// noise, entropy metrics averaged over a fixed Gaussian test set.
fn run_blr_scaling(cfg: &ExperimentConfig) -> Result<Vec<CurveRow>, HarnessError> {
    let d = cfg.dataset.dim;
    let sigma = cfg.dataset.noise_sigma;
    let noise_var = sigma * sigma;
    let n_max = *cfg.n_grid.last().unwrap();

    let theta_true = {
        let mut s = RngStream::new(cfg.seed, streams::TRUTH);
        Array1::from_iter((0..d).map(|_| s.standard_normal()))
    };
    let test_inputs: Vec<Array1<f64>> = {
        let mut s = RngStream::new(cfg.seed, streams::TEST_DATA);
        (0..cfg.dataset.test_size)
            .map(|_| Array1::from_iter((0..d).map(|_| s.standard_normal())))
            .collect()
    };
    let model = BlrModel::with_default_prior(Basis::Identity, d, noise_var);

    let cells: Vec<(usize, u32)> = (0..cfg.folds)
        .flat_map(|fold| cfg.n_grid.iter().map(move |&n| (n, fold)))
        .collect();
    let results: Result<Vec<Vec<CurveRow>>, HarnessError> = cells
        .par_iter()
        .map(|&(n, fold)| {
            let full = {
                let mut s = RngStream::new(cfg.seed, streams::train_data(fold));
                gen_linear_gaussian(n_max, &theta_true, sigma, &SymMatrix::identity(d), &mut s)?
            };
            let data = full.prefix(n);
            let post = blr_fit(&model, &data)?;
            let triples: Vec<UncertaintyTriple> = test_inputs
                .iter()
                .map(|x| {
                    let pred = blr_predict(&post, &model, x)?;
                    Ok(UncertaintyTriple { tu: pred.tu(), au: pred.au(), eu: pred.eu_entropy() })
                })
                .collect::<Result<_, HarnessError>>()?;
            let avg = average_metrics(&triples)?;
            Ok(triple_rows("blr_scaling", "blr", 0.0, n, fold, &avg))
        })
        .collect();
    Ok(results?.into_iter().flatten().collect())
}

fn lla_config(cfg: &ExperimentConfig) -> LlaSweepConfig {
    LlaSweepConfig {
        n_grid: cfg.n_grid.clone(),
        lambda_grid: cfg.lla.lambda_grid.clone(),
        folds: cfg.folds,
        hidden: cfg.model.hidden.clone(),
        noise_sd: cfg.dataset.noise_sd,
        test_size: cfg.dataset.test_size,
        test_shift: cfg.dataset.shift,
        mc_samples: cfg.lla.mc_samples,
        train: cfg.train.to_train_config(),
        seed: cfg.seed,
    }
}

fn run_lla_sweep(cfg: &ExperimentConfig) -> Result<Vec<CurveRow>, HarnessError> {
    let cells = lla_scaling_experiment(&lla_config(cfg))?;
    let mut rows = Vec::with_capacity(cells.len() * 3);
    for c in &cells {
        for (metric, value) in [
            (MetricKind::EuLogit, c.eu_logit),
            (MetricKind::EuVar, c.eu_var),
            (MetricKind::EuEnt, c.eu_ent),
        ] {
            rows.push(CurveRow {
                experiment: "lla_sweep".into(),
                metric,
                method: "lla".into(),
                lambda: c.lambda,
                n: c.n as f64,
                fold: c.fold,
                value,
            });
        }
    }
    Ok(rows)
}

fn run_spectrum(cfg: &ExperimentConfig) -> Result<Vec<CurveRow>, HarnessError> {
    let cells = spectrum_experiment(&lla_config(cfg))?;
    let mut rows = Vec::with_capacity(cells.len() * 2);
    for c in &cells {
        for (metric, value) in [(MetricKind::MaxEig, c.max_eig), (MetricKind::MeanEig, c.mean_eig)] {
            rows.push(CurveRow {
                experiment: "spectrum".into(),
                metric,
                method: "lla".into(),
                lambda: c.lambda,
                n: c.n as f64,
                fold: c.fold,
                value,
            });
        }
    }
    Ok(rows)
}

fn two_moons_spec(cfg: &ExperimentConfig) -> MlpSpec {
    let mut sizes = vec![2];
    sizes.extend_from_slice(&cfg.model.hidden);
    sizes.push(2);
    MlpSpec::new(sizes)
}

fn two_moons_test(cfg: &ExperimentConfig) -> Result<LabeledDataset, HarnessError> {
    let mut s = RngStream::new(cfg.seed, streams::TEST_DATA);
    Ok(gen_two_moons(cfg.dataset.test_size, cfg.dataset.noise_sd, cfg.dataset.shift, &mut s)?)
}

fn two_moons_train_prefix(
    cfg: &ExperimentConfig,
    fold: u32,
    n: usize,
    n_max: usize,
) -> Result<LabeledDataset, HarnessError> {
    let mut s = RngStream::new(cfg.seed, streams::train_data(fold));
    Ok(gen_two_moons(n_max, cfg.dataset.noise_sd, [0.0, 0.0], &mut s)?.prefix(n))
}

/// HMC over the MLP weights, one chain per (N, fold) cell, initialized at a
/// short MAP run. A zero configured step size selects ε = 0.5/√N, matching
/// the 1/√N posterior-scale contraction.
fn run_hmc_twomoons(cfg: &ExperimentConfig) -> Result<Vec<CurveRow>, HarnessError> {
    let spec = two_moons_spec(cfg);
    let test = two_moons_test(cfg)?;
    let n_max = *cfg.n_grid.last().unwrap();
    let cells: Vec<(usize, u32)> = (0..cfg.folds)
        .flat_map(|fold| cfg.n_grid.iter().map(move |&n| (n, fold)))
        .collect();

    let results: Result<Vec<Vec<CurveRow>>, HarnessError> = cells
        .par_iter()
        .map(|&(n, fold)| {
            let data = two_moons_train_prefix(cfg, fold, n, n_max)?;
            let prior_precision = 1.0 / (cfg.hmc.prior_sd * cfg.hmc.prior_sd);
            let init_config = TrainConfig {
                prior_precision,
                max_epochs: cfg.hmc.init_epochs,
                convergence_tol: 1e-4,
                ..cfg.train.to_train_config()
            };
            let mut init_stream = RngStream::new(cfg.seed, streams::init(fold, 0));
            let (theta_map, _) = train_map(&spec, &data, &init_config, &mut init_stream)?;

            let step = if cfg.hmc.step_size > 0.0 {
                cfg.hmc.step_size
            } else {
                0.5 / (n as f64).sqrt()
            };
            let hmc_config = HmcConfig {
                step_size: step,
                leapfrog_steps: cfg.hmc.leapfrog_steps,
                warmup: cfg.hmc.warmup,
                samples: cfg.hmc.samples,
                prior_sd: cfg.hmc.prior_sd,
            };
            let target = BnnLogPosterior { spec: &spec, data: &data, prior_sd: cfg.hmc.prior_sd };
            let mut chain = RngStream::new(cfg.seed, streams::chain(fold, n));
            let samples = hmc_sample(&target, &theta_map.theta, &hmc_config, &mut chain)?;
            if !(0.2..=0.99).contains(&samples.accept_rate) {
                eprintln!(
                    "warning: hmc acceptance {:.3} outside [0.2, 0.99] at n={n} fold={fold}",
                    samples.accept_rate
                );
            }

            let ensembles = bnn_predict_testset(&samples, &spec, &test.inputs)?;
            let triples: Vec<UncertaintyTriple> = ensembles
                .iter()
                .map(|e| Ok(decompose_entropy(e)?))
                .collect::<Result<_, HarnessError>>()?;
            let avg = average_metrics(&triples)?;
            Ok(triple_rows("hmc_twomoons", "hmc", 0.0, n, fold, &avg))
        })
        .collect();
    Ok(results?.into_iter().flatten().collect())
}

/// MAP training plus test-time dropout ensembles per (N, fold) cell.
fn run_mcd_twomoons(cfg: &ExperimentConfig) -> Result<Vec<CurveRow>, HarnessError> {
    let spec = two_moons_spec(cfg);
    let test = two_moons_test(cfg)?;
    let n_max = *cfg.n_grid.last().unwrap();
    let cells: Vec<(usize, u32)> = (0..cfg.folds)
        .flat_map(|fold| cfg.n_grid.iter().map(move |&n| (n, fold)))
        .collect();

    let results: Result<Vec<Vec<CurveRow>>, HarnessError> = cells
        .par_iter()
        .map(|&(n, fold)| {
            let data = two_moons_train_prefix(cfg, fold, n, n_max)?;
            let mut init_stream = RngStream::new(cfg.seed, streams::init(fold, 0));
            let (theta, _) = train_map(&spec, &data, &cfg.train.to_train_config(), &mut init_stream)?;
            let n_idx = cfg.n_grid.iter().position(|&m| m == n).unwrap() as u32;
            let mut mask_stream = RngStream::new(cfg.seed, streams::mc(fold, n_idx));
            let triples: Vec<UncertaintyTriple> = (0..test.len())
                .map(|i| {
                    let x = test.inputs.row(i).to_owned();
                    let e = mcd_predict(&spec, &theta, &x, cfg.mcd.dropout, cfg.mcd.passes, &mut mask_stream)?;
                    Ok(decompose_entropy(&e)?)
                })
                .collect::<Result<_, HarnessError>>()?;
            let avg = average_metrics(&triples)?;
            Ok(triple_rows("mcd_twomoons", "mcd", 0.0, n, fold, &avg))
        })
        .collect();
    Ok(results?.into_iter().flatten().collect())
}

/// Deep ensembles of M members per (N, fold) cell, differing only in their
/// initialization streams.
fn run_de_twomoons(cfg: &ExperimentConfig) -> Result<Vec<CurveRow>, HarnessError> {
    let spec = two_moons_spec(cfg);
    let test = two_moons_test(cfg)?;
    let n_max = *cfg.n_grid.last().unwrap();
    let cells: Vec<(usize, u32)> = (0..cfg.folds)
        .flat_map(|fold| cfg.n_grid.iter().map(move |&n| (n, fold)))
        .collect();

    let results: Result<Vec<Vec<CurveRow>>, HarnessError> = cells
        .par_iter()
        .map(|&(n, fold)| {
            let data = two_moons_train_prefix(cfg, fold, n, n_max)?;
            let init_streams: Vec<RngStream> = (0..cfg.de.members)
                .map(|m| RngStream::new(cfg.seed, streams::init(fold, m as u32)))
                .collect();
            let members = deep_ensemble_train(&spec, &data, &cfg.train.to_train_config(), init_streams)?;
            let triples: Vec<UncertaintyTriple> = (0..test.len())
                .map(|i| {
                    let x = test.inputs.row(i).to_owned();
                    let e = deep_ensemble_predict(&members, &spec, &x)?;
                    Ok(decompose_entropy(&e)?)
                })
                .collect::<Result<_, HarnessError>>()?;
            let avg = average_metrics(&triples)?;
            Ok(triple_rows("de_twomoons", "de", 0.0, n, fold, &avg))
        })
        .collect();
    Ok(results?.into_iter().flatten().collect())
}

/// Computes the rows of one experiment without touching the filesystem.
pub fn compute_rows(cfg: &ExperimentConfig) -> Result<Vec<CurveRow>, HarnessError> {
    match cfg.experiment {
        ExperimentKind::BlrScaling => run_blr_scaling(cfg),
        ExperimentKind::LlaSweep => run_lla_sweep(cfg),
        ExperimentKind::HmcTwomoons => run_hmc_twomoons(cfg),
        ExperimentKind::McdTwomoons => run_mcd_twomoons(cfg),
        ExperimentKind::DeTwomoons => run_de_twomoons(cfg),
        ExperimentKind::Spectrum => run_spectrum(cfg),
    }
}

/// Runs an experiment and writes `curves.csv`, `fits.json` and
/// `report.svg` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let rows = compute_rows(cfg)?;
    let fits = compute_fits(&rows, None)?;

    write_curves_csv(&out_dir.join("curves.csv"), &rows)?;
    std::fs::write(out_dir.join("fits.json"), fits_to_json(&fits))?;
    write_report_svg(&out_dir.join("report.svg"), &rows, &fits)?;

    Ok(RunRecord {
        config_hash: cfg.hash(),
        experiment: cfg.experiment.as_str().to_string(),
        seed: cfg.seed,
        n_rows: rows.len(),
        wall_clock_s: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        rows,
        fits,
    })
}

/// Refits an existing curves.csv: writes fits.json (plus fits_trimmed.json
/// when `n_min` is given) next to it or into `out_dir`, and returns the
/// stdout table.
pub fn report(
    curves_path: &Path,
    out_dir: Option<&Path>,
    n_min: Option<f64>,
) -> Result<String, HarnessError> {
    let rows = read_curves_csv(curves_path)?;
    let fits = compute_fits(&rows, None)?;
    let dir = out_dir
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| curves_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("fits.json"), fits_to_json(&fits))?;
    let mut table = render_fit_table(&fits);
    if let Some(n_min) = n_min {
        let trimmed = compute_fits(&rows, Some(n_min))?;
        std::fs::write(dir.join("fits_trimmed.json"), fits_to_json(&trimmed))?;
        table.push_str(&format!("\ntrimmed to n >= {n_min}:\n"));
        table.push_str(&render_fit_table(&trimmed));
    }
    Ok(table)
}
