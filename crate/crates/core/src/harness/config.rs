//! Experiment configuration: a TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BlrScaling,
    LlaSweep,
    HmcTwomoons,
    McdTwomoons,
    DeTwomoons,
    Spectrum,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::BlrScaling => "blr_scaling",
            ExperimentKind::LlaSweep => "lla_sweep",
            ExperimentKind::HmcTwomoons => "hmc_twomoons",
            ExperimentKind::McdTwomoons => "mcd_twomoons",
            ExperimentKind::DeTwomoons => "de_twomoons",
            ExperimentKind::Spectrum => "spectrum",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetParams {
    /// Two-moons noise standard deviation.
    pub noise_sd: f64,
    pub test_size: usize,
    /// Translation applied to test inputs (distribution-shift emulation).
    pub shift: [f64; 2],
    /// Input dimension for the linear-Gaussian generator.
    pub dim: usize,
    /// Noise standard deviation σ of the linear-Gaussian process.
    pub noise_sigma: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self { noise_sd: 0.1, test_size: 100, shift: [0.0, 0.0], dim: 5, noise_sigma: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Hidden layer sizes of the tanh MLP.
    pub hidden: Vec<usize>,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { hidden: vec![50] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub prior_precision: f64,
    pub step_size: f64,
    pub max_epochs: usize,
    pub convergence_tol: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { prior_precision: 1.0, step_size: 1e-2, max_epochs: 5000, convergence_tol: 1e-5 }
    }
}

impl TrainParams {
    pub fn to_train_config(&self) -> crate::nnet::TrainConfig {
        crate::nnet::TrainConfig {
            prior_precision: self.prior_precision,
            step_size: self.step_size,
            max_epochs: self.max_epochs,
            moment_decays: (0.9, 0.999),
            convergence_tol: self.convergence_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlaParams {
    pub lambda_grid: Vec<f64>,
    pub mc_samples: usize,
}

impl Default for LlaParams {
    fn default() -> Self {
        Self { lambda_grid: vec![0.001, 0.01, 0.1, 1.0], mc_samples: 1000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcParams {
    /// Leapfrog step size; 0 selects the 0.5/√N heuristic per cell.
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub warmup: usize,
    pub samples: usize,
    pub prior_sd: f64,
    /// Epoch budget of the MAP run used to initialize each chain.
    pub init_epochs: usize,
}

impl Default for HmcParams {
    fn default() -> Self {
        Self { step_size: 0.0, leapfrog_steps: 20, warmup: 1000, samples: 200, prior_sd: 1.0, init_epochs: 300 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McdParams {
    pub dropout: f64,
    pub passes: usize,
}

impl Default for McdParams {
    fn default() -> Self {
        Self { dropout: 0.5, passes: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeParams {
    pub members: usize,
}

impl Default for DeParams {
    fn default() -> Self {
        Self { members: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_folds")]
    pub folds: u32,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetParams,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub train: TrainParams,
    #[serde(default)]
    pub lla: LlaParams,
    #[serde(default)]
    pub hmc: HmcParams,
    #[serde(default)]
    pub mcd: McdParams,
    #[serde(default)]
    pub de: DeParams,
}

fn default_folds() -> u32 {
    3
}

impl ExperimentConfig {
    /// SHA-256 of the canonical JSON serialization; reordering keys in the
    /// TOML file does not change this hash.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The 12-point log grid of the full-scale protocol, 10² to 10⁶.
    pub fn full_n_grid() -> Vec<usize> {
        (0..12)
            .map(|k| 10f64.powf(2.0 + 4.0 * k as f64 / 11.0).round() as usize)
            .collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |field: &str, message: String| -> Result<(), HarnessError> {
            Err(HarnessError::Config { field: field.into(), message })
        };
        if self.n_grid.is_empty() {
            return fail("n_grid", "must not be empty".into());
        }
        if !self.n_grid.windows(2).all(|w| w[0] < w[1]) {
            return fail("n_grid", format!("must be strictly increasing, got {:?}", self.n_grid));
        }
        if self.n_grid[0] < 2 {
            return fail("n_grid", "entries must be at least 2".into());
        }
        if self.folds < 1 {
            return fail("folds", "must be at least 1".into());
        }
        if !self.dataset.noise_sd.is_finite() || self.dataset.noise_sd < 0.0 {
            return fail("dataset.noise_sd", format!("must be nonnegative, got {}", self.dataset.noise_sd));
        }
        if self.dataset.test_size < 1 {
            return fail("dataset.test_size", "must be at least 1".into());
        }
        if !self.dataset.noise_sigma.is_finite() || self.dataset.noise_sigma <= 0.0 {
            return fail("dataset.noise_sigma", "must be positive".into());
        }
        if self.dataset.dim < 1 {
            return fail("dataset.dim", "must be at least 1".into());
        }
        if !self.train.prior_precision.is_finite() || self.train.prior_precision <= 0.0 {
            return fail("train.prior_precision", "must be positive".into());
        }
        if !self.train.step_size.is_finite() || self.train.step_size <= 0.0 {
            return fail("train.step_size", "must be positive".into());
        }
        match self.experiment {
            ExperimentKind::LlaSweep | ExperimentKind::Spectrum => {
                if self.lla.lambda_grid.is_empty() {
                    return fail("lla.lambda_grid", "must not be empty".into());
                }
                if self.lla.lambda_grid.iter().any(|&l| !l.is_finite() || l <= 0.0) {
                    return fail("lla.lambda_grid", "entries must be positive".into());
                }
                if self.lla.mc_samples < 2 {
                    return fail("lla.mc_samples", "need at least 2 Monte Carlo samples".into());
                }
            }
            ExperimentKind::HmcTwomoons => {
                if self.hmc.samples < 1 {
                    return fail("hmc.samples", "must be at least 1".into());
                }
                if self.hmc.leapfrog_steps < 1 {
                    return fail("hmc.leapfrog_steps", "must be at least 1".into());
                }
                if !self.hmc.prior_sd.is_finite() || self.hmc.prior_sd <= 0.0 {
                    return fail("hmc.prior_sd", "must be positive".into());
                }
                if self.hmc.step_size < 0.0 {
                    return fail("hmc.step_size", "must be nonnegative (0 enables the heuristic)".into());
                }
            }
            ExperimentKind::McdTwomoons => {
                if !(0.0..1.0).contains(&self.mcd.dropout) {
                    return fail("mcd.dropout", format!("must lie in [0, 1), got {}", self.mcd.dropout));
                }
                if self.mcd.passes < 1 {
                    return fail("mcd.passes", "must be at least 1".into());
                }
            }
            ExperimentKind::DeTwomoons => {
                if self.de.members < 1 {
                    return fail("de.members", "must be at least 1".into());
                }
            }
            ExperimentKind::BlrScaling => {}
        }
        Ok(())
    }
}

/// Parses a TOML fragment for an override value, falling back to a string.
fn parse_override_value(raw: &str) -> Result<toml::Value, HarnessError> {
    let snippet = format!("v = {raw}");
    if let Ok(table) = snippet.parse::<toml::Table>() {
        if let Some(v) = table.get("v") {
            return Ok(v.clone());
        }
    }
    Ok(toml::Value::String(raw.to_string()))
}

/// Applies one `key.path=value` override onto a parsed TOML table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), HarnessError> {
    for entry in overrides {
        let (path, raw_value) = entry.split_once('=').ok_or_else(|| HarnessError::Config {
            field: entry.clone(),
            message: "override must look like key=value".into(),
        })?;
        let value = parse_override_value(raw_value.trim())?;
        let segments: Vec<&str> = path.trim().split('.').collect();
        let mut cursor = &mut *table;
        for (i, seg) in segments.iter().enumerate() {
            if i + 1 == segments.len() {
                cursor.insert(seg.to_string(), value.clone());
            } else {
                let next = cursor
                    .entry(seg.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                cursor = next.as_table_mut().ok_or_else(|| HarnessError::Config {
                    field: path.to_string(),
                    message: format!("`{seg}` is not a table"),
                })?;
            }
        }
    }
    Ok(())
}

/// Parses and validates a config from TOML text with overrides applied.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<ExperimentConfig, HarnessError> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config {
        field: "<config>".into(),
        message: e.to_string(),
    })?;
    apply_overrides(&mut table, overrides)?;
    let config: ExperimentConfig =
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| HarnessError::Config {
            field: "<config>".into(),
            message: e.to_string(),
        })?;
    config.validate()?;
    Ok(config)
}

/// Loads a config file, applying overrides and validation.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, overrides)
}
