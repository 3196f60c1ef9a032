//! Configuration-driven experiment runner behind the `uqscale` CLI.
//!
//! `run` executes one experiment protocol (sweeps over method × N × λ ×
//! fold), writing `curves.csv`, `fits.json` and `report.svg` into the
//! output directory; `report` refits an existing curves file. Artifacts are
//! byte-deterministic given (config, seed): every sweep cell owns its
//! random streams and results are gathered in a fixed cell order.

mod config;
mod csvio;
mod fits;
mod runner;
mod svg;

pub use config::{
    apply_overrides, load_config, parse_config_str, DatasetParams, DeParams, ExperimentConfig,
    ExperimentKind, HmcParams, LlaParams, McdParams, ModelParams, TrainParams,
};
pub use csvio::{read_curves_csv, write_curves_csv, CurveRow};
pub use fits::{compute_fits, render_fit_table, FitRecord};
pub use runner::{report, run_experiment, RunRecord};
pub use svg::write_report_svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl HarnessError {
    /// CLI exit code: 2 for config errors, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            _ => 3,
        }
    }
}

macro_rules! impl_runtime_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for HarnessError {
            fn from(e: $ty) -> Self {
                HarnessError::Runtime(e.to_string())
            }
        })*
    };
}

impl_runtime_from!(
    crate::linalg::LinalgError,
    crate::dataset::DatasetError,
    crate::uq::UqError,
    crate::blr::BlrError,
    crate::nnet::NnetError,
    crate::laplace::LaplaceError,
    crate::samplers::SamplerError,
    crate::scaling::FitError
);
