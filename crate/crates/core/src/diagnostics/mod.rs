//! Measurements of the quantities behind the convergence argument:
//! fluctuation terms, stopping-time cycles, moment growth, decay rates and
//! Poisson-equation solutions.

pub mod cycles;
pub mod decay;
pub mod fluctuation;
pub mod moments;
pub mod poisson;
pub mod run_dir;

use thiserror::Error;

use crate::integrator::IntegratorError;
use crate::oracle::OracleError;

pub use cycles::{detect_cycles, CycleRecord};
pub use decay::{decay_rate_fit, DecayFit, DecayMode, DecayOptions};
pub use fluctuation::{
    dyadic_windows, fluctuation_terms, windowed_fluctuation_integral, FluctuationSample,
    WindowIntegral,
};
pub use moments::{moment_tracker, moments_from_paths, MomentOptions, MomentReport};
pub use poisson::{
    estimate_poisson_solution, growth_fit, GrowthFit, PoissonEstimate, PoissonOptions,
    PoissonVariant,
};
pub use run_dir::{diagnose_run, write_outcome, DiagnoseParams, DiagnosticKind, Verdict};

#[derive(Debug, Error)]
pub enum DiagnosticError {
    #[error("no oracle values cached for the current parameter")]
    CacheMiss,
    #[error("window [{t_start}, {t_end}] has {samples} samples, need at least {required}")]
    SparseWindow {
        t_start: f64,
        t_end: f64,
        samples: usize,
        required: usize,
    },
    #[error("insufficient signal: {0}")]
    InsufficientSignal(String),
    #[error("estimation failed: {0}")]
    EstimationFailure(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}
