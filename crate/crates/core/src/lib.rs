//! Simulator and analysis toolkit for hubs-and-spokes collaborative learning.
//!
//! A fleet of `n_s` spokes trains local models and periodically mixes them
//! through `n_h` hubs in three randomized stages per round:
//!
//! ```text
//!   spokes ──push──▶ hubs ──gossip──▶ hubs ──pull──▶ spokes
//!    (W_hs: n_h×n_s)   (W_hh: n_h×n_h)   (W_sh: n_s×n_h)
//! ```
//!
//! Every stage is a row-stochastic averaging step, so one full round acts on
//! the spoke models as the effective matrix `W_sh · W_hh · W_hs`. The crate
//! provides:
//!
//! * [`topology`]: samplers for the three stage matrices and for flat
//!   baselines (local/oracle epidemic gossip, Erdős–Rényi, torus, star),
//!   plus edge accounting for communication budgets.
//! * [`metrics`]: consensus distance, its per-round contraction ratio, and
//!   the variance identity used to cross-check it.
//! * [`bounds`]: closed-form contraction factors `β_hs`, `β_hh`, `β_sh`,
//!   their product `β_HSL`, the tuned step size, and the steady-state
//!   consensus-distance bound.
//! * [`spectral`]: spectral gap of mixing matrices and Monte Carlo gap
//!   averages across sampled rounds.
//! * [`learning`]: synthetic quadratic/logistic objectives, Dirichlet data
//!   partitioning, local SGD, and the full training loop.
//! * [`verify`]: Monte Carlo verification of the contraction claims with
//!   standard-error-based pass criteria.
//! * [`config`] / [`runner`]: the sectioned key=value experiment format and
//!   the CSV-emitting execution paths behind the `hsl-sim` binary.
//!
//! All randomness flows from one explicit 64-bit seed through documented
//! derivation tags ([`rng`]), so equal seeds reproduce results bit for bit
//! regardless of worker parallelism.

pub mod bounds;
pub mod config;
pub mod learning;
pub mod metrics;
pub mod rng;
pub mod runner;
pub mod spectral;
pub mod topology;
pub mod verify;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a documented constraint.
    #[error("configuration error: {0}")]
    Config(String),
    /// A randomized sampler exhausted its retry budget or was asked for an
    /// impossible draw.
    #[error("sampling error: {0}")]
    Sampling(String),
    /// Matrix or vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// The experiment document could not be parsed.
    #[error("parse error ({location}): {message}")]
    Parse { location: String, message: String },
    /// Training produced a non-finite model entry.
    #[error("divergence at round {round}: {message}")]
    Divergence { round: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn sampling(msg: impl Into<String>) -> Self {
        Error::Sampling(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Reads the optional worker-parallelism cap. Unset or unparsable means
/// "let the thread pool decide".
pub fn worker_cap_from_env() -> Option<usize> {
    std::env::var("HSL_SIM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Installs the global worker pool honoring `HSL_SIM_THREADS`. Safe to call
/// more than once; only the first call wins (later calls are no-ops).
pub fn init_worker_pool() {
    if let Some(n) = worker_cap_from_env() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
