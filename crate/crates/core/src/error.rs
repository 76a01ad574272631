use thiserror::Error;

/// Errors surfaced by the estimation and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// The regression matrix is numerically rank deficient.
    #[error(
        "regression matrix is rank deficient: smallest singular value {smallest:.3e} < 1e-12 x largest {largest:.3e}"
    )]
    RankDeficient { smallest: f64, largest: f64 },

    /// The noise-free output has zero sample variance, so no input scaling
    /// can reach the requested SNR.
    #[error("noise-free output has zero sample variance; cannot scale input to the target SNR")]
    DegenerateSignal,

    /// The weighting function `C1 r + C2 / r` vanishes at the evaluation
    /// radius (possible only when `C1 C2 < 0`).
    #[error("weighting function pole: radius {r:.6e} is within 1e-12 of the zero at {pole:.6e}")]
    PoleRadius { r: f64, pole: f64 },

    /// Every posterior draw fell on a pole of the weighting function.
    #[error("all posterior draw weights are zero; cannot form the self-normalized mean")]
    DegenerateWeights,

    /// FIT is undefined because the true parameter vector is constant.
    #[error("FIT undefined: ||theta0 - mean(theta0)|| = {norm:.3e} < 1e-14")]
    UndefinedFit { norm: f64 },

    /// A configuration value violates its documented constraints.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Too many per-replication failures for one method in a Monte Carlo study.
    #[error("failure rate {rate:.4} for method {method} exceeds the 1% abort threshold")]
    FailureRate { method: String, rate: f64 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
