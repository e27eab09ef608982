use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("variance of the difference Y_R - Y_U is not positive ({sigma_o:e}); estimators too collinear or covariance invalid")]
    NonPositiveSigmaO { sigma_o: f64 },

    #[error("correlation between Y_U and Y_O is {rho}, must lie strictly inside (-1, 1)")]
    RhoOutOfRange { rho: f64 },

    #[error("restricted variance {sigma_r:e} is not below unrestricted variance {sigma_u:e}; supply the covariance explicitly")]
    HausmanOrderViolated { sigma_u: f64, sigma_r: f64 },

    #[error("t = {t} lies outside the policy grid [{lo}, {hi}]")]
    OutOfGridRange { t: f64, lo: f64, hi: f64 },

    #[error("shrinkage weight is undefined at t = 0")]
    UndefinedWeight,

    #[error("posterior denominator underflows at observation cell {cell}; widen the bias grid or shrink the observation grid")]
    DegenerateCell { cell: usize },

    #[error("least favorable prior search stopped after {iterations} iterations (value {value}, gap {gap:e})")]
    NoConvergence {
        iterations: usize,
        value: f64,
        gap: f64,
        best_prior: Vec<f64>,
    },

    #[error("rho^2 = {rho2} exceeds the solved range (max {max}); clamp explicitly")]
    RhoTooExtreme { rho2: f64, max: f64 },

    #[error("risk cap {cap} is infeasible: {reason}")]
    InfeasibleCap { cap: f64, reason: String },

    #[error("lookup file version {found} does not match supported version {expected}")]
    FormatVersionMismatch { found: u32, expected: u32 },

    #[error("lookup checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    ChecksumMismatch { stored: u64, computed: u64 },

    #[error("selected covariance block is singular")]
    SingularSubCovariance,

    #[error("malformed lookup file: {0}")]
    Format(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Format(_)
            | Error::FormatVersionMismatch { .. }
            | Error::ChecksumMismatch { .. } => 4,
            Error::InvalidInput(_) => 2,
            _ => 3,
        }
    }

    /// Short variant name, printed by the CLI next to the message.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonPositiveSigmaO { .. } => "NonPositiveSigmaO",
            Error::RhoOutOfRange { .. } => "RhoOutOfRange",
            Error::HausmanOrderViolated { .. } => "HausmanOrderViolated",
            Error::OutOfGridRange { .. } => "OutOfGridRange",
            Error::UndefinedWeight => "UndefinedWeight",
            Error::DegenerateCell { .. } => "DegenerateCell",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::RhoTooExtreme { .. } => "RhoTooExtreme",
            Error::InfeasibleCap { .. } => "InfeasibleCap",
            Error::FormatVersionMismatch { .. } => "FormatVersionMismatch",
            Error::ChecksumMismatch { .. } => "ChecksumMismatch",
            Error::SingularSubCovariance => "SingularSubCovariance",
            Error::Format(_) => "Format",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io { .. } => "Io",
        }
    }
}
