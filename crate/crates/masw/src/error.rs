use crate::model::ModelViolation;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {}", format_violations(.0))]
    InvalidModel(Vec<ModelViolation>),

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error(
        "no determinant sign change for wavelength {wavelength} m in [{v_min}, {v_max}] m/s; \
         the sweep does not bracket a root"
    )]
    NoSignChange {
        wavelength: f64,
        v_min: f64,
        v_max: f64,
    },

    #[error("curve length mismatch: theoretical has {theoretical} points, experimental has {experimental}")]
    CurveLengthMismatch {
        theoretical: usize,
        experimental: usize,
    },

    #[error("curves must contain at least one point")]
    EmptyCurve,

    #[error("experimental velocity at index {index} is {value}; all entries must be positive")]
    NonpositiveExperimental { index: usize, value: f64 },

    #[error("grid needs {required} bytes but the memory budget is {budget} bytes")]
    MemoryBudgetExceeded { required: u64, budget: u64 },

    #[error("no wavelength reaches phase velocity {target} m/s on the reference curve")]
    TierNotReachable { target: f64 },

    #[error("every candidate model failed to produce a dispersion curve")]
    AllCandidatesFailed,

    #[error("benchmark run with engine {engine} did not reproduce the serial result")]
    VerificationFailed { engine: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    /// Process exit code for the CLI: 1 for computation failures,
    /// 2 for usage and input errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoSignChange { .. }
            | Error::AllCandidatesFailed
            | Error::MemoryBudgetExceeded { .. }
            | Error::VerificationFailed { .. } => 1,
            _ => 2,
        }
    }
}

fn format_violations(violations: &[ModelViolation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
