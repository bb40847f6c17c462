use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("case declares no base_mva")]
    MissingBase,

    #[error("no slack bus")]
    NoSlackBus,

    #[error("{context}: unknown bus '{bus}'")]
    DanglingBus { context: String, bus: String },

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("no generator has slack capacity left")]
    NoSlackCapacity,

    #[error("active power {p_mw} MW exceeds the armature current bound {bound_mva} MVA")]
    NoReactiveHeadroom { p_mw: f64, bound_mva: f64 },

    #[error("saturation fixed point did not converge in {0} iterations")]
    SaturationDiverged(usize),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("removing branch '{0}' islands the network")]
    Islanding(String),

    #[error("unknown branch '{0}'")]
    UnknownBranch(String),

    #[error("simulation stopped at t = {t_s} s: {reason}")]
    TraceAborted {
        t_s: f64,
        reason: String,
        /// Trace up to the last converged state.
        last: Box<crate::control::QssTrace>,
    },

    #[error("degenerate stress direction: sum of active stress coefficients must be positive")]
    DegenerateStress,
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
