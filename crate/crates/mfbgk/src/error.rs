//! Error types shared across the solver.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an operation argument was violated.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// A macroscopic state is outside its physical domain (rho <= 0, T <= 0).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Quadrature produced a vacuum or sub-floor temperature (blow-up signal).
    #[error("degenerate state: {0}")]
    DegenerateState(String),

    /// Too few usable neighbors, or the least-squares matrix is singular.
    #[error("deficient stencil at particle {particle}")]
    DeficientStencil { particle: usize },

    /// A particle left the computational domain (broken move step).
    #[error("particle {particle} outside domain at {position:?}")]
    OutOfDomain { particle: usize, position: [f64; 3] },

    /// The outgoing-flux denominator of the diffuse reflection is not positive.
    #[error("degenerate wall flux at boundary particle {particle}")]
    DegenerateWall { particle: usize },

    /// The configured time step exceeds the positivity bound of the upwind scheme.
    #[error(
        "time step {dt:.3e} exceeds stable_dt {stable_dt:.3e} at step {step}; \
         reduce dt or refine the velocity bound"
    )]
    UnstableTimeStep { dt: f64, stable_dt: f64, step: u64 },

    /// A numerical failure wrapped with the step/particle where it occurred.
    #[error("step {step}, particle {particle}: {source}")]
    Numerical {
        step: u64,
        particle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config is missing required key `{key}`")]
    ConfigMissing { key: String },

    #[error("config line {line}: unknown key `{key}`")]
    ConfigUnknown { line: usize, key: String },

    #[error("config key `{key}`: {message}")]
    ConfigInvalid { key: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach step/particle context to a numerical failure.
    pub fn at(self, step: u64, particle: usize) -> Error {
        Error::Numerical {
            step,
            particle,
            source: Box::new(self),
        }
    }

    /// Process exit code used by the command-line front end:
    /// 0 success, 2 config error, 3 numerical abort, 4 io error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. }
            | Error::ConfigMissing { .. }
            | Error::ConfigUnknown { .. }
            | Error::ConfigInvalid { .. } => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}
