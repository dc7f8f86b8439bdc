use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("metric is not Lorentzian at (t={t}, x={x:?}): {negative} negative eigenvalues")]
    Signature { t: f64, x: [f64; 3], negative: usize },

    #[error("lapse n={lapse} at (t={t}, x={x:?}) leaves [1/2, 2]")]
    LapseBound { t: f64, x: [f64; 3], lapse: f64 },

    #[error("point (t={t}, x={x:?}) is outside [0,1]x[-{radius},{radius}]^3")]
    OutOfDomain { t: f64, x: [f64; 3], radius: f64 },

    #[error("trajectory left the domain box at t={t}")]
    DomainExit { t: f64 },

    #[error("integrator failed at t={t}: {reason}")]
    StepFailure { t: f64, reason: String },

    #[error("characteristics cross near (t={t}, x={x:?}): {detail}")]
    Caustic { t: f64, x: [f64; 3], detail: String },

    #[error("|grad u| = {norm:e} below threshold at (t={t}, x={x:?})")]
    DegenerateGradient { t: f64, x: [f64; 3], norm: f64 },

    #[error("points {first:?} and {second:?} map to the same optical coordinates")]
    CoordinateCollision { first: [f64; 3], second: [f64; 3] },

    #[error("two maximizers {first:?} and {second:?} with m0 = {value}")]
    AmbiguousMaximizer {
        first: [f64; 3],
        second: [f64; 3],
        value: f64,
    },

    #[error("Gram matrix g(d_w N, d_w N) has condition number {condition:e}")]
    GramSingular { condition: f64 },

    #[error("connecting curve misses its target by {defect:e} (budget {budget:e})")]
    EndpointDefect { defect: f64, budget: f64 },

    #[error("lower bound violated: |phi| = {phi:e} < bound {bound:e} at omega={omega:?} ({case})")]
    BoundViolation {
        omega: [f64; 3],
        phi: f64,
        bound: f64,
        case: String,
    },

    #[error("quadrature under-resolved: refinement changed value by {relative_change:e} (relative)")]
    Underresolved { relative_change: f64 },

    #[error("inadmissible Strichartz pair: {0}")]
    Admissibility(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
