use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("stock must be non-negative, got {0}")]
    NegativeStock(f64),

    #[error("harvest rate must be positive, got {0}")]
    NonPositiveHarvest(f64),

    #[error("hysteretic operation requires the low-fecundity tipping point x_p_h")]
    MissingHysteresisThreshold,

    #[error("x = {x} outside domain [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },

    #[error("integration failed on {context} at t = {t}, state = {state:?}: {reason}")]
    Integration {
        context: String,
        t: f64,
        state: Vec<f64>,
        reason: String,
    },

    #[error("{arm} arm left the admissible harvest band at x = {x}, h = {h} ({reason})")]
    ArmTerminated {
        arm: &'static str,
        x: f64,
        h: f64,
        reason: &'static str,
    },

    #[error("root bracket failure: {0}")]
    Bracket(String),

    #[error("value difference changes sign {} times at x ~ {crossings:?}; single crossing violated", crossings.len())]
    SingleCrossingViolated { crossings: Vec<f64> },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e}, recent history {history:?})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("stock exhausted at t = {t}")]
    Extinction {
        t: f64,
        trajectory: Box<crate::trajectory::Trajectory>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
