use thiserror::Error;

/// Errors produced by the Kac-flow toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The law at `t = 0` is a point mass at the origin and has no density.
    #[error("degenerate law at t = {0}: the state is a point mass")]
    DegenerateLaw(f64),

    #[error("state outside support: {msg} (nearest support distance {distance:e})")]
    OutsideSupport { msg: String, distance: f64 },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("integration produced a non-finite state at node {node} (t = {t})")]
    Integration {
        node: usize,
        t: f64,
        last_good: Vec<f64>,
    },

    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize, trace: Vec<f64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
