use thiserror::Error;

use crate::monodromy::LyapunovConditionReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed config: {0}")]
    MalformedConfig(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite state encountered at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("K({t}, {s}) requested outside the tabulated range")]
    OutOfTable { t: f64, s: f64 },

    #[error("eigenvalue computation failed: {0}")]
    EigenFailure(String),

    #[error("Stein equation is singular (rcond = {rcond:e})")]
    SingularStein { rcond: f64 },

    #[error(
        "Lyapunov matrix is not unique: rcond = {rcond:e}, sigma_min = {sigma_min:e}; {}",
        report.summary()
    )]
    NonUniqueLyapunovMatrix {
        rcond: f64,
        sigma_min: f64,
        report: Box<LyapunovConditionReport>,
    },

    #[error("|theta - s| = {sep} exceeds T + h = {limit}")]
    UnsupportedSeparation { sep: f64, limit: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
