use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} entries, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    /// Pulse duty or effective duty at 0 or 1: diode and transformer current is unbounded.
    #[error("unbounded diode-bridge current: duty {duty} leaves no conduction window")]
    UnboundedCurrent { duty: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("simulation unstable at t = {t:.6e} s: {variable} = {value}")]
    Instability {
        t: f64,
        variable: &'static str,
        value: f64,
    },

    #[error("setpoint {value} V is not reachable (profile covers {min} V to {max} V)")]
    UnreachableSetpoint { value: f64, min: f64, max: f64 },

    #[error("every shared-module candidate requires an infeasible main-module index")]
    NoFeasibleCandidate,

    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` is neither `Clone` nor `PartialEq`; keep its message only.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct IoError(pub String);

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(IoError(e.to_string()))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(IoError(e.to_string()))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit_interval(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            domain: "[0, 1]",
        })
    }
}
