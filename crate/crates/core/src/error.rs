use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("degenerate constraint")]
    DegenerateConstraint,
    #[error("Weierstrass condition violated at sample")]
    WeierstrassViolated,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("time {t} outside horizon [{start}, {end}]")]
    OutsideHorizon { t: f64, start: f64, end: f64 },
    #[error("no demonstrations yet")]
    EmptyBuffer,
    #[error("control Hessian not positive definite after regularization")]
    IndefiniteHessian,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
