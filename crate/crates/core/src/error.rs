use thiserror::Error;

pub type Result<T> = std::result::Result<T, LsslError>;

#[derive(Debug, Error)]
pub enum LsslError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular pivot {pivot:e} at row {row}")]
    SingularPivot { row: usize, pivot: f64 },

    #[error("power series has zero constant term")]
    ZeroConstantTerm,

    #[error("power series inversion failed: constant term {0:e}")]
    SeriesInversion(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn dim_check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(LsslError::DimensionMismatch(what()))
    }
}
