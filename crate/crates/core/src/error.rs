use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("field of size (n={n}, h={h}) does not cover the requested box (n={need_n}, h={need_h})")]
    FieldTooSmall {
        n: usize,
        h: usize,
        need_n: usize,
        need_h: usize,
    },

    #[error("instance too large: {what} = {got} exceeds the cap {cap}")]
    TooLarge {
        what: &'static str,
        got: usize,
        cap: usize,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
