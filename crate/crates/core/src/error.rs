use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid transform length {0}: expected a power of two")]
    InvalidLength(usize),

    #[error("malformed spectrum: {0}")]
    MalformedSpectrum(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("block size {block} does not divide a {rows}x{cols} matrix")]
    Partition {
        rows: usize,
        cols: usize,
        block: usize,
    },

    #[error("non-finite value encountered in {0}")]
    Numeric(String),

    #[error("training diverged at ADMM iteration {iteration}; last finite objective {last_objective}")]
    Divergence {
        iteration: usize,
        last_objective: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
