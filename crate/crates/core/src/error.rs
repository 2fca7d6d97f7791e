use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid constellation: {0}")]
    InvalidConstellation(String),

    #[error("unknown constellation `{0}`")]
    UnknownConstellation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-finite matrix entries")]
    NonFiniteMatrix,

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("matrix is rank deficient (rank {rank} of {dim})")]
    RankDeficient { rank: usize, dim: usize },

    #[error("coupling undefined: zero diagonal entry at index {0}")]
    UndefinedCoupling(usize),

    #[error("FIM is not positive semidefinite (quadratic form {0:e})")]
    NotPsd(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("burst file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteMatrix
                | Error::Singular(_)
                | Error::RankDeficient { .. }
                | Error::NotPsd(_)
                | Error::UndefinedCoupling(_)
        )
    }
}
