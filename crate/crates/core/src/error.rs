use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dense backend size limit: L = {sites} exceeds the maximum of {max} sites")]
    DenseSizeLimit { sites: usize, max: usize },

    #[error("bond {bond} grew to dimension {dim}, beyond the memory budget of {budget}")]
    BondBudget {
        bond: usize,
        dim: usize,
        budget: usize,
    },

    #[error("conditioned weight underflow ({0:e})")]
    WeightUnderflow(f64),

    #[error("all measurement branches have vanishing probability")]
    VanishingBranch,

    #[error("linear algebra failure: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed record file: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
