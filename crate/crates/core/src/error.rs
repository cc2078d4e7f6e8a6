use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("operator is not positive semidefinite: minimum eigenvalue {min_eigenvalue:e} is below -{tolerance:e}")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    /// The Bogoliubov variable left `HS_eps`, i.e. `1 + z` is no longer bounded below by `1 - eps`.
    #[error("operator outside HS_eps: minimum eigenvalue {min_eigenvalue:e} is below -{floor}")]
    NotInDomain { min_eigenvalue: f64, floor: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("grids do not correspond node by node: {0}")]
    GridMismatch(String),

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),

    #[error("counterexample construction degenerate after {attempts} seed vectors (c = {coupling:e})")]
    DegenerateConstruction { attempts: usize, coupling: f64 },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
