use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: &'static str },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("site {site} out of range for a space with {n_sites} subsystems")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("Hilbert spaces do not match: {0}")]
    SpaceMismatch(String),

    #[error("truncation too small: tail weight {tail_weight:.3e} beyond dimension {dim}")]
    Truncation { dim: usize, tail_weight: f64 },

    #[error("operator is not Hermitian (deviation {deviation:.3e})")]
    NonHermitian { deviation: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("integrator step size underflow at t = {t} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("positivity violated at t = {t}: minimum eigenvalue {min_eigenvalue:.3e}")]
    PositivityViolation { t: f64, min_eigenvalue: f64 },

    #[error("steady state is degenerate (multiplicity {multiplicity}); supply an initial state to project")]
    DegenerateSteadyState { multiplicity: usize },

    #[error("steady state not found: {0}")]
    SteadyState(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("state norm underflow at t = {t} without reaching the jump threshold")]
    NormUnderflow { t: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("no convergence after {iterations} iterations: {reason}")]
    NonConvergence { iterations: usize, reason: String },

    #[error("missing label `{0}`")]
    MissingLabel(String),
}

pub type Result<T> = std::result::Result<T, Error>;
