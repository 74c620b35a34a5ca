//! Truncated Pauli-Fierz models: Fock-space primitives, Hamiltonians and
//! thermal Liouvilleans, positive-commutator certificates and a
//! limiting-absorption probe for regularized Mourre estimates.

pub mod coupling;
pub mod dense;
pub mod exec;
pub mod fock;
pub mod hamiltonian;
pub mod krylov;
pub mod liouville;
pub mod mourre_lap;
pub mod sparse;

pub use exec::Exec;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("operator is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is singular")]
    Singular,
    #[error("invalid modes: {0}")]
    InvalidModes(String),
    #[error("truncated dimension {dim} exceeds cap {cap}")]
    TruncationTooLarge { dim: usize, cap: usize },
    #[error("operator norm {0:.6} exceeds one")]
    NotContraction(f64),
    #[error("partition is not isometric (defect {0:.3e})")]
    IsometryDefect(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{0}")]
    Divergent(String),
    #[error("no Mourre estimate on the window: {0}")]
    NoCertificate(String),
    #[error("insufficient grid resolution: {0}")]
    InsufficientResolution(String),
}

pub type Result<T> = std::result::Result<T, Error>;
