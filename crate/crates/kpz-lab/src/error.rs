//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its admissible range. The
    /// message names the offending field and the constraint it violates.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two discretisations that must agree (grid sizes, time meshes,
    /// horizons) do not.
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    /// A solver or iteration left the stable regime (non-finite values or a
    /// sup norm above its ceiling).
    #[error("numerical instability: {0}")]
    Instability(String),

    /// An iterative search hit its cap without satisfying its target.
    #[error("search exhausted: {0}")]
    SearchExhausted(String),

    /// A probability or density underflowed to zero where a positive value
    /// is required.
    #[error("probability underflow: {0}")]
    Underflow(String),

    /// Too few samples or too short a horizon for the requested statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Snapshot encoding or decoding failed.
    #[error("snapshot format: {0}")]
    SnapshotFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
