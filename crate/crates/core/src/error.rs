//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor could not be constructed or reshaped.
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// Two operands fed to `op` carry incompatible shapes.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A value that must be finite turned out NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Gradient was requested for a graph whose output is not a scalar.
    #[error("gradient requires a scalar output node, got {len} elements")]
    NotScalarOutput { len: usize },

    /// Gradient was requested with respect to an interior node.
    #[error("node {node} is not a leaf")]
    NotALeaf { node: usize },

    /// A configuration or argument failed validation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Netpbm header could not be parsed.
    #[error("malformed image: {0}")]
    MalformedImage(String),

    /// Netpbm maxval other than 255.
    #[error("unsupported maxval {found}, only 255 is accepted")]
    UnsupportedMaxval { found: u32 },

    /// Pixel payload shorter than the header promises.
    #[error("short image data: expected {expected} bytes, found {found}")]
    ShortImageData { expected: usize, found: usize },

    /// Checkpoint file does not start with the expected magic bytes.
    #[error("bad checkpoint magic {found:?}, expected \"OBSD\"")]
    BadMagic { found: [u8; 4] },

    /// Checkpoint version this build does not understand.
    #[error("unsupported checkpoint version {found}")]
    UnsupportedVersion { found: u32 },

    /// Stored CRC32 does not match the file contents.
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    /// Checkpoint body failed structural validation after the CRC passed.
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    /// Iterative solver ran out of iterations.
    #[error("no convergence after {iters} iterations, last residual {residual:e}")]
    NoConvergence { iters: usize, residual: f64 },

    /// Attack objective became non-finite.
    #[error("attack objective non-finite at iteration {iteration}")]
    AttackDiverged { iteration: usize },

    /// Training loss became non-finite.
    #[error("training loss non-finite at epoch {epoch}, step {step}")]
    TrainingDiverged { epoch: usize, step: usize },
}
