use thiserror::Error;

/// Crate-wide error type.
///
/// `Config` and `Resolve` exist so the CLI can map failures to distinct exit
/// codes (bad config text vs. a config that parses but names unknown things);
/// everything else is a runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite state: {0}")]
    NonFinite(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("start point lies outside the domain")]
    StartOutsideDomain,

    #[error("diffusion degenerate at the origin: {0}")]
    DegenerateDiffusion(String),

    #[error("jump floor too aggressive: {0}")]
    JumpFloorTooAggressive(String),

    #[error("empty sample set: {0}")]
    EmptySamples(String),

    #[error("capped records present: {0}")]
    CappedRecords(String),

    #[error("flow never reached the target: {0}")]
    FlowNotReached(String),

    #[error("config parse error: {0}")]
    Config(String),

    #[error("config resolve error: {0}")]
    Resolve(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
