use thiserror::Error;

/// Errors raised by the positioning toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate area: {0}")]
    DegenerateArea(String),

    #[error("degenerate pair: frequency difference must be positive, got {0} Hz")]
    DegeneratePair(f64),

    #[error("degenerate spectrum: the phase-difference vector sum has zero magnitude")]
    DegenerateSpectrum,

    #[error("spacing {k} out of range: expected 0 < k <= {max}")]
    SpacingOutOfRange { k: usize, max: usize },

    #[error("comb misalignment: spacing {k} is not a multiple of comb size {comb}")]
    CombMisalignment { k: usize, comb: usize },

    #[error("no allocated subcarrier pairs at spacing {0}")]
    NoAllocatedPairs(usize),

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    #[error(
        "ambiguity not excluded: coarse virtual wavelength {lambda:.3} m does not cover the maximum range {max_range:.3} m"
    )]
    AmbiguityNotExcluded { lambda: f64, max_range: f64 },

    #[error("insufficient LOS links: {0} usable, at least 3 required")]
    InsufficientLinks(usize),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("diverged: training loss is not finite")]
    Diverged,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dataset must contain both LOS and NLOS samples")]
    SingleClass,

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("singular innovation covariance")]
    SingularInnovation,

    #[error("timestamps out of order: {0}")]
    OutOfOrder(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

}

pub type Result<T> = std::result::Result<T, Error>;
