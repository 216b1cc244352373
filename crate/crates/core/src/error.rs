use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {name} = {value} ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    Dimension {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("pose grid would hold {size} poses, above the cap of {cap}")]
    GridCap { size: usize, cap: usize },

    #[error("kernel size {kernel_size} cannot hold pose {pose} (theta={theta}, tx={tx}, ty={ty}) at patch {patch}")]
    KernelTooSmall {
        kernel_size: usize,
        pose: usize,
        theta: f64,
        tx: f64,
        ty: f64,
        patch: usize,
    },

    #[error("image {width}x{height} is too small for kernel size {kernel_size}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        kernel_size: usize,
    },

    #[error("all blur weights are zero")]
    ZeroWeights,

    #[error("zero {0}")]
    Zero(&'static str),

    #[error("pose (theta={theta}, tx={tx}, ty={ty}) is more than half a step away from the declared grid")]
    OffGrid { theta: f64, tx: f64, ty: f64 },

    #[error("motion weights sum to {0}, expected 1")]
    WeightSum(f64),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
