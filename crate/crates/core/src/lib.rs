//! Hyperspectral masked-autoencoder toolkit: cube data model and file format,
//! spectral channel statistics and SCI similarity, channel grouping strategies,
//! grouped patch masking, composite reconstruction losses with analytic
//! gradients, and a small deterministic transformer trainer.

pub mod cube;
pub mod grouping;
pub mod loss;
pub mod masking;
pub mod model;
pub mod optim;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod trainer;

/// Error type shared across the crate. Variants map onto the CLI exit-code
/// classes: configuration (bad arguments), data (files/shapes), numeric.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("all channels are sentinel-valued")]
    EmptyCube,
    #[error("tile size {tile} exceeds scene dimensions {h}x{w}")]
    NoTiles { tile: usize, h: usize, w: usize },
    #[error("channel {0} is constant over the train split")]
    DegenerateChannel(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("patch size {patch} does not divide tile {h}x{w}")]
    Grid { patch: usize, h: usize, w: usize },
    #[error("invalid group count {g} for {c} channels")]
    InvalidGroupCount { g: usize, c: usize },
    #[error("silhouette undefined for fewer than two groups")]
    UndefinedScore,
    #[error("wavelengths required but absent")]
    MissingWavelengths,
    #[error("image {h}x{w} smaller than ssim window {window}")]
    Window { h: usize, w: usize, window: usize },
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("backward called without a recorded forward trace")]
    Trace,
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn config(path: &str, msg: impl Into<String>) -> Self {
        Error::Config { path: path.to_string(), msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
