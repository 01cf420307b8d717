use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Each variant carries a stable short code (see [`Error::code`]) so that
/// callers and the command line can distinguish failure classes without
/// matching on message text.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("map length {found} does not match 12*nside^2 = {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-binary mask value {value} at pixel {pixel}")]
    NonBinaryMask { pixel: usize, value: f64 },
    #[error("invalid nside {0}: must be a positive power of two")]
    InvalidNside(u64),
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("empty grid: {0}")]
    EmptyGrid(String),
    #[error("patch {patch_id} crosses a pole (center {center_lat_deg} deg, half extent {lat_half_extent_deg} deg)")]
    PoleCrossing {
        patch_id: usize,
        center_lat_deg: f64,
        lat_half_extent_deg: f64,
    },
    #[error("invalid patch spec: {0}")]
    InvalidPatchSpec(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("unknown patch id {0}")]
    UnknownPatch(usize),
    #[error("degenerate normalization: {0}")]
    DegenerateNormalization(String),
    #[error("invalid power spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("ell_max {ell_max} exceeds the limit {limit}")]
    EllMaxTooLarge { ell_max: usize, limit: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter segment `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss term `{0}`")]
    NonFiniteLoss(&'static str),
    #[error("mask pool is empty")]
    EmptyMaskPool,
    #[error("mask pool entry {0} has no hole pixels")]
    MaskWithoutHoles(usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("array file error: {0}")]
    ArrayFile(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedHeader(_) => "malformed-header",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::NonBinaryMask { .. } => "non-binary-mask",
            Error::InvalidNside(_) => "invalid-nside",
            Error::NonFinite { .. } => "non-finite",
            Error::EmptyGrid(_) => "empty-grid",
            Error::PoleCrossing { .. } => "pole-crossing",
            Error::InvalidPatchSpec(_) => "invalid-patch-spec",
            Error::GeometryMismatch(_) => "geometry-mismatch",
            Error::UnknownPatch(_) => "unknown-patch",
            Error::DegenerateNormalization(_) => "degenerate-normalization",
            Error::InvalidSpectrum(_) => "invalid-spectrum",
            Error::EllMaxTooLarge { .. } => "ell-max-too-large",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::NonFiniteGradient(_) => "non-finite-gradient",
            Error::NonFiniteLoss(_) => "non-finite-loss",
            Error::EmptyMaskPool => "empty-mask-pool",
            Error::MaskWithoutHoles(_) => "mask-without-holes",
            Error::Checkpoint(_) => "checkpoint",
            Error::ArrayFile(_) => "array-file",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
