use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("category set is empty")]
    EmptyCategorySet,
    #[error("invalid category set: {0}")]
    InvalidCategories(String),
    #[error("category {word:?} needs {tokens} tokens but only {available} positions remain in the context window")]
    CategoryTooLong {
        word: String,
        tokens: usize,
        available: usize,
    },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("feature width mismatch: image features have width {image}, text features have width {text}")]
    WidthMismatch { image: usize, text: usize },
    #[error("non-finite value in {0}")]
    NonFiniteFeature(&'static str),
    #[error("regression head produced a non-finite score")]
    NonFiniteScore,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("invalid antonym prompt pair: {0}")]
    InvalidPromptPair(String),
    #[error("degenerate series: {0}")]
    DegenerateSeries(&'static str),
    #[error("invalid paired scores: {0}")]
    InvalidScores(String),
    #[error("manifest is missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: label {value} outside [{lo}, {hi}]")]
    OutOfRangeLabel { row: usize, value: f64, lo: f64, hi: f64 },
    #[error("duplicate manifest record {0:?}")]
    DuplicateRecord(String),
    #[error("cannot read image {path:?}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("cannot decode image: {0}")]
    DecodeFailure(String),
    #[error("split would leave the {0} side empty")]
    EmptySplit(&'static str),
    #[error("split ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("label range has zero width")]
    ZeroRange,
    #[error("unknown dataset profile {0:?}")]
    UnknownProfile(String),
    #[error("unknown target dimension {0:?}")]
    UnknownTarget(String),
    #[error("epoch {epoch} outside schedule of {epochs} epochs")]
    EpochOutOfRange { epoch: f64, epochs: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step} (lr {lr}, batch {batch_ids:?})")]
    NonFiniteLoss {
        step: u64,
        lr: f64,
        batch_ids: Vec<String>,
    },
    #[error("frozen encoder parameters changed during training")]
    EncoderMutated,
    #[error("encoder fingerprint mismatch: checkpoint expects {expected}, loaded {actual}")]
    EncoderFingerprint { expected: String, actual: String },
    #[error("backbone {0} is not available: {1}")]
    BackboneUnavailable(String, String),
    #[error("invalid variant parameters: {0}")]
    InvalidVariantParams(String),
    #[error("report list is empty")]
    EmptyReportList,
    #[error("cannot write {path:?}: {source}")]
    UnwritablePath {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name, used for structured CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyCategorySet => "EmptyCategorySet",
            Error::InvalidCategories(_) => "InvalidCategories",
            Error::CategoryTooLong { .. } => "CategoryTooLong",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::WidthMismatch { .. } => "WidthMismatch",
            Error::NonFiniteFeature(_) => "NonFiniteFeature",
            Error::NonFiniteScore => "NonFiniteScore",
            Error::EmptyBatch => "EmptyBatch",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::ZeroVector => "ZeroVector",
            Error::InvalidPromptPair(_) => "InvalidPromptPair",
            Error::DegenerateSeries(_) => "DegenerateSeries",
            Error::InvalidScores(_) => "InvalidScores",
            Error::MissingColumn(_) => "MissingColumn",
            Error::OutOfRangeLabel { .. } => "OutOfRangeLabel",
            Error::DuplicateRecord(_) => "DuplicateRecord",
            Error::UnreadableImage { .. } => "UnreadableImage",
            Error::DecodeFailure(_) => "DecodeFailure",
            Error::EmptySplit(_) => "EmptySplit",
            Error::InvalidRatio(_) => "InvalidRatio",
            Error::ZeroRange => "ZeroRange",
            Error::UnknownProfile(_) => "UnknownProfile",
            Error::UnknownTarget(_) => "UnknownTarget",
            Error::EpochOutOfRange { .. } => "EpochOutOfRange",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::EncoderMutated => "EncoderMutated",
            Error::EncoderFingerprint { .. } => "EncoderFingerprint",
            Error::BackboneUnavailable(..) => "BackboneUnavailable",
            Error::InvalidVariantParams(_) => "InvalidVariantParams",
            Error::EmptyReportList => "EmptyReportList",
            Error::UnwritablePath { .. } => "UnwritablePath",
            Error::Checkpoint(_) => "Checkpoint",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}
