//! Object-compliance estimation from tactile grasp sequences: dataset
//! model, contact-mechanics estimators, data pipeline, the three
//! regression architectures, training and evaluation reports, and a
//! synthetic-grasp generator for end-to-end verification.

pub mod config;
pub mod dataset;
pub mod ingest;
pub mod metrics;
pub mod models;
pub mod physics;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod synth;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("duplicate object id {0}")]
    DuplicateObjectId(String),
    #[error("missing frame file: {0}")]
    MissingFrameFile(String),
    #[error("trajectory length mismatch in {grasp_id}: {details}")]
    TrajectoryLengthMismatch { grasp_id: String, details: String },
    #[error("unknown object id {0}")]
    UnknownObjectId(String),
    #[error("invalid grasp {grasp_id}: {reason}")]
    InvalidGrasp { grasp_id: String, reason: String },
    #[error("invalid object {object_id}: {reason}")]
    InvalidObject { object_id: String, reason: String },
    #[error("catalog empty after cleaning")]
    EmptyAfterCleaning,
    #[error("hardness {0} outside supported range")]
    OutOfRangeHardness(f64),
    #[error("fewer than 2 samples with positive indentation")]
    InsufficientIndentation,
    #[error("modulus must be positive, got {0}")]
    NonPositiveModulus(f64),
    #[error("need at least 5 objects for unseen-object splits, have {0}")]
    TooFewObjects(usize),
    #[error("input strategy {strategy} mismatch: {details}")]
    StrategyMismatch { strategy: String, details: String },
    #[error("training diverged: {0}")]
    DivergedTraining(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("values must be positive and finite, got {0}")]
    NonPositiveValue(f64),
    #[error("truth values are constant; r-squared undefined")]
    ConstantTruths,
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("contact radius {radius_m} m exceeds the rendered field of view {fov_m} m")]
    DegenerateGeometry { radius_m: f64, fov_m: f64 },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] modsense_nn::NnError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
