use std::path::PathBuf;

use crate::training::EpochLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("label error in row {row} ({image_id}): {reason}")]
    Label {
        row: usize,
        image_id: String,
        reason: String,
    },

    #[error("duplicate image id `{0}`")]
    DuplicateId(String),

    #[error("{} image file(s) missing: {}", .0.len(), .0.join(", "))]
    MissingFiles(Vec<String>),

    #[error("cannot split class {class}: {reason}")]
    Split { class: String, reason: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("failed to decode image {image_id} ({path}): {reason}")]
    Decode {
        image_id: String,
        path: PathBuf,
        reason: String,
    },

    #[error("degenerate class {class}: zero training samples")]
    DegenerateClass { class: String },

    #[error("numeric input error: {0}")]
    NumericInput(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("pretrained weights for {backbone} unavailable (expected {expected}): {reason}")]
    Dependency {
        backbone: String,
        expected: String,
        reason: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("training diverged in phase {phase} epoch {epoch} (loss {loss})")]
    Divergence {
        phase: usize,
        epoch: usize,
        loss: f64,
        log: Vec<EpochLog>,
    },

    #[error("image ids do not align: only in left [{}], only in right [{}]", .only_left.join(", "), .only_right.join(", "))]
    Alignment {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },

    #[error("{} image(s) could not be decoded: {}", .0.len(), .0.iter().map(|(id, why)| format!("{id} ({why})")).collect::<Vec<_>>().join("; "))]
    UndecodableImages(Vec<(String, String)>),

    #[error("nothing to evaluate: confusion matrix is empty")]
    EmptyEvaluation,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}
