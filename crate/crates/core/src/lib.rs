//! Dermoscopy lesion classification pipeline: ground-truth ingestion and
//! stratified splitting, flip augmentation, class-weighted cross-entropy,
//! pretrained backbone adaptation, two-phase fine-tuning with early stopping,
//! probability ensembling and balanced multi-class accuracy.

pub mod augment;
pub mod backbone;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod labels;
pub mod loader;
pub mod loss;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use labels::LabelSpace;
