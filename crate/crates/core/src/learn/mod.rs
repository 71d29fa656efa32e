//! Learned estimator: datasets, the regression network, Adam training and
//! model files.
//!
//! The network maps `[xi'(n), T, eta rho beta]` through rectifier layers of
//! width 32, 64 and 64 to a single linear output clamped at zero.

pub mod adam;
pub mod dataset;
pub mod io;
pub mod mlp;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use dataset::{generate_dataset, Dataset, DatasetRow, DatasetSpec, RowAux, Split, SplitRatios};
pub use io::{load_model, model_from_json, model_to_json, save_model};
pub use mlp::{gradient_slices, Dense, MlpModel, Preprocessing, Standardizer, TrainingMeta, HIDDEN, INPUTS};
pub use train::{train, write_training_log, EpochLog, TrainConfig, TrainOutcome};
