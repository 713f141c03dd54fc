//! Classification of transient radio-frequency interference.
//!
//! The pipeline synthesises labelled transients, splits them by class,
//! aligns and standardises them to a fixed length, and trains a 1-D
//! convolution followed by a bidirectional LSTM in two stages.

pub mod dataset;
pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod train;

pub use dataset::{balance_by_downsampling, class_counts, stratified_split, LabeledDataset, SplitSpec};
pub use error::{Error, ErrorKind, Result};
pub use loss::{class_weights, weighted_cross_entropy, ClassWeights};
pub use metrics::{confusion, ConfusionMatrix, MetricsReport};
pub use nn::{Checkpoint, ModelConfig, ModelParams};
pub use preprocess::{fit_standardizer, preprocess_all, FixedVector, PreprocessConfig, Standardizer};
pub use synth::{default_archetypes, synth_dataset, ClassArchetype, Transient, NUM_CLASSES};
pub use train::{run_experiment, ImbalanceMode, TrainConfig, TrainReport};
