//! Deep representations from stacked spherical k-means dictionaries.
//!
//! Images are cut into receptive fields, contrast normalized and whitened,
//! then encoded against a learned dictionary with a soft threshold. Layers
//! stack by grouping correlated features into small feature maps, each with
//! its own dictionary one layer up. Dictionary learning and batch encoding
//! run as map/reduce jobs on an in-process executor, data-parallel through
//! rayon when the `parallel` feature is on (the default).

pub mod classifier;
pub mod dictionary;
pub mod encoder;
pub mod error;
pub mod executor;
pub mod grid;
pub mod grouping;
pub mod ingest;
pub mod model_io;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod rng;

pub use error::{DdrlError, Result};
pub use grid::{FeatureTensor, Grid};
pub use ingest::{CifarFormat, DatasetPartition, LabeledImage};
pub use model_io::{load_model, save_model};
pub use pipeline::{infer, train_stack, LayerConfig, StackModel, TrainConfig};
