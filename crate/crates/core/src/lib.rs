//! Dense-network GANs on MNIST digits and an exact t-SNE for comparing
//! synthetic samples with real ones.

pub mod checkpoint;
pub mod cli;
pub mod compare;
pub mod dataset;
pub mod error;
pub mod gan;
pub mod neural;
pub mod numerics;
pub mod render;
pub mod run;
pub mod tsne;

pub use compare::ComparisonReport;
pub use dataset::{LabeledDataset, PixelRange};
pub use error::{Error, Result};
pub use gan::{GanModel, TrainConfig};
pub use neural::DenseNet;
pub use numerics::{Matrix, RngState};
pub use tsne::{AffinityMatrix, Embedding, TsneConfig};
