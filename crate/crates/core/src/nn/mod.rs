//! Layers, graph execution, loss, optimizer and training loops.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod layer;
pub mod loss;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, ModelGraph, ParamId, Trace};
pub use layer::{DenseParams, Layer, LayerKind, Mode};
pub use loss::cross_entropy_loss;
pub use train::{
    evaluate, fit, train_epoch, EpochMetrics, EpochRecord, Evaluation, Executor, Samples,
};
