//! Compact convolutional classifier: conv blocks, global average pooling
//! and a dense head with softmax, trained with Adam on cross-entropy.
//!
//! Parameters are stored as `f32`; activations and gradients are computed
//! in `f64`.

mod io;
mod net;
mod tensor;
mod train;

pub use io::{decode_weights, encode_weights, load, save};
pub use net::{
    loss, sample_loss, CompactNetConfig, ConvBlockConfig, Gradients, Layer, LayerKind, Net,
    ParamKind, Shape, PROB_FLOOR,
};
pub use tensor::Tensor;
pub use train::{
    evaluate, fine_tune, predict, read_history, train, write_history, Adam, EpochStats,
    InMemorySource, Sample, SampleSource, TrainConfig, TrainingHistory,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("layer {layer}: expected input {expected}, got {got}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        got: String,
    },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("no layer named {0:?}")]
    UnknownLayer(String),
    #[error("label {0} is not a class index")]
    InvalidLabel(usize),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (max |grad| = {max_grad})")]
    NonFiniteLoss { epoch: usize, batch: usize, max_grad: f64 },
    #[error("no samples to train or evaluate on")]
    EmptySource,
    #[error("bad weights file: {0}")]
    BadWeights(String),
}
