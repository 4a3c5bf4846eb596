//! Small dense/convolutional network core with hand-written backward passes.

mod adam;
mod autoencoder;
pub mod checkpoint;
pub mod gradcheck;
mod layer;
mod sequential;
mod tensor;

pub use adam::AdamState;
pub use autoencoder::{apply_taildrop, AeGradients, AeTape, AutoEncoder};
pub use checkpoint::Checkpoint;
pub use layer::{clip_by_value, clip_by_value_backward, Activation, Layer, LayerKind, LayerSpec};
pub use sequential::{Gradients, Sequential, Tape};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("backward called without a matching forward pass")]
    MissingForward,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Softmax over the last axis of a `[n, classes]` tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let classes = logits.item_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(classes.max(1)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Checksum over parameter bits, for asserting that frozen weights stay frozen.
pub fn param_checksum(params: &[&Tensor]) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for p in params {
        p.shape().hash(&mut h);
        for v in p.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}
