//! Minimal deterministic tensor and autodiff core.
//!
//! Layers record what they need during `forward` and consume it in
//! `backward`, so a chain of layers is differentiated by walking it in
//! reverse. Composite blocks (depthwise-separable, grouped+shuffle, low-rank)
//! are single layers with internal sub-steps.

mod checkpoint;
mod layer;
mod loss;
mod ops;
mod optim;
mod sequential;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, MAGIC};
pub use layer::{ForwardCtx, Layer, LayerSpec};
pub use loss::{batch_cross_entropy, softmax_cross_entropy, sum_loss, CrossEntropy};
pub use optim::{clip_grad_norm, Sgd};
pub use sequential::Sequential;
pub use tensor::{Parameter, Tensor};

pub(crate) use layer::fnv1a;
