//! Minimal differentiable compute kernel: dense tensors, a recording tape
//! with reverse-mode gradients, 1D convolution stacks, AdamW, and cosine
//! learning-rate annealing.

mod kernels;
pub mod layers;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use kernels::ConvGeometry;
pub use layers::{bind, BoundParams, CodecDims, Conv1dLayer, ConvDecoder, ConvEncoder, DecoderRate, Linear, DOWNSAMPLE};
pub use optim::{cosine_lr, AdamW};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
