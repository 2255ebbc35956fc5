//! Dense numeric kernels with hand-written backward passes.
//!
//! Every op is a plain function or a small parameter-owning struct. Forward
//! passes return whatever cache the backward pass needs; backward passes
//! accumulate parameter gradients in place and return input gradients.

pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod matrix;
pub mod optim;

pub use attention::{scaled_dot_attention, scaled_dot_attention_backward, AttentionCache};
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, DEFAULT_EPS};
pub use layers::{
    relu, softmax_rows, softmax_rows_backward, FeedForward, LayerNorm, Linear, Param,
    PositionalEmbedding,
};
pub use loss::{bce_with_logits, cross_entropy, multi_margin, sigmoid, LossKind, LossOutput};
pub use matrix::Matrix;
pub use optim::{LrStep, Sgd};
