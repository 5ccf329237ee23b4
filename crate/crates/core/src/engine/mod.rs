//! A small, deterministic feed-forward network engine.
//!
//! Dense, 1-D convolution, batch norm, ReLU, global average pooling
//! and softmax layers over 64-bit tensors, with cross-entropy and MSE
//! losses and SGD/Adam updates. Everything is seeded and single
//! threaded; eval-mode forwards are pure functions, safe to share
//! across threads on a frozen network.

pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod spec;
pub mod tensor;

pub use loss::LossTarget;
pub use network::{ForwardPass, Mode, Network, StatsMode};
pub use optim::{mini_batches, Optimizer, OptimizerKind};
pub use spec::{LayerSpec, NetworkSpec, ValueShape};
pub use tensor::Tensor;
