//! Reverse-mode autodiff over dense f64 tensors, with the layers the path
//! generators need: GRU cell, embeddings-by-row-select, dropout, positional
//! encoding, masked softmax, cross-entropy, and RMSprop.
//!
//! Everything is 64-bit and seeded: two runs of the same computation produce
//! bit-identical values and gradients.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use graph::{grad_of, AggregationPlan, Graph, TensorId};
pub use nn::{masked_softmax_values, positional_encoding, GruCell};
pub use optim::ParameterStore;
pub use tensor::Tensor;
