//! Service function chaining over a network topology.
//!
//! A request must traverse the network from a source to a destination while a
//! chain of VNF types is applied, in order, at nodes hosting matching
//! instances. The crate provides the domain model (topology, paths, resource
//! ledger), an exact minimum-delay oracle on the layered graph, featurization
//! of topology and request state, a reverse-mode autodiff engine, gated graph
//! neural network path generators trained by teacher forcing against the
//! oracle, and the dataset/training/evaluation pipeline around them.
//!
//! Batch entry points (oracle batches, path generation batches, gradient
//! sweeps) run data-parallel under the default `parallel` feature and fall
//! back to sequential loops without it.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod fsutil;
pub mod ledger;
pub mod model;
mod numeric;
pub mod oracle;
pub mod path;
pub mod testkit;
pub mod topology;
pub mod train;

pub use error::{Error, Result};
