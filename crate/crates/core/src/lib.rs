//! LayerDropBack: training with a stochastic backward pass.
//!
//! Every forward pass is the full network. On Drop epochs only a random
//! subset of parameterized layers computes weight gradients and updates;
//! activation gradients still flow through every layer.

pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod report;
pub mod rng;
pub mod scheduler;
pub mod tensor;
pub mod trainer;

pub use error::{LdbError, Result};
pub use network::{LayerSet, Network, NetworkBuilder};
pub use scheduler::{LdbConfig, Mode};
pub use tensor::Tensor;
