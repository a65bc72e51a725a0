//! grownet trains neural networks whose architecture grows and shrinks while
//! they learn. Training runs in generations: each generation performs plain
//! SGD for a fixed number of epochs, then a time-limited Monte Carlo tree
//! search (or a greedy/random baseline) picks one structural mutation —
//! adding a dense/convolution layer sequentially or as a residual bridge, or
//! removing a hidden layer — and the next generation continues from there.
//!
//! The crate also ships image (IDX) and multivariate time-series pipelines;
//! series are imaged as recurrence plots so convolutional inputs can consume
//! them, with one input branch per series dimension when requested.

pub mod actions;
pub mod cli;
pub mod data;
pub mod dot;
pub mod error;
pub mod graph;
pub mod mcts;
pub mod model_io;
pub mod propagation;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{InputSpec, LayerGraph, LayerId, LayerKind};
pub use tensor::{Activation, ImageBatch, InitScheme, Matrix};
