use thiserror::Error;

use crate::graph::LayerId;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A structural rule of the layer graph was violated. The message names
    /// the rule (e.g. "sequential layer requires an existing edge L0->L2").
    #[error("structural rule violated: {0}")]
    Structure(String),

    #[error("layer {0} is an input or output layer and cannot be removed")]
    ForbiddenRemoval(LayerId),

    #[error("layer {0} not found")]
    NotFound(LayerId),

    /// The action references anchors that no longer exist in the graph it is
    /// being executed on.
    #[error("stale action: {0}")]
    StaleAction(String),

    /// A search was requested on a structure with no legal actions.
    #[error("terminal node: {0}")]
    Terminal(String),

    /// A layer would wait forever for an input signal. Impossible on a
    /// validated graph.
    #[error("deadlock: {0}")]
    Deadlock(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("model load error: {0}")]
    Load(String),

    /// An error raised inside the training loop, tagged with the generation
    /// it happened in.
    #[error("generation {generation}: {source}")]
    Generation {
        generation: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
