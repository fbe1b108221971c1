//! Broadcast hypergraph neural networks with variational incidence
//! selection, trained supervised or self-supervised over primal and dual
//! views.

pub mod augment;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod encoder;
pub mod error;
pub mod hypergraph;
pub mod io;
pub mod nn;
pub mod objectives;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
pub use hypergraph::{Dual, HomophilyReport, Hypergraph, NodeHomophily};
pub use rng::Rng;
