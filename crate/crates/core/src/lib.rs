//! Temporal graph network engine for citation-network link prediction and
//! paper recommendation.
//!
//! The pipeline: an event-sourced dynamic graph ([`graph`]), a per-node
//! memory module with a GRU updater ([`memory`]), a graph-transformer
//! embedding layer ([`transformer`]), a two-tower scoring decoder
//! ([`decoder`]), ranking metrics and the training loop ([`train`],
//! [`metrics`]), and data ingestion / synthesis / checkpointing ([`data`]).
//! Everything runs on a small reverse-mode differentiation engine
//! ([`tensor`]).

pub mod data;
pub mod decoder;
pub mod error;
pub mod graph;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;
pub mod transformer;

pub use error::{Error, Result};
pub use graph::{Event, EventBatch, NodeId, TemporalGraph, Time};
pub use tensor::{Scalar, Tape, Tensor, Var};
