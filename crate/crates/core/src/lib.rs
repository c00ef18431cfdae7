//! Block-wise, quantization-aware architecture search.
//!
//! A search space of blocks is distilled from a synthetic teacher: every
//! (block, subnet, bitwidth) triple is scored by the noise-to-signal ratio of
//! the quantized student block against the teacher's block output, and paired
//! with its model size and an optional latency. The resulting lookup tables
//! are Pareto-pruned per block and searched exactly under size and latency
//! budgets.

pub mod error;
pub mod lut;
pub mod nsr;
pub mod pareto;
pub mod pipeline;
pub mod quant;
pub mod report;
pub mod search;
pub mod space;
pub mod synthnet;
pub mod verify;

pub use error::{Error, ErrorKind, Result};
