//! Cache-transaction based data grouping for block I/O traces.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! 1. [`trace_io`] reads MSR-Cambridge style CSV traces or synthesizes traces
//!    with planted access groups.
//! 2. [`extractor`] replays the trace through a byte-bounded FIFO window and
//!    emits a cache transaction every `M` bytes of eviction.
//! 3. [`ctf`] inverts the transactions into per-datum binary feature vectors.
//! 4. [`chunker`] bins data by address and feature popcount and clusters each
//!    bin into chunks of near-identical features.
//! 5. [`grouper`] merges chunks that co-occur in transactions into disjoint
//!    groups, strongest relation first.
//!
//! [`cache_sim`] replays a test trace through LRU/FIFO caches and the two
//! group-prefetch policies, and [`locality`] computes the access-interval
//! statistics used to characterize a workload.

pub mod artifact;
pub mod cache_sim;
pub mod chunker;
pub mod ctf;
pub mod error;
pub mod extractor;
pub mod grouper;
pub mod locality;
pub mod trace_io;
mod union_find;

pub use error::{Error, Result};
