//! Hercules: a disk-backed index for exact k-nearest-neighbor search over
//! fixed-length data series.
//!
//! The pipeline is
//! 1. [`build::build_index`] reads a raw dataset and inserts it, in parallel,
//!    into an EAPCA tree ([`tree`]) with a bounded in-memory buffer that is
//!    periodically spilled to disk;
//! 2. [`persist::write_index`] finalizes internal synopses, computes iSAX
//!    words and lays the data out as `htree.bin`, `lrd.bin` and `lsd.bin`;
//! 3. [`query::QueryEngine`] answers exact k-NN queries against an
//!    [`persist::Index`] with two levels of lower-bound pruning.

pub mod build;
pub mod error;
pub mod persist;
pub mod query;
pub mod raw;
pub mod series;
pub mod summary;
pub mod tree;
pub(crate) mod sync;

pub use error::{Error, Result};
