//! Std companion to `structmem-core`: mask codecs, the on-disk database
//! format, JSONL interchange, a hot-swappable snapshot handle, the HTTP
//! retrieval service, synthetic corpora and the `structmem` CLI.

pub mod cli;
pub mod handle;
pub mod mask_io;
pub mod persist;
pub mod records;
pub mod service;
pub mod synthetic;

pub use handle::{DbHandle, Snapshot};
pub use persist::{load, save};
