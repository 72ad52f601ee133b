//! Retrieval-augmented structure memory for flat-lay garment generation.
//!
//! The crate stores `(structure embedding, silhouette landmark)` pairs,
//! answers exact cosine nearest-neighbour queries, and projects in-the-wild
//! embeddings onto the manifold spanned by their nearest standard neighbours
//! (Structure Locally Linear Embedding, [`slle`]). Around that core sit the
//! database curation pipeline ([`curation`]), evaluation metrics
//! ([`metrics`]) and reference attention kernels ([`attention`]).
//!
//! Everything here is `no_std` + `alloc`; file formats, the HTTP service and
//! the command-line frontend live in the `structmem` crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod attributes;
pub mod curation;
pub mod embedding;
pub mod error;
pub mod landmark;
pub mod linalg;
pub mod metrics;
pub mod slle;
pub mod store;

pub use attributes::{Attribute, AttributeCodebook, AttributeSet};
pub use curation::{CurationConfig, CurationReport};
pub use embedding::{cosine_similarity, normalize, StructureEmbedding};
pub use error::{Error, Result};
pub use landmark::LandmarkMask;
pub use metrics::{RetrievalEvalReport, RetrievalQuery, SimilarityMatrix};
pub use slle::{SlleConfig, SlleResult};
pub use store::{MemoryDatabase, MemoryRecord, Neighbor, RecordEntry};
