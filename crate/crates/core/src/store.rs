//! In-memory embedding/landmark database with exact cosine KNN.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::attributes::AttributeSet;
use crate::embedding::StructureEmbedding;
use crate::error::{Error, Result};
use crate::landmark::LandmarkMask;

/// A database entry as supplied by an ingester.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryRecord {
    pub id: String,
    pub embedding: StructureEmbedding,
    pub landmark: LandmarkMask,
    pub category: String,
    pub attributes: Option<AttributeSet>,
    pub source: Option<String>,
}

/// Everything stored about a record except its embedding, which lives in the
/// contiguous index.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordEntry {
    pub id: String,
    pub landmark: Arc<LandmarkMask>,
    pub category: String,
    pub attributes: Option<AttributeSet>,
    pub source: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    /// Row of the record in the database.
    pub index: usize,
    pub id: String,
    pub similarity: f64,
    /// 1-based.
    pub rank: usize,
}

/// The external memory of `(embedding, landmark)` pairs.
///
/// Embeddings are stored as a row-major `f32` matrix; similarities are
/// accumulated in `f64`. Cloning is cheap apart from the index copy because
/// entries and landmarks are shared.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryDatabase {
    dim: usize,
    entries: Vec<Arc<RecordEntry>>,
    index: Vec<f32>,
    ids: BTreeMap<String, usize>,
    version: u64,
}

impl MemoryDatabase {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive"));
        }
        Ok(Self {
            dim,
            entries: Vec::new(),
            index: Vec::new(),
            ids: BTreeMap::new(),
            version: 0,
        })
    }

    pub fn from_records<I: IntoIterator<Item = MemoryRecord>>(dim: usize, records: I) -> Result<Self> {
        let mut db = Self::new(dim)?;
        for r in records {
            db.insert(r)?;
        }
        Ok(db)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Incremented on every successful insert.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn entries(&self) -> &[Arc<RecordEntry>] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &RecordEntry {
        &self.entries[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&RecordEntry> {
        self.position(id).map(|i| &*self.entries[i])
    }

    /// The full `len × dim` embedding matrix.
    pub fn index(&self) -> &[f32] {
        &self.index
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.index[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| f64::from(x)).collect()
    }

    pub fn insert(&mut self, record: MemoryRecord) -> Result<String> {
        if record.embedding.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: record.embedding.dim(),
            });
        }
        let row = record.embedding.to_f32();
        let entry = RecordEntry {
            id: record.id,
            landmark: Arc::new(record.landmark),
            category: record.category,
            attributes: record.attributes,
            source: record.source,
        };
        self.insert_raw(entry, &row)
    }

    /// Inserts a record whose embedding row is taken verbatim (no
    /// renormalization). Used when restoring a persisted database.
    pub fn insert_raw(&mut self, entry: RecordEntry, row: &[f32]) -> Result<String> {
        if entry.id.is_empty() {
            return Err(Error::EmptyId);
        }
        if row.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: row.len(),
            });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        if entry.landmark.is_empty() {
            return Err(Error::EmptyMask);
        }
        if self.ids.contains_key(&entry.id) {
            return Err(Error::DuplicateId(entry.id));
        }
        let id = entry.id.clone();
        self.ids.insert(id.clone(), self.entries.len());
        self.entries.push(Arc::new(entry));
        self.index.extend_from_slice(row);
        self.version += 1;
        Ok(id)
    }

    /// Cosine similarity between `query` and every row, in row order.
    pub fn similarities(&self, query: &StructureEmbedding) -> Result<Vec<f64>> {
        if query.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let q = query.as_slice();
        Ok(self
            .index
            .chunks_exact(self.dim)
            .map(|row| {
                row.iter()
                    .zip(q)
                    .map(|(&r, &x)| f64::from(r) * x)
                    .sum::<f64>()
                    .clamp(-1.0, 1.0)
            })
            .collect())
    }

    /// Exact top-`k` by cosine similarity: descending similarity, ties broken
    /// by ascending id.
    pub fn knn(&self, query: &StructureEmbedding, k: usize) -> Result<Vec<Neighbor>> {
        if self.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if k == 0 {
            return Err(Error::ZeroK);
        }
        if k > self.len() {
            return Err(Error::KTooLarge { k, count: self.len() });
        }
        let sims = self.similarities(query)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        let cmp = |&a: &usize, &b: &usize| -> Ordering {
            sims[b]
                .total_cmp(&sims[a])
                .then_with(|| self.entries[a].id.cmp(&self.entries[b].id))
        };
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        Ok(order
            .into_iter()
            .enumerate()
            .map(|(r, i)| Neighbor {
                index: i,
                id: self.entries[i].id.clone(),
                similarity: sims[i],
                rank: r + 1,
            })
            .collect())
    }
}
