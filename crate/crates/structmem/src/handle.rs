//! Snapshot handle shared by the service and anything else that hot-swaps
//! databases.

use std::sync::{Arc, Mutex, PoisonError, RwLock};

use structmem_core::{MemoryDatabase, MemoryRecord};

/// An immutable database value paired with the handle-level version under
/// which it was published.
#[derive(Debug)]
pub struct Snapshot {
    pub db: MemoryDatabase,
    pub version: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum HandleError {
    #[error("no database loaded")]
    NoDatabase,
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error(transparent)]
    Domain(#[from] structmem_core::Error),
}

/// Many readers, one writer. Readers clone an `Arc` to the current snapshot
/// and never wait on a writer for longer than a pointer store; writers build
/// the replacement off to the side and publish it atomically.
#[derive(Debug, Default)]
pub struct DbHandle {
    current: RwLock<Option<Arc<Snapshot>>>,
    writer: Mutex<u64>,
    fixed_dim: Option<usize>,
}

impl DbHandle {
    pub fn new(fixed_dim: Option<usize>) -> Self {
        DbHandle {
            current: RwLock::new(None),
            writer: Mutex::new(0),
            fixed_dim,
        }
    }

    pub fn with_database(db: MemoryDatabase, fixed_dim: Option<usize>) -> Result<Self, HandleError> {
        let handle = DbHandle::new(fixed_dim);
        handle.swap(db)?;
        Ok(handle)
    }

    pub fn fixed_dim(&self) -> Option<usize> {
        self.fixed_dim
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.current.read().unwrap_or_else(PoisonError::into_inner).clone()
    }

    pub fn version(&self) -> u64 {
        self.snapshot().map_or(0, |s| s.version)
    }

    fn validate(&self, db: &MemoryDatabase) -> Result<(), HandleError> {
        if db.is_empty() {
            return Err(HandleError::ValidationFailed("database has no records".into()));
        }
        if let Some(d) = self.fixed_dim {
            if db.dim() != d {
                return Err(HandleError::ValidationFailed(format!(
                    "database dim {} does not match configured dim {d}",
                    db.dim()
                )));
            }
        }
        Ok(())
    }

    fn publish(&self, last: &mut u64, db: MemoryDatabase) -> u64 {
        *last += 1;
        let snap = Arc::new(Snapshot { db, version: *last });
        *self.current.write().unwrap_or_else(PoisonError::into_inner) = Some(snap);
        *last
    }

    /// Replaces the served database. Readers that already hold the previous
    /// snapshot finish against it.
    pub fn swap(&self, db: MemoryDatabase) -> Result<u64, HandleError> {
        self.validate(&db)?;
        let mut last = self.writer.lock().unwrap_or_else(PoisonError::into_inner);
        Ok(self.publish(&mut last, db))
    }

    /// Copy-on-write insert; returns the new id and version.
    pub fn insert(&self, record: MemoryRecord) -> Result<(String, u64), HandleError> {
        let mut last = self.writer.lock().unwrap_or_else(PoisonError::into_inner);
        let snap = self.snapshot().ok_or(HandleError::NoDatabase)?;
        let mut db = snap.db.clone();
        let id = db.insert(record)?;
        let version = self.publish(&mut last, db);
        Ok((id, version))
    }
}
