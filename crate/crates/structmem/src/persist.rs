//! On-disk database layout:
//!
//! ```text
//! <dir>/manifest.json    {"format_version":1,"dim":D,"count":N,"checksum":"sha256:<hex>"}
//! <dir>/embeddings.f32   N×D little-endian IEEE-754 f32, row-major
//! <dir>/records.jsonl    one {"id","category","attributes","source","landmark"} per row
//! <dir>/landmarks/       one mask per record (PNG written, PNG or PBM read)
//! ```
//!
//! The checksum covers `embeddings.f32`. A save is staged in a sibling
//! directory and renamed into place, so readers never observe a partial
//! database.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use structmem_core::{AttributeSet, MemoryDatabase, RecordEntry};

use crate::mask_io::{self, MaskError};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const EMBEDDINGS: &str = "embeddings.f32";
pub const RECORDS: &str = "records.jsonl";
pub const LANDMARKS: &str = "landmarks";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("database directory {0} does not exist")]
    NotFound(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("embedding checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("corrupt records file: {0}")]
    CorruptRecords(String),
    #[error("landmark {path}: {source}")]
    Landmark {
        path: PathBuf,
        #[source]
        source: MaskError,
    },
    #[error("{0} already exists and is not empty")]
    AlreadyExists(PathBuf),
    #[error(transparent)]
    Invalid(#[from] structmem_core::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dim: usize,
    pub count: usize,
    pub checksum: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecordLine {
    pub id: String,
    pub category: String,
    #[serde(default)]
    pub attributes: Option<AttributeSet>,
    #[serde(default)]
    pub source: Option<String>,
    pub landmark: String,
}

pub fn embeddings_checksum(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

pub fn encode_embeddings(db: &MemoryDatabase) -> Vec<u8> {
    db.index().iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// Writes `db` to `dir`, which must not exist or be empty.
pub fn save(db: &MemoryDatabase, dir: &Path) -> Result<Manifest, StoreError> {
    if dir.exists() {
        let mut it = fs::read_dir(dir).map_err(io_err(dir))?;
        if it.next().is_some() {
            return Err(StoreError::AlreadyExists(dir.to_path_buf()));
        }
        fs::remove_dir(dir).map_err(io_err(dir))?;
    }
    let parent = dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("db");
    let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    let manifest = write_into(db, &staging)?;
    fs::rename(&staging, dir).map_err(io_err(dir))?;
    Ok(manifest)
}

fn write_into(db: &MemoryDatabase, dir: &Path) -> Result<Manifest, StoreError> {
    let lm_dir = dir.join(LANDMARKS);
    fs::create_dir_all(&lm_dir).map_err(io_err(&lm_dir))?;

    let bytes = encode_embeddings(db);
    let emb_path = dir.join(EMBEDDINGS);
    fs::write(&emb_path, &bytes).map_err(io_err(&emb_path))?;

    let rec_path = dir.join(RECORDS);
    let file = fs::File::create(&rec_path).map_err(io_err(&rec_path))?;
    let mut out = BufWriter::new(file);
    for (i, e) in db.entries().iter().enumerate() {
        let rel = format!("{LANDMARKS}/{i:06}.png");
        let path = dir.join(&rel);
        mask_io::write_mask(&path, &e.landmark).map_err(|source| StoreError::Landmark {
            path: path.clone(),
            source,
        })?;
        let line = RecordLine {
            id: e.id.clone(),
            category: e.category.clone(),
            attributes: e.attributes.clone(),
            source: e.source.clone(),
            landmark: rel,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| StoreError::CorruptRecords(e.to_string()))?;
        out.write_all(b"\n").map_err(io_err(&rec_path))?;
    }
    out.flush().map_err(io_err(&rec_path))?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dim: db.dim(),
        count: db.len(),
        checksum: embeddings_checksum(&bytes),
    };
    let man_path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&man_path, text + "\n").map_err(io_err(&man_path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, StoreError> {
    if !dir.is_dir() {
        return Err(StoreError::NotFound(dir.to_path_buf()));
    }
    let path = dir.join(MANIFEST);
    let text =
        fs::read_to_string(&path).map_err(|e| StoreError::CorruptManifest(format!("{}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| StoreError::CorruptManifest(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion(manifest.format_version));
    }
    if manifest.dim == 0 {
        return Err(StoreError::CorruptManifest("dim must be positive".into()));
    }
    Ok(manifest)
}

/// Loads a database; the dimension comes from the manifest.
pub fn load(dir: &Path) -> Result<MemoryDatabase, StoreError> {
    let manifest = read_manifest(dir)?;
    let emb_path = dir.join(EMBEDDINGS);
    let bytes = fs::read(&emb_path).map_err(io_err(&emb_path))?;
    let expected_len = manifest
        .count
        .checked_mul(manifest.dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| StoreError::CorruptManifest("count × dim overflows".into()))?;
    if bytes.len() != expected_len {
        return Err(StoreError::ChecksumMismatch(format!(
            "{EMBEDDINGS} holds {} bytes, manifest implies {expected_len}",
            bytes.len()
        )));
    }
    let actual = embeddings_checksum(&bytes);
    if actual != manifest.checksum {
        return Err(StoreError::ChecksumMismatch(format!(
            "expected {}, found {actual}",
            manifest.checksum
        )));
    }
    let index: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let rec_path = dir.join(RECORDS);
    let file = fs::File::open(&rec_path).map_err(io_err(&rec_path))?;
    let mut db = MemoryDatabase::new(manifest.dim)?;
    let mut rows = index.chunks_exact(manifest.dim);
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&rec_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine =
            serde_json::from_str(&line).map_err(|e| StoreError::CorruptRecords(format!("line {}: {e}", n + 1)))?;
        let row = rows.next().ok_or_else(|| {
            StoreError::CorruptRecords(format!("more records than the manifest count {}", manifest.count))
        })?;
        let lm_path = resolve_landmark(dir, &rec.landmark)?;
        let landmark = mask_io::read_mask(&lm_path).map_err(|source| StoreError::Landmark { path: lm_path, source })?;
        let entry = RecordEntry {
            id: rec.id,
            landmark: Arc::new(landmark),
            category: rec.category,
            attributes: rec.attributes,
            source: rec.source,
        };
        db.insert_raw(entry, row)?;
    }
    if db.len() != manifest.count {
        return Err(StoreError::CorruptRecords(format!(
            "{} records, manifest count {}",
            db.len(),
            manifest.count
        )));
    }
    Ok(db)
}

fn resolve_landmark(dir: &Path, rel: &str) -> Result<PathBuf, StoreError> {
    let p = Path::new(rel);
    if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(StoreError::CorruptRecords(format!(
            "landmark path {rel:?} escapes the database"
        )));
    }
    Ok(dir.join(p))
}
