//! JSONL interchange formats for records, queries and embedding pairs.
//!
//! Landmark paths inside a JSONL file are resolved against a base directory
//! chosen by the caller (usually `--landmarks` or the file's own directory).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use structmem_core::attributes::{Attribute, ATTRIBUTE_CODE_DIM};
use structmem_core::{AttributeCodebook, AttributeSet, MemoryRecord, RetrievalQuery, StructureEmbedding};

use crate::mask_io::{self, MaskError};

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("record {id:?}: {message}")]
    Record { id: String, message: String },
    #[error("record {id:?}: landmark {path}: {source}")]
    Landmark {
        id: String,
        path: PathBuf,
        #[source]
        source: MaskError,
    },
    #[error("{0}: no entries")]
    Empty(PathBuf),
}

/// One line of a records file fed to `build-db`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRecord {
    pub id: String,
    pub embedding: Vec<f64>,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<AttributeSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub landmark: String,
}

/// One held-out query with its ground-truth landmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub embedding: Vec<f64>,
    pub landmark: String,
}

/// An (in-the-wild, standard) embedding pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairLine {
    pub itw: Vec<f64>,
    #[serde(rename = "std")]
    pub standard: Vec<f64>,
}

/// Parses every non-blank line; returns `(1-based line number, value)`.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, InputError> {
    let file = fs::File::open(path).map_err(|source| InputError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| InputError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| InputError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    if out.is_empty() {
        return Err(InputError::Empty(path.to_path_buf()));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), InputError> {
    let io = |source| InputError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Base directory for landmark paths in `file`.
pub fn parent_dir(file: &Path) -> &Path {
    file.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
}

/// Loads `build-db` input, validating every record and its landmark.
pub fn load_records(path: &Path, landmarks: &Path) -> Result<Vec<MemoryRecord>, InputError> {
    let lines: Vec<(usize, InputRecord)> = read_jsonl(path)?;
    let mut out = Vec::with_capacity(lines.len());
    for (_, r) in lines {
        let bad = |message: String| InputError::Record {
            id: r.id.clone(),
            message,
        };
        if r.id.is_empty() {
            return Err(bad("empty id".into()));
        }
        let embedding = StructureEmbedding::new(r.embedding.clone()).map_err(|e| bad(e.to_string()))?;
        let lm_path = landmarks.join(&r.landmark);
        let landmark = mask_io::read_mask(&lm_path).map_err(|source| InputError::Landmark {
            id: r.id.clone(),
            path: lm_path.clone(),
            source,
        })?;
        if landmark.is_empty() {
            return Err(bad(format!("landmark {} has no foreground pixels", lm_path.display())));
        }
        out.push(MemoryRecord {
            id: r.id,
            embedding,
            landmark,
            category: r.category,
            attributes: r.attributes,
            source: r.source,
        });
    }
    Ok(out)
}

/// Loads queries; landmark paths are relative to the queries file.
pub fn load_queries(path: &Path) -> Result<Vec<RetrievalQuery>, InputError> {
    let base = parent_dir(path);
    read_jsonl::<QueryLine>(path)?
        .into_iter()
        .map(|(line, q)| {
            let id = q.id.clone().unwrap_or_else(|| format!("line {line}"));
            let embedding = StructureEmbedding::new(q.embedding).map_err(|e| InputError::Record {
                id: id.clone(),
                message: e.to_string(),
            })?;
            let lm_path = base.join(&q.landmark);
            let landmark = mask_io::read_mask(&lm_path).map_err(|source| InputError::Landmark {
                id,
                path: lm_path,
                source,
            })?;
            Ok(RetrievalQuery { embedding, landmark })
        })
        .collect()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingFile {
    Bare(Vec<f64>),
    Wrapped { embedding: Vec<f64> },
}

/// Reads a query embedding stored either as a bare JSON array or as
/// `{"embedding": [...]}`. The vector is returned unnormalized.
pub fn read_embedding(path: &Path) -> Result<Vec<f64>, InputError> {
    let text = fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed: EmbeddingFile = serde_json::from_str(&text).map_err(|e| InputError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    Ok(match parsed {
        EmbeddingFile::Bare(v) | EmbeddingFile::Wrapped { embedding: v } => v,
    })
}

/// JSON view of an [`AttributeCodebook`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodebookFile {
    pub seed: u64,
    pub code_dim: usize,
    pub codes: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
}

impl From<&AttributeCodebook> for CodebookFile {
    fn from(cb: &AttributeCodebook) -> Self {
        let mut codes: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        for (attr, value, code) in cb.entries() {
            codes
                .entry(attr.name().to_string())
                .or_default()
                .insert(value.to_string(), code.to_vec());
        }
        CodebookFile {
            seed: cb.seed(),
            code_dim: ATTRIBUTE_CODE_DIM,
            codes,
        }
    }
}

impl CodebookFile {
    /// Whether this file is exactly what `AttributeCodebook::new(seed)` yields.
    pub fn matches_seed(&self) -> bool {
        *self == CodebookFile::from(&AttributeCodebook::new(self.seed))
    }

    pub fn code(&self, attr: Attribute, value: &str) -> Option<&[f64]> {
        self.codes.get(attr.name())?.get(value).map(Vec::as_slice)
    }
}
