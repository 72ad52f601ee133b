//! Unit-norm structure embeddings and cosine similarity.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Norms at or below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// A unit-length structure embedding.
///
/// Construction always normalizes, so every value of this type satisfies
/// `|‖v‖₂ − 1| ≤ 1e-6` and contains only finite components.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "Vec<f64>", into = "Vec<f64>")
)]
pub struct StructureEmbedding {
    vector: Vec<f64>,
}

impl StructureEmbedding {
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        let mut vector = vector;
        normalize_in_place(&mut vector)?;
        Ok(Self { vector })
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&x| f64::from(x)).collect())
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.vector
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.vector.iter().map(|&x| x as f32).collect()
    }
}

impl AsRef<[f64]> for StructureEmbedding {
    fn as_ref(&self) -> &[f64] {
        &self.vector
    }
}

impl TryFrom<Vec<f64>> for StructureEmbedding {
    type Error = Error;

    fn try_from(vector: Vec<f64>) -> Result<Self> {
        Self::new(vector)
    }
}

impl From<StructureEmbedding> for Vec<f64> {
    fn from(e: StructureEmbedding) -> Self {
        e.vector
    }
}

/// Returns the unit vector pointing along `vector`.
pub fn normalize(vector: &[f64]) -> Result<StructureEmbedding> {
    StructureEmbedding::new(vector.to_vec())
}

fn normalize_in_place(v: &mut [f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    // Pre-scale by the largest magnitude so the sum of squares cannot overflow.
    let max_abs = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max_abs == 0.0 {
        return Err(Error::ZeroVector);
    }
    let scaled_norm = libm::sqrt(v.iter().map(|x| (x / max_abs) * (x / max_abs)).sum::<f64>());
    if scaled_norm * max_abs <= ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    for x in v.iter_mut() {
        *x = (*x / max_abs) / scaled_norm;
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    libm::sqrt(dot(v, v))
}

/// Cosine similarity of two unit embeddings, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &StructureEmbedding, b: &StructureEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(dot(a.as_slice(), b.as_slice()).clamp(-1.0, 1.0))
}

/// `1 − cos(a, b)` for vectors already on the unit sphere.
pub(crate) fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b)
}
