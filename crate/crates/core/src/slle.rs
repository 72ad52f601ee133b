//! Structure Locally Linear Embedding.
//!
//! A query embedding is reconstructed as an affine combination of its `K`
//! nearest database embeddings (weights summing to one, least-squares
//! residual), blended back with the query, and paired with the neighbour
//! landmark that best agrees with the weight-interpolated soft mask.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::embedding::{l2_norm, StructureEmbedding};
use crate::error::{Error, Result};
use crate::landmark::{mask_iou, LandmarkMask};
use crate::linalg::{solve_general, Cholesky};
use crate::store::{MemoryDatabase, Neighbor};

/// Gram matrices whose smallest Cholesky pivot falls below this fraction of
/// the largest diagonal entry are treated as singular and regularized.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SlleConfig {
    /// Number of neighbours.
    pub k: usize,
    /// Weight of the reconstruction in the fused embedding.
    pub alpha: f64,
    /// Tikhonov scale, relative to `trace(G) / K`.
    pub reg_epsilon: f64,
    /// Binarization level of the interpolated soft mask.
    pub soft_mask_threshold: f64,
}

impl Default for SlleConfig {
    fn default() -> Self {
        Self {
            k: 4,
            alpha: 0.5,
            reg_epsilon: 1e-3,
            soft_mask_threshold: 0.5,
        }
    }
}

impl SlleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::ZeroK);
        }
        check_alpha(self.alpha)?;
        if !(self.reg_epsilon > 0.0 && self.reg_epsilon.is_finite()) {
            return Err(Error::InvalidConfig("reg_epsilon must be positive"));
        }
        check_threshold(self.soft_mask_threshold)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig("alpha must lie in [0, 1]"));
    }
    Ok(())
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidConfig("soft mask threshold must lie in (0, 1)"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlleResult {
    pub neighbors: Vec<Neighbor>,
    /// Affine weights, one per neighbour; they sum to one and may be negative.
    pub weights: Vec<f64>,
    /// `Σ wᵢ eᵢ` before any normalization.
    pub reconstructed: Vec<f64>,
    pub fused_embedding: StructureEmbedding,
    pub fused_landmark: Arc<LandmarkMask>,
    /// Position within `neighbors` of the selected landmark.
    pub landmark_index: usize,
    /// `‖query − Σ wᵢ eᵢ‖₂`.
    pub objective: f64,
}

impl SlleResult {
    pub fn neighbor_ids(&self) -> impl Iterator<Item = &str> {
        self.neighbors.iter().map(|n| n.id.as_str())
    }

    pub fn landmark_id(&self) -> &str {
        &self.neighbors[self.landmark_index].id
    }
}

fn check_dims<N: AsRef<[f64]>>(dim: usize, neighbors: &[N]) -> Result<()> {
    for n in neighbors {
        if n.as_ref().len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: n.as_ref().len(),
            });
        }
    }
    Ok(())
}

/// Weights `w` minimizing `‖query − Σ wᵢ neighborᵢ‖₂` subject to `Σ wᵢ = 1`.
///
/// Solves the local Gram system `G w = 1`, `G_jk = (q − n_j)·(q − n_k)`, and
/// rescales to unit sum. When `G` is numerically singular (query in the
/// affine span of the neighbours, duplicated neighbours, `K > D`) the system
/// is regularized as `G + ε·tr(G)/K·I`.
pub fn solve_weights<N: AsRef<[f64]>>(query: &[f64], neighbors: &[N], reg_epsilon: f64) -> Result<Vec<f64>> {
    let k = neighbors.len();
    if k == 0 {
        return Err(Error::ZeroK);
    }
    if !(reg_epsilon > 0.0 && reg_epsilon.is_finite()) {
        return Err(Error::InvalidConfig("reg_epsilon must be positive"));
    }
    check_dims(query.len(), neighbors)?;
    if k == 1 {
        return Ok(vec![1.0]);
    }

    let diffs: Vec<Vec<f64>> = neighbors
        .iter()
        .map(|n| query.iter().zip(n.as_ref()).map(|(q, x)| q - x).collect())
        .collect();
    let mut gram = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let g: f64 = diffs[i].iter().zip(&diffs[j]).map(|(a, b)| a * b).sum();
            gram[i * k + j] = g;
            gram[j * k + i] = g;
        }
    }
    let ones = vec![1.0; k];
    let max_diag = (0..k).map(|i| gram[i * k + i]).fold(0.0, f64::max);

    let exact = Cholesky::factor(&gram, k)
        .filter(|ch| ch.min_pivot() >= SINGULAR_PIVOT_RATIO * max_diag)
        .map(|ch| ch.solve(&ones));

    let raw = match exact {
        Some(w) => w,
        None => {
            let trace: f64 = (0..k).map(|i| gram[i * k + i]).sum();
            // All neighbours coincide with the query: fall back to an absolute ridge.
            let ridge = if trace > 0.0 {
                reg_epsilon * trace / k as f64
            } else {
                reg_epsilon
            };
            let mut reg = gram.clone();
            for i in 0..k {
                reg[i * k + i] += ridge;
            }
            match Cholesky::factor(&reg, k) {
                Some(ch) => ch.solve(&ones),
                None => solve_general(&reg, &ones, k)
                    .ok_or(Error::NumericalFailure("regularized Gram system is singular"))?,
            }
        }
    };

    let sum: f64 = raw.iter().sum();
    if !sum.is_finite() || sum.abs() < f64::MIN_POSITIVE || raw.iter().any(|w| !w.is_finite()) {
        return Err(Error::NumericalFailure("weights are not finite"));
    }
    Ok(raw.into_iter().map(|w| w / sum).collect())
}

/// `Σ wᵢ neighborᵢ`, not normalized.
pub fn reconstruct<N: AsRef<[f64]>>(neighbors: &[N], weights: &[f64]) -> Result<Vec<f64>> {
    if neighbors.len() != weights.len() {
        return Err(Error::CountMismatch {
            left: neighbors.len(),
            right: weights.len(),
        });
    }
    let dim = neighbors.first().ok_or(Error::ZeroK)?.as_ref().len();
    check_dims(dim, neighbors)?;
    let mut out = vec![0.0; dim];
    for (n, &w) in neighbors.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(n.as_ref()) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// Reconstruction residual `‖query − Σ wᵢ neighborᵢ‖₂`.
pub fn objective<N: AsRef<[f64]>>(query: &[f64], neighbors: &[N], weights: &[f64]) -> Result<f64> {
    let r = reconstruct(neighbors, weights)?;
    if r.len() != query.len() {
        return Err(Error::DimMismatch {
            expected: query.len(),
            found: r.len(),
        });
    }
    let diff: Vec<f64> = query.iter().zip(&r).map(|(q, x)| q - x).collect();
    Ok(l2_norm(&diff))
}

/// `normalize(α·reconstructed + (1 − α)·query)`.
pub fn fuse_embedding(query: &StructureEmbedding, reconstructed: &[f64], alpha: f64) -> Result<StructureEmbedding> {
    check_alpha(alpha)?;
    if reconstructed.len() != query.dim() {
        return Err(Error::DimMismatch {
            expected: query.dim(),
            found: reconstructed.len(),
        });
    }
    let blend: Vec<f64> = reconstructed
        .iter()
        .zip(query.as_slice())
        .map(|(r, q)| alpha * r + (1.0 - alpha) * q)
        .collect();
    StructureEmbedding::new(blend).map_err(|e| match e {
        Error::ZeroVector => Error::DegenerateFusion,
        other => other,
    })
}

fn check_masks<M: AsRef<LandmarkMask>>(landmarks: &[M], weights: &[f64]) -> Result<(usize, usize)> {
    if landmarks.len() != weights.len() {
        return Err(Error::CountMismatch {
            left: landmarks.len(),
            right: weights.len(),
        });
    }
    let shape = landmarks.first().ok_or(Error::ZeroK)?.as_ref().shape();
    for m in landmarks {
        if m.as_ref().shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: m.as_ref().shape(),
            });
        }
    }
    Ok(shape)
}

/// Per-pixel interpolation `Σ max(wᵢ, 0)·maskᵢ / Σ max(wᵢ, 0)`, row-major.
pub fn soft_mask<M: AsRef<LandmarkMask>>(landmarks: &[M], weights: &[f64]) -> Result<Vec<f64>> {
    let (w, h) = check_masks(landmarks, weights)?;
    let total: f64 = weights.iter().map(|&x| x.max(0.0)).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::AllWeightsNonPositive);
    }
    let mut soft = vec![0.0; w * h];
    for (m, &wt) in landmarks.iter().zip(weights) {
        let wt = wt.max(0.0) / total;
        if wt == 0.0 {
            continue;
        }
        let m = m.as_ref();
        for y in 0..h {
            for x in 0..w {
                if m.get(x, y) {
                    soft[y * w + x] += wt;
                }
            }
        }
    }
    Ok(soft)
}

/// IoU-max landmark fusion: interpolate the masks by the clamped weights,
/// binarize at `threshold`, and return the input mask with the highest IoU
/// against the result (lowest index on ties). The output is always one of
/// the inputs.
pub fn fuse_landmark<M: AsRef<LandmarkMask>>(
    landmarks: &[M],
    weights: &[f64],
    threshold: f64,
) -> Result<(LandmarkMask, usize)> {
    let index = select_landmark(landmarks, weights, threshold)?;
    Ok((landmarks[index].as_ref().clone(), index))
}

/// Index-only variant of [`fuse_landmark`].
pub fn select_landmark<M: AsRef<LandmarkMask>>(landmarks: &[M], weights: &[f64], threshold: f64) -> Result<usize> {
    check_threshold(threshold)?;
    let soft = soft_mask(landmarks, weights)?;
    if landmarks.len() == 1 {
        return Ok(0);
    }
    let (w, h) = landmarks[0].as_ref().shape();
    let binary = LandmarkMask::from_fn(w, h, |x, y| soft[y * w + x] >= threshold)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, m) in landmarks.iter().enumerate() {
        let iou = mask_iou(&binary, m.as_ref())?;
        if iou > best.1 {
            best = (i, iou);
        }
    }
    Ok(best.0)
}

/// Full SLLE pass: KNN, weight solve, reconstruction, embedding fusion and
/// landmark fusion.
pub fn slle_retrieve(db: &MemoryDatabase, query: &StructureEmbedding, cfg: &SlleConfig) -> Result<SlleResult> {
    cfg.validate()?;
    let neighbors = db.knn(query, cfg.k)?;
    let vectors: Vec<Vec<f64>> = neighbors.iter().map(|n| db.row_f64(n.index)).collect();
    let weights = solve_weights(query.as_slice(), &vectors, cfg.reg_epsilon)?;
    let reconstructed = reconstruct(&vectors, &weights)?;
    let fused_embedding = fuse_embedding(query, &reconstructed, cfg.alpha)?;
    let masks: Vec<&Arc<LandmarkMask>> = neighbors.iter().map(|n| &db.entry(n.index).landmark).collect();
    let landmark_index = select_landmark(&masks, &weights, cfg.soft_mask_threshold)?;
    let fused_landmark = Arc::clone(masks[landmark_index]);
    let residual: Vec<f64> = query
        .as_slice()
        .iter()
        .zip(&reconstructed)
        .map(|(q, r)| q - r)
        .collect();
    let objective = l2_norm(&residual);
    if !objective.is_finite() {
        return Err(Error::NumericalFailure("objective is not finite"));
    }
    Ok(SlleResult {
        neighbors,
        weights,
        reconstructed,
        fused_embedding,
        fused_landmark,
        landmark_index,
        objective,
    })
}
