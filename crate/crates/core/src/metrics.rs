//! Contrastive and retrieval evaluation metrics.

use alloc::vec::Vec;

use crate::embedding::{dot, StructureEmbedding};
use crate::error::{Error, Result};
use crate::landmark::{aligned_iou, LandmarkMask};
use crate::linalg::Matrix;
use crate::store::MemoryDatabase;

/// Default IoU an aligned landmark must exceed to count as a correct hit.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.85;
/// Conventional contrastive temperature; callers always pass τ explicitly.
pub const DEFAULT_TAU: f64 = 0.07;

/// Square matrix of pairwise similarities `s_ij = q_i · k_j`; row `i`'s
/// positive is the diagonal entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Wraps arbitrary finite scores (row-major, `n × n`).
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::CountMismatch { left: 0, right: 0 });
        }
        if values.len() != n * n {
            return Err(Error::CountMismatch {
                left: values.len(),
                right: n * n,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// 1-based rank of the positive within each row (1 = the positive scores
    /// highest; ties count against it).
    pub fn positive_ranks(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                let pos = self.get(i, i);
                1 + self
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(j, &s)| j != i && s >= pos)
                    .count()
            })
            .collect()
    }
}

pub fn similarity_matrix(queries: &[StructureEmbedding], keys: &[StructureEmbedding]) -> Result<SimilarityMatrix> {
    if queries.len() != keys.len() {
        return Err(Error::CountMismatch {
            left: queries.len(),
            right: keys.len(),
        });
    }
    let dim = queries.first().ok_or(Error::CountMismatch { left: 0, right: 0 })?.dim();
    for e in queries.iter().chain(keys) {
        if e.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: e.dim(),
            });
        }
    }
    let values = queries
        .iter()
        .flat_map(|q| {
            keys.iter()
                .map(move |k| dot(q.as_slice(), k.as_slice()).clamp(-1.0, 1.0))
        })
        .collect();
    SimilarityMatrix::from_values(queries.len(), values)
}

/// InfoNCE over a similarity matrix with diagonal positives:
///
/// `L = −(1/N) Σᵢ log softmax(sᵢ·/τ)ᵢ`
///
/// returned with its gradient `∂L/∂s_ij = (softmax(sᵢ·/τ)_j − [i = j]) / (Nτ)`.
/// Each row is evaluated with a max-shifted log-sum-exp.
pub fn infonce_loss(sim: &SimilarityMatrix, tau: f64) -> Result<(f64, Matrix)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::NonPositiveTau);
    }
    let n = sim.n();
    let mut grad = Matrix::zeros(n, n);
    let mut loss = 0.0;
    let scale = 1.0 / (n as f64 * tau);
    for i in 0..n {
        let row = sim.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s / tau));
        let exps: Vec<f64> = row.iter().map(|&s| libm::exp(s / tau - max)).collect();
        let z: f64 = exps.iter().sum();
        loss += max + libm::log(z) - row[i] / tau;
        for (j, (g, e)) in grad.row_mut(i).iter_mut().zip(&exps).enumerate() {
            let p = e / z;
            *g = scale * (p - if i == j { 1.0 } else { 0.0 });
        }
    }
    Ok((loss / n as f64, grad))
}

/// A held-out query: an embedding and its ground-truth landmark.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalQuery {
    pub embedding: StructureEmbedding,
    pub landmark: LandmarkMask,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TopKAccuracy {
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RetrievalEvalReport {
    /// Number of records in the evaluated database.
    pub scale: usize,
    pub top1_accuracy: f64,
    pub top5_accuracy: f64,
    /// Mean aligned IoU of the rank-1 landmark.
    pub mean_iou: f64,
    pub n_queries: usize,
    pub iou_threshold: f64,
    /// Accuracy for every requested `k`, in request order.
    pub accuracy_at_k: Vec<TopKAccuracy>,
}

/// Top-k retrieval accuracy: a query is a hit at `k` when any of its `k`
/// nearest records carries a landmark whose bbox-aligned IoU with the query's
/// ground truth strictly exceeds `iou_threshold`. `k` larger than the
/// database is clamped to its size.
pub fn eval_retrieval(
    db: &MemoryDatabase,
    queries: &[RetrievalQuery],
    k_list: &[usize],
    iou_threshold: f64,
) -> Result<RetrievalEvalReport> {
    if queries.is_empty() {
        return Err(Error::CountMismatch { left: 0, right: 1 });
    }
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if k_list.contains(&0) {
        return Err(Error::ZeroK);
    }
    let depth = k_list.iter().copied().chain([1, 5]).max().unwrap_or(5).min(db.len());
    let clamp = |k: usize| k.min(db.len());

    let mut hits_at = Vec::from_iter(core::iter::repeat(0usize).take(k_list.len()));
    let (mut hits1, mut hits5, mut iou_sum) = (0usize, 0usize, 0.0);
    for q in queries {
        let neighbors = db.knn(&q.embedding, depth)?;
        // first rank (1-based) whose landmark clears the threshold
        let mut first_hit = None;
        for n in &neighbors {
            let iou = aligned_iou(&db.entry(n.index).landmark, &q.landmark)?;
            if n.rank == 1 {
                iou_sum += iou;
            }
            if first_hit.is_none() && iou > iou_threshold {
                first_hit = Some(n.rank);
            }
        }
        let hit = |k: usize| first_hit.is_some_and(|r| r <= clamp(k));
        hits1 += usize::from(hit(1));
        hits5 += usize::from(hit(5));
        for (slot, &k) in hits_at.iter_mut().zip(k_list) {
            *slot += usize::from(hit(k));
        }
    }
    let m = queries.len() as f64;
    Ok(RetrievalEvalReport {
        scale: db.len(),
        top1_accuracy: hits1 as f64 / m,
        top5_accuracy: hits5 as f64 / m,
        mean_iou: iou_sum / m,
        n_queries: queries.len(),
        iou_threshold,
        accuracy_at_k: k_list
            .iter()
            .zip(&hits_at)
            .map(|(&k, &h)| TopKAccuracy {
                k,
                accuracy: h as f64 / m,
            })
            .collect(),
    })
}
