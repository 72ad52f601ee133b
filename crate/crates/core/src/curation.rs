//! Memory-database curation: category balancing, DBSCAN noise removal and
//! radius-based density downsampling.
//!
//! Every distance in this module is cosine distance `1 − cos(a, b)` between
//! unit embeddings.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::cosine_distance;
use crate::error::{Error, Result};
use crate::store::{MemoryDatabase, MemoryRecord};

/// Label of points that belong to no cluster.
pub const NOISE: i32 = -1;

const BALANCE_STREAM: u64 = 1;
const DOWNSAMPLE_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurationConfig {
    pub per_category_cap: usize,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    /// Zero disables the radius pass.
    pub downsample_radius: f64,
    pub target_size: usize,
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            per_category_cap: usize::MAX,
            dbscan_eps: 0.1,
            dbscan_min_pts: 4,
            downsample_radius: 0.0,
            target_size: 4000,
            seed: 0,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_category_cap == 0 {
            return Err(Error::InvalidConfig("per-category cap must be at least 1"));
        }
        if !(self.dbscan_eps > 0.0 && self.dbscan_eps < 2.0) {
            return Err(Error::InvalidConfig("dbscan eps must lie in (0, 2)"));
        }
        if self.dbscan_min_pts == 0 {
            return Err(Error::InvalidConfig("dbscan min_pts must be at least 1"));
        }
        if !(self.downsample_radius >= 0.0 && self.downsample_radius.is_finite()) {
            return Err(Error::InvalidConfig("downsample radius must be non-negative"));
        }
        if self.target_size == 0 {
            return Err(Error::InvalidConfig("target size must be at least 1"));
        }
        Ok(())
    }
}

/// Per-stage record counts of one [`build_database`] run.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurationReport {
    pub input_count: usize,
    pub after_balance: usize,
    pub after_dbscan: usize,
    /// Survivors of the radius pass, before the target-size cap.
    pub after_downsample: usize,
    pub final_count: usize,
    pub seed: u64,
    pub config: CurationConfig,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterLabeling {
    /// [`NOISE`] or a cluster id below `n_clusters`.
    pub labels: Vec<i32>,
    pub n_clusters: usize,
}

impl ClusterLabeling {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

/// Keeps at most `cap` indices per category, sampled uniformly under `seed`.
/// Returned indices are ascending.
pub fn category_balance<S: AsRef<str>>(categories: &[S], cap: usize, seed: u64) -> Vec<usize> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in categories.iter().enumerate() {
        groups.entry(c.as_ref()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(BALANCE_STREAM);
    let mut kept = Vec::with_capacity(categories.len().min(cap.saturating_mul(groups.len())));
    for members in groups.values() {
        if members.len() <= cap {
            kept.extend_from_slice(members);
        } else {
            kept.extend(
                index::sample(&mut rng, members.len(), cap)
                    .into_iter()
                    .map(|j| members[j]),
            );
        }
    }
    kept.sort_unstable();
    kept
}

fn region<E: AsRef<[f64]>>(points: &[E], i: usize, eps: f64, out: &mut Vec<usize>) {
    out.clear();
    let p = points[i].as_ref();
    out.extend(
        points
            .iter()
            .enumerate()
            .filter(|(_, q)| cosine_distance(p, q.as_ref()) <= eps)
            .map(|(j, _)| j),
    );
}

/// DBSCAN over unit embeddings. A point is core when at least `min_pts`
/// points (itself included) lie within cosine distance `eps`. Clusters are
/// numbered in order of their lowest-index core point; a border point joins
/// the first cluster that reaches it.
pub fn dbscan<E: AsRef<[f64]>>(embeddings: &[E], eps: f64, min_pts: usize) -> ClusterLabeling {
    const UNVISITED: i32 = -2;
    let n = embeddings.len();
    let mut labels = vec![UNVISITED; n];
    let mut n_clusters = 0usize;
    let mut nbrs = Vec::new();
    let mut queue = VecDeque::new();

    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        region(embeddings, i, eps, &mut nbrs);
        if nbrs.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        let cluster = n_clusters as i32;
        n_clusters += 1;
        labels[i] = cluster;
        queue.extend(nbrs.iter().copied().filter(|&j| j != i));
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = cluster;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            region(embeddings, j, eps, &mut nbrs);
            if nbrs.len() >= min_pts {
                queue.extend(
                    nbrs.iter()
                        .copied()
                        .filter(|&m| labels[m] == UNVISITED || labels[m] == NOISE),
                );
            }
        }
    }
    ClusterLabeling { labels, n_clusters }
}

/// Greedy radius thinning in a seeded random order: a point is kept iff no
/// kept point lies strictly closer than `radius`. If more than `target_size`
/// survive, a uniform random subset of that size is taken. Returned indices
/// are ascending.
pub fn density_downsample<E: AsRef<[f64]>>(embeddings: &[E], radius: f64, target_size: usize, seed: u64) -> Vec<usize> {
    greedy_thin(embeddings, radius, target_size, seed).1
}

fn greedy_thin<E: AsRef<[f64]>>(embeddings: &[E], radius: f64, target_size: usize, seed: u64) -> (usize, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DOWNSAMPLE_STREAM);
    let mut order: Vec<usize> = (0..embeddings.len()).collect();
    order.shuffle(&mut rng);
    let mut kept: Vec<usize> = Vec::new();
    if radius > 0.0 {
        for &i in &order {
            let p = embeddings[i].as_ref();
            if kept
                .iter()
                .all(|&j| cosine_distance(p, embeddings[j].as_ref()) >= radius)
            {
                kept.push(i);
            }
        }
    } else {
        kept = order;
    }
    let survivors = kept.len();
    if kept.len() > target_size {
        kept = index::sample(&mut rng, kept.len(), target_size)
            .into_iter()
            .map(|j| kept[j])
            .collect();
    }
    kept.sort_unstable();
    (survivors, kept)
}

/// Runs balance → DBSCAN (noise dropped) → downsample and assembles the
/// surviving records, in input order, into a database.
pub fn build_database(records: Vec<MemoryRecord>, cfg: &CurationConfig) -> Result<(MemoryDatabase, CurationReport)> {
    cfg.validate()?;
    let dim = records.first().ok_or(Error::EmptyInput)?.embedding.dim();
    if let Some(r) = records.iter().find(|r| r.embedding.dim() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            found: r.embedding.dim(),
        });
    }
    let input_count = records.len();

    let categories: Vec<&str> = records.iter().map(|r| r.category.as_str()).collect();
    let balanced = category_balance(&categories, cfg.per_category_cap, cfg.seed);

    let embeddings: Vec<&[f64]> = balanced.iter().map(|&i| records[i].embedding.as_slice()).collect();
    let labeling = dbscan(&embeddings, cfg.dbscan_eps, cfg.dbscan_min_pts);
    let clean: Vec<usize> = balanced
        .iter()
        .zip(&labeling.labels)
        .filter(|(_, &l)| l != NOISE)
        .map(|(&i, _)| i)
        .collect();

    let embeddings: Vec<&[f64]> = clean.iter().map(|&i| records[i].embedding.as_slice()).collect();
    let (after_downsample, kept) = greedy_thin(&embeddings, cfg.downsample_radius, cfg.target_size, cfg.seed);
    if kept.is_empty() {
        return Err(Error::EmptyAfterCuration);
    }

    let mut keep = vec![false; input_count];
    for &j in &kept {
        keep[clean[j]] = true;
    }
    let db = MemoryDatabase::from_records(dim, records.into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r))?;
    let report = CurationReport {
        input_count,
        after_balance: balanced.len(),
        after_dbscan: clean.len(),
        after_downsample,
        final_count: db.len(),
        seed: cfg.seed,
        config: *cfg,
    };
    Ok((db, report))
}
