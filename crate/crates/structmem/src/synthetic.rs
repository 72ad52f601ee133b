//! Seeded synthetic corpora: clustered embeddings on the unit sphere paired
//! with garment-like silhouettes, one silhouette template per cluster.
//!
//! When `dim` equals the image-plus-attribute width (1088), cluster centres
//! are built from a random image feature concatenated with the codebook
//! encoding of a random attribute set, so records carry attributes.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use structmem_core::attributes::{Attribute, ENCODED_DIM, IMAGE_FEATURE_DIM};
use structmem_core::landmark::aligned_iou;
use structmem_core::{normalize, AttributeCodebook, AttributeSet, LandmarkMask, MemoryRecord, RetrievalQuery};

use crate::mask_io;
use crate::records::{self, CodebookFile, InputError, InputRecord, PairLine, QueryLine};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub dim: usize,
    pub clusters: usize,
    pub per_cluster: usize,
    pub outliers: usize,
    pub queries: usize,
    pub pairs: usize,
    /// Approximate L2 norm of the per-member perturbation.
    pub sigma: f64,
    pub mask_width: usize,
    pub mask_height: usize,
    /// Templates are accepted only while their pairwise aligned IoU stays
    /// below this bound (relaxed gradually if the shape space runs dry).
    pub max_template_iou: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 64,
            clusters: 10,
            per_cluster: 100,
            outliers: 0,
            queries: 100,
            pairs: 64,
            sigma: 0.05,
            mask_width: 48,
            mask_height: 48,
            max_template_iou: 0.75,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecord {
    pub record: MemoryRecord,
    /// `None` for planted outliers.
    pub cluster: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthQuery {
    pub id: String,
    pub query: RetrievalQuery,
    pub cluster: usize,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub config: SynthConfig,
    pub centers: Vec<Vec<f64>>,
    pub templates: Vec<LandmarkMask>,
    pub records: Vec<SynthRecord>,
    pub queries: Vec<SynthQuery>,
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub codebook: Option<AttributeCodebook>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        if let Ok(e) = normalize(&gaussian(rng, dim)) {
            return e.into_vec();
        }
    }
}

fn perturb(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    let scale = sigma / (center.len() as f64).sqrt();
    let v: Vec<f64> = center
        .iter()
        .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    normalize(&v).map(|e| e.into_vec()).unwrap_or_else(|_| center.to_vec())
}

/// Shape parameters of a flat-lay top/dress silhouette, as canvas fractions.
#[derive(Clone, Copy, Debug)]
struct Silhouette {
    body_w: f64,
    body_h: f64,
    hem_flare: f64,
    sleeve_len: f64,
    sleeve_w: f64,
    sleeve_drop: f64,
    neck_w: f64,
    neck_d: f64,
}

impl Silhouette {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Silhouette {
            body_w: rng.random_range(0.25..0.5),
            body_h: rng.random_range(0.35..0.9),
            hem_flare: rng.random_range(0.0..0.25),
            sleeve_len: if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.05..0.25)
            },
            sleeve_w: rng.random_range(0.08..0.22),
            sleeve_drop: rng.random_range(0.0..0.6),
            neck_w: rng.random_range(0.0..0.5),
            neck_d: rng.random_range(0.0..0.15),
        }
    }

    fn render(&self, w: usize, h: usize) -> LandmarkMask {
        let (wf, hf) = (w as f64, h as f64);
        let cx = wf / 2.0;
        let top = 0.05 * hf;
        let body_h = self.body_h * hf;
        let half_top = self.body_w * wf / 2.0;
        let half_hem = half_top + self.hem_flare * wf / 2.0;
        let sleeve_top = top;
        let sleeve_h = self.sleeve_w * hf;
        let neck_half = self.neck_w * half_top;
        let neck_d = self.neck_d * hf;
        let sleeve_len = self.sleeve_len * wf;
        let sleeve_shift = self.sleeve_drop * sleeve_h;
        LandmarkMask::from_fn(w, h, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let dx = (px - cx).abs();
            let t = (py - top) / body_h;
            let in_body = (0.0..=1.0).contains(&t) && dx <= half_top + t * (half_hem - half_top);
            let in_neck = py - top < neck_d && dx < neck_half;
            // sleeves hang off the shoulders and slope downwards outwards
            let out = dx - half_top;
            let in_sleeve = sleeve_len > 0.0 && (0.0..=sleeve_len).contains(&out) && {
                let y0 = sleeve_top + sleeve_shift * out / sleeve_len.max(1.0);
                (y0..=y0 + sleeve_h).contains(&py)
            };
            (in_body && !in_neck) || in_sleeve
        })
        .expect("canvas dimensions are positive")
    }
}

/// Picks `n` silhouettes whose pairwise aligned IoU stays below `max_iou`.
pub fn silhouette_templates(
    n: usize,
    width: usize,
    height: usize,
    max_iou: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<LandmarkMask> {
    let mut out: Vec<LandmarkMask> = Vec::with_capacity(n);
    let mut bound = max_iou;
    let mut misses = 0usize;
    while out.len() < n {
        let mask = Silhouette::random(rng).render(width, height);
        let ok = !mask.is_empty() && out.iter().all(|t| aligned_iou(t, &mask).is_ok_and(|iou| iou < bound));
        if ok {
            out.push(mask);
            misses = 0;
        } else {
            misses += 1;
            if misses >= 2000 {
                bound = (bound + 0.02).min(0.99);
                misses = 0;
            }
        }
    }
    out
}

/// Shifts the template by up to `max_shift` pixels in each direction,
/// staying on canvas. Bbox alignment undoes the shift exactly.
fn jitter(template: &LandmarkMask, max_shift: usize, rng: &mut ChaCha8Rng) -> LandmarkMask {
    let bb = template.bounding_box().expect("templates are nonempty");
    let (w, h) = template.shape();
    let lo_x = -(bb.x0.min(max_shift) as i64);
    let hi_x = (w - bb.x1).min(max_shift) as i64;
    let lo_y = -(bb.y0.min(max_shift) as i64);
    let hi_y = (h - bb.y1).min(max_shift) as i64;
    let sx = rng.random_range(lo_x..=hi_x) as isize;
    let sy = rng.random_range(lo_y..=hi_y) as isize;
    LandmarkMask::from_fn(w, h, |x, y| {
        let (ox, oy) = (x as isize - sx, y as isize - sy);
        ox >= 0 && oy >= 0 && (ox as usize) < w && (oy as usize) < h && template.get(ox as usize, oy as usize)
    })
    .expect("same canvas")
}

fn random_attributes(rng: &mut ChaCha8Rng, category: &str) -> AttributeSet {
    let pairs: Vec<(&str, &str)> = Attribute::ENCODED
        .iter()
        .map(|attr| {
            let value = match attr {
                Attribute::Category => category,
                _ => attr.vocabulary().choose(rng).expect("vocabularies are nonempty"),
            };
            (attr.name(), value)
        })
        .collect();
    AttributeSet::from_pairs(pairs).expect("vocabulary values")
}

pub fn generate(cfg: &SynthConfig) -> SynthData {
    assert!(
        cfg.dim >= 2 && cfg.clusters >= 1,
        "synthetic corpus needs dim ≥ 2 and ≥ 1 cluster"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let categories = Attribute::Category.vocabulary();
    let attribute_mode = cfg.dim == IMAGE_FEATURE_DIM + ENCODED_DIM;
    let codebook = attribute_mode.then(|| AttributeCodebook::new(cfg.seed));

    let mut cluster_attrs = Vec::with_capacity(cfg.clusters);
    let centers: Vec<Vec<f64>> = (0..cfg.clusters)
        .map(|c| {
            let category = categories[c % categories.len()];
            match &codebook {
                Some(cb) => {
                    let attrs = random_attributes(&mut rng, category);
                    let mut v = random_unit(&mut rng, IMAGE_FEATURE_DIM);
                    let scale = 1.0 / (Attribute::ENCODED.len() as f64).sqrt();
                    v.extend(cb.encode(&attrs).iter().map(|x| x * scale));
                    cluster_attrs.push(Some(attrs));
                    normalize(&v).expect("nonzero centre").into_vec()
                }
                None => {
                    cluster_attrs.push(None);
                    random_unit(&mut rng, cfg.dim)
                }
            }
        })
        .collect();
    let templates = silhouette_templates(
        cfg.clusters,
        cfg.mask_width,
        cfg.mask_height,
        cfg.max_template_iou,
        &mut rng,
    );
    let max_shift = cfg.mask_width.min(cfg.mask_height) / 8;

    let mut records = Vec::with_capacity(cfg.clusters * cfg.per_cluster + cfg.outliers);
    for (c, center) in centers.iter().enumerate() {
        for m in 0..cfg.per_cluster {
            let embedding = normalize(&perturb(&mut rng, center, cfg.sigma)).expect("unit input");
            records.push(SynthRecord {
                record: MemoryRecord {
                    id: format!("c{c:03}-{m:05}"),
                    embedding,
                    landmark: jitter(&templates[c], max_shift, &mut rng),
                    category: categories[c % categories.len()].to_string(),
                    attributes: cluster_attrs[c].clone(),
                    source: Some(format!("synthetic/cluster-{c}")),
                },
                cluster: Some(c),
            });
        }
    }
    for o in 0..cfg.outliers {
        let embedding = normalize(&random_unit(&mut rng, cfg.dim)).expect("unit input");
        let landmark = Silhouette::random(&mut rng).render(cfg.mask_width, cfg.mask_height);
        records.push(SynthRecord {
            record: MemoryRecord {
                id: format!("outlier-{o:05}"),
                embedding,
                landmark,
                category: categories.choose(&mut rng).expect("nonempty").to_string(),
                attributes: None,
                source: Some("synthetic/outlier".into()),
            },
            cluster: None,
        });
    }

    let queries = (0..cfg.queries)
        .map(|q| {
            let c = q % cfg.clusters;
            SynthQuery {
                id: format!("q{q:05}"),
                query: RetrievalQuery {
                    embedding: normalize(&perturb(&mut rng, &centers[c], cfg.sigma)).expect("unit input"),
                    landmark: jitter(&templates[c], max_shift, &mut rng),
                },
                cluster: c,
            }
        })
        .collect();

    let pairs = (0..cfg.pairs)
        .map(|p| {
            let c = p % cfg.clusters;
            let standard = perturb(&mut rng, &centers[c], cfg.sigma);
            let itw = perturb(&mut rng, &standard, 2.0 * cfg.sigma);
            (itw, standard)
        })
        .collect();

    SynthData {
        config: cfg.clone(),
        centers,
        templates,
        records,
        queries,
        pairs,
        codebook,
    }
}

impl SynthData {
    pub fn memory_records(&self) -> Vec<MemoryRecord> {
        self.records.iter().map(|r| r.record.clone()).collect()
    }

    pub fn retrieval_queries(&self) -> Vec<RetrievalQuery> {
        self.queries.iter().map(|q| q.query.clone()).collect()
    }

    /// Writes `records.jsonl` (+ `landmarks/`), `queries.jsonl`
    /// (+ `query_landmarks/`), `pairs.jsonl` and, in attribute mode,
    /// `codebook.json` into `dir`. Landmark paths are relative to `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SynthWriteError> {
        for sub in ["landmarks", "query_landmarks"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        let mut lines = Vec::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            let rel = format!("landmarks/{i:06}.png");
            mask_io::write_mask(&dir.join(&rel), &r.record.landmark)?;
            lines.push(InputRecord {
                id: r.record.id.clone(),
                embedding: r.record.embedding.as_slice().to_vec(),
                category: r.record.category.clone(),
                attributes: r.record.attributes.clone(),
                source: r.record.source.clone(),
                landmark: rel,
            });
        }
        records::write_jsonl(&dir.join("records.jsonl"), &lines)?;

        let mut qlines = Vec::with_capacity(self.queries.len());
        for q in &self.queries {
            let rel = format!("query_landmarks/{}.png", q.id);
            mask_io::write_mask(&dir.join(&rel), &q.query.landmark)?;
            qlines.push(QueryLine {
                id: Some(q.id.clone()),
                embedding: q.query.embedding.as_slice().to_vec(),
                landmark: rel,
            });
        }
        records::write_jsonl(&dir.join("queries.jsonl"), &qlines)?;

        records::write_jsonl(
            &dir.join("pairs.jsonl"),
            self.pairs.iter().map(|(itw, standard)| PairLine {
                itw: itw.clone(),
                standard: standard.clone(),
            }),
        )?;
        if let Some(cb) = &self.codebook {
            let text = serde_json::to_string(&CodebookFile::from(cb)).expect("codebook serializes");
            std::fs::write(dir.join("codebook.json"), text)?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthWriteError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mask(#[from] mask_io::MaskError),
    #[error(transparent)]
    Input(#[from] InputError),
}
