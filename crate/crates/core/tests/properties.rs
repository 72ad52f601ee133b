//! Property tests against independent brute-force oracles.

use proptest::prelude::*;
use structmem_core::curation::{dbscan, density_downsample, NOISE};
use structmem_core::embedding::dot;
use structmem_core::landmark::{aligned_iou, mask_iou};
use structmem_core::linalg::Matrix;
use structmem_core::metrics::{infonce_loss, SimilarityMatrix};
use structmem_core::slle::{self, objective, solve_weights, SlleConfig};
use structmem_core::{attention, normalize, LandmarkMask, MemoryDatabase, MemoryRecord};

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter_map("nonzero", |v| normalize(&v).ok().map(|e| e.into_vec()))
}

fn mask(w: usize, h: usize) -> impl Strategy<Value = LandmarkMask> {
    prop::collection::vec(any::<bool>(), w * h).prop_filter_map("nonempty", move |bits| {
        let m = LandmarkMask::from_bits(w, h, &bits).ok()?;
        (!m.is_empty()).then_some(m)
    })
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b)
}

fn database(vectors: &[Vec<f64>]) -> MemoryDatabase {
    let mut db = MemoryDatabase::new(vectors[0].len()).unwrap();
    for (i, v) in vectors.iter().enumerate() {
        db.insert(MemoryRecord {
            id: format!("r{i:04}"),
            embedding: normalize(v).unwrap(),
            landmark: LandmarkMask::from_fn(6, 6, |x, y| (x + i) % 3 != 0 || y == i % 6).unwrap(),
            category: "Top".into(),
            attributes: None,
            source: None,
        })
        .unwrap();
    }
    db
}

/// Labels by connected components of core points, numbered by lowest core
/// index; border points go to the first component (in that order) whose
/// core reaches them.
fn dbscan_oracle(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let near = |i: usize, j: usize| cosine_distance(&points[i], &points[j]) <= eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();
    let mut comp = vec![usize::MAX; n];
    for i in 0..n {
        if core[i] && comp[i] == usize::MAX {
            comp[i] = i;
        }
    }
    // transitive closure by relaxation until fixpoint
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if core[i] && core[j] && near(i, j) && comp[j] > comp[i] {
                    comp[j] = comp[i];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut roots: Vec<usize> = (0..n).filter(|&i| core[i] && comp[i] == i).collect();
    roots.sort_unstable();
    let label_of = |root: usize| roots.iter().position(|&r| r == root).unwrap() as i32;
    (0..n)
        .map(|i| {
            if core[i] {
                label_of(comp[i])
            } else {
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(|j| comp[j])
                    .min()
                    .map_or(NOISE, label_of)
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_is_unit_and_idempotent(v in prop::collection::vec(-100.0f64..100.0, 1..40)) {
        if let Ok(e) = normalize(&v) {
            prop_assert!((dot(e.as_slice(), e.as_slice()).sqrt() - 1.0).abs() <= 1e-12);
            let again = normalize(e.as_slice()).unwrap();
            for (a, b) in again.as_slice().iter().zip(e.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn knn_matches_full_sort(
        vectors in prop::collection::vec(unit_vec(6), 1..60),
        q in unit_vec(6),
        k_frac in 0.0f64..1.0,
    ) {
        let db = database(&vectors);
        let k = 1 + ((db.len() - 1) as f64 * k_frac) as usize;
        let qe = normalize(&q).unwrap();
        let got = db.knn(&qe, k).unwrap();
        let mut oracle: Vec<(f64, String)> = (0..db.len())
            .map(|i| {
                let row: Vec<f64> = db.row(i).iter().map(|&x| f64::from(x)).collect();
                (dot(&row, qe.as_slice()).clamp(-1.0, 1.0), db.entry(i).id.clone())
            })
            .collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let want: Vec<&str> = oracle.iter().take(k).map(|(_, id)| id.as_str()).collect();
        let have: Vec<&str> = got.iter().map(|n| n.id.as_str()).collect();
        prop_assert_eq!(have, want);
        prop_assert!(got.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        prop_assert!(got.iter().enumerate().all(|(i, n)| n.rank == i + 1));
    }

    #[test]
    fn slle_weights_are_affine_and_optimal_over_vertices(
        q in unit_vec(8),
        neighbors in prop::collection::vec(unit_vec(8), 1..6),
    ) {
        let w = solve_weights(&q, &neighbors, 1e-3).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let obj = objective(&q, &neighbors, &w).unwrap();
        // every one-hot weight vector is feasible
        for i in 0..neighbors.len() {
            let mut e = vec![0.0; neighbors.len()];
            e[i] = 1.0;
            prop_assert!(obj <= objective(&q, &neighbors, &e).unwrap() + 1e-9);
        }
    }

    #[test]
    fn slle_retrieve_invariants(
        vectors in prop::collection::vec(unit_vec(5), 4..30),
        q in unit_vec(5),
        alpha in 0.0f64..=1.0,
    ) {
        let db = database(&vectors);
        let cfg = SlleConfig { alpha, ..SlleConfig::default() };
        let r = slle::slle_retrieve(&db, &normalize(&q).unwrap(), &cfg).unwrap();
        prop_assert_eq!(r.weights.len(), 4);
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!((dot(r.fused_embedding.as_slice(), r.fused_embedding.as_slice()) - 1.0).abs() <= 1e-9);
        let chosen = &db.entry(r.neighbors[r.landmark_index].index).landmark;
        prop_assert_eq!(&**chosen, &*r.fused_landmark);
    }

    #[test]
    fn infonce_is_nonnegative_with_zero_sum_gradient_rows(
        n in 1usize..8,
        seed in prop::collection::vec(-1.0f64..1.0, 64),
        tau in 0.02f64..2.0,
    ) {
        let sim = SimilarityMatrix::from_values(n, seed[..n * n].to_vec()).unwrap();
        let (loss, grad) = infonce_loss(&sim, tau).unwrap();
        prop_assert!(loss >= -1e-12);
        for i in 0..n {
            prop_assert!(grad.row(i).iter().sum::<f64>().abs() <= 1e-12);
        }
    }

    #[test]
    fn concat_attention_is_a_mixture(
        d in 1usize..5,
        lm in 1usize..5,
        lr in 1usize..5,
        vals in prop::collection::vec(-2.0f64..2.0, 200),
    ) {
        let mut it = vals.into_iter().cycle();
        let mut take = |r: usize, c: usize| Matrix::from_vec(r, c, (0..r * c).map(|_| it.next().unwrap()).collect()).unwrap();
        let q = take(3, d);
        let (km, vm) = (take(lm, d), take(lm, 2));
        let (kr, vr) = (take(lr, d), take(lr, 2));
        let joint = attention::concat_kv_attention(&q, &km, &vm, &kr, &vr).unwrap();
        let main = attention::scaled_dot_attention(&q, &km, &vm).unwrap();
        let refr = attention::scaled_dot_attention(&q, &kr, &vr).unwrap();
        let lse = |qi: &[f64], k: &Matrix| {
            let l: Vec<f64> = (0..k.rows()).map(|j| dot(qi, k.row(j)) / (d as f64).sqrt()).collect();
            let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + l.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        };
        for i in 0..3 {
            let (a, b) = (lse(q.row(i), &km), lse(q.row(i), &kr));
            let lambda = 1.0 / (1.0 + (b - a).exp());
            for c in 0..2 {
                let mix = lambda * main.get(i, c) + (1.0 - lambda) * refr.get(i, c);
                prop_assert!((joint.get(i, c) - mix).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn dbscan_matches_closure_oracle(
        points in prop::collection::vec(unit_vec(3), 1..40),
        eps in 0.01f64..0.5,
        min_pts in 1usize..6,
    ) {
        prop_assert_eq!(dbscan(&points, eps, min_pts).labels, dbscan_oracle(&points, eps, min_pts));
    }

    #[test]
    fn downsample_respects_radius(
        points in prop::collection::vec(unit_vec(3), 1..60),
        radius in 0.0f64..0.4,
        seed in any::<u64>(),
    ) {
        let kept = density_downsample(&points, radius, usize::MAX, seed);
        prop_assert!(!kept.is_empty());
        for (a, &i) in kept.iter().enumerate() {
            for &j in &kept[..a] {
                prop_assert!(cosine_distance(&points[i], &points[j]) >= radius);
            }
        }
    }

    #[test]
    fn iou_symmetric_and_bounded(a in mask(7, 5), b in mask(7, 5)) {
        let ab = mask_iou(&a, &b).unwrap();
        prop_assert_eq!(ab, mask_iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(aligned_iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn fused_landmark_is_an_input(
        masks in prop::collection::vec(mask(6, 6), 1..6),
        raw in prop::collection::vec(-0.5f64..1.0, 6),
    ) {
        let w: Vec<f64> = raw[..masks.len()].to_vec();
        prop_assume!(w.iter().any(|&x| x > 0.0));
        let (out, idx) = slle::fuse_landmark(&masks, &w, 0.5).unwrap();
        prop_assert_eq!(&out, &masks[idx]);
    }
}
