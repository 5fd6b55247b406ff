use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trigin::eval::{prf1, roc_auc, roc_points, trapezoid_area};
use trigin::featurize::{TfidfVocabulary, ZScoreScaler};
use trigin::fusion::{attention_weights, fuse_attention, gate, AttentionParams, GateParams};
use trigin::graph::build_knn_graph;
use trigin::numcore::{bce_value, softmax_rows, Matrix, Tape, Var};
use trigin::params::ParamStore;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// Scores and labels with at least one of each class.
fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(prop::bool::ANY, n),
        )
            .prop_filter_map("needs both classes", |(s, y)| {
                let pos = y.iter().filter(|&&b| b).count();
                (pos > 0 && pos < y.len()).then(|| (s, y.iter().map(|&b| b as u8 as f64).collect()))
            })
    })
}

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
}

proptest! {
    #![proptest_config(cfg(128))]

    #[test]
    fn auc_of_negated_scores_is_complement((s, y) in scored()) {
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[0] != w[1]));
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let total = roc_auc(&s, &y).unwrap() + roc_auc(&neg, &y).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_increasing_transform((s, y) in scored()) {
        let t: Vec<f64> = s.iter().map(|v| (0.7 * v).exp() + 3.0).collect();
        prop_assert_eq!(roc_auc(&s, &y).unwrap(), roc_auc(&t, &y).unwrap());
    }

    #[test]
    fn trapezoid_over_roc_equals_auc((s, y) in scored()) {
        let area = trapezoid_area(&roc_points(&s, &y).unwrap());
        prop_assert!((area - roc_auc(&s, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_recalls_everything((s, y) in scored()) {
        let pos: Vec<f64> = s.iter().map(|v| v.abs() + 1e-3).collect();
        prop_assert_eq!(prf1(&pos, &y, 0.0).unwrap().recall, 1.0);
    }

    #[test]
    fn softmax_rows_are_positive_and_sum_to_one(x in matrix(5, 4, -30.0, 30.0)) {
        let s = softmax_rows(&x);
        for i in 0..5 {
            prop_assert!(s.row(i).iter().all(|&v| v > 0.0));
            prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_is_non_negative(p in prop::collection::vec(1e-7f64..1.0 - 1e-7, 1..20), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = p.iter().map(|_| rng.random_range(0..2) as f64).collect();
        prop_assert!(bce_value(&p, &y).unwrap() >= 0.0);
    }
}

/// One-hot profiles over a few categories plus sparse noise columns, which
/// produce many exact similarity ties.
fn profiles() -> impl Strategy<Value = (Matrix, usize)> {
    (2usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec((0usize..4, 0usize..3, prop::bool::weighted(0.2)), n),
            1..n.min(7),
        )
            .prop_map(move |(cells, k)| {
                let rows: Vec<Vec<f64>> = cells
                    .iter()
                    .map(|&(a, b, extra)| {
                        let mut r = vec![0.0; 8];
                        r[a] = 1.0;
                        r[4 + b] = 1.0;
                        if extra {
                            r[7] = 0.5;
                        }
                        r
                    })
                    .collect();
                (Matrix::from_rows(&rows).unwrap(), k)
            })
    })
}

fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    // row i of the result is row perm^{-1}(i) of m
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    Matrix::from_rows(&inv.iter().map(|&i| m.row(i).to_vec()).collect::<Vec<_>>()).unwrap()
}

proptest! {
    #![proptest_config(cfg(64))]

    #[test]
    fn knn_graph_is_symmetric_without_self_loops((p, k) in profiles()) {
        let g = build_knn_graph(&p, k).unwrap();
        for v in 0..g.node_count() {
            prop_assert!(!g.neighbors(v).contains(&v));
            for &u in g.neighbors(v) {
                prop_assert!(g.neighbors(u).contains(&v));
            }
        }
        prop_assert_eq!(build_knn_graph(&p, k).unwrap(), g);
    }

    #[test]
    fn knn_edges_follow_a_node_permutation(
        (p, k) in (3usize..30).prop_flat_map(|n| (matrix(n, 4, 0.0, 1.0), 1..n.min(7))),
        seed in any::<u64>(),
    ) {
        // continuous profiles: no similarity ties, so no index tie-breaks
        let n = p.rows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let g = build_knn_graph(&p, k).unwrap();
        let gp = build_knn_graph(&permute_rows(&p, &perm), k).unwrap();
        let mut expect: Vec<(usize, usize)> = g
            .edges()
            .iter()
            .map(|&(a, b)| (perm[a].min(perm[b]), perm[a].max(perm[b])))
            .collect();
        expect.sort();
        let mut got = gp.edges().to_vec();
        got.sort();
        prop_assert_eq!(got, expect);
    }

    #[test]
    fn tfidf_rows_are_non_negative_unit_or_zero(
        docs in prop::collection::vec(prop::collection::vec(0u8..12, 0..15), 1..20),
        min_df in 1usize..3,
    ) {
        let corpus: Vec<Vec<String>> = docs
            .iter()
            .map(|d| d.iter().map(|t| format!("t{t}")).collect())
            .collect();
        let Ok(vocab) = TfidfVocabulary::fit(&corpus, 8, min_df) else {
            return Ok(());
        };
        let m = vocab.transform(&corpus).unwrap();
        for i in 0..m.rows() {
            let r = m.row(i);
            prop_assert!(r.iter().all(|&v| v >= 0.0));
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() <= 1e-10, "norm {}", norm);
        }
    }

    #[test]
    fn zscore_refit_is_standard(x in matrix(12, 3, -50.0, 50.0)) {
        let s = ZScoreScaler::fit(&x).unwrap();
        let z = s.apply(&x).unwrap();
        let again = ZScoreScaler::fit(&z).unwrap();
        for j in 0..3 {
            prop_assert!(again.mean[j].abs() < 1e-9);
            prop_assert!((again.std[j] - 1.0).abs() < 1e-9 || s.std[j] < 1e-9);
        }
    }

    #[test]
    fn attention_is_a_convex_combination(
        hs in prop::collection::vec(matrix(4, 3, -3.0, 3.0), 3),
        seed in any::<u64>(),
        scale in 0.1f64..20.0,
    ) {
        let mut store = ParamStore::new(seed);
        let p = AttentionParams::init(&mut store, 3);
        let w = store.get(p.w).map(|v| v * scale).unwrap();
        store.set(p.w, w).unwrap();
        let mut t = Tape::new();
        let b = store.bind(&mut t);
        let vars: Vec<Var> = hs.iter().map(|h| t.constant(h.clone())).collect();
        let alpha = attention_weights(&mut t, &vars, &p, &b).unwrap();
        let fused = fuse_attention(&mut t, &vars, alpha).unwrap();
        for r in 0..4 {
            let a = t.value(alpha).row(r);
            prop_assert!(a.iter().all(|&v| v > 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for c in 0..3 {
                let vals = hs.iter().map(|h| h.get(r, c));
                let lo = vals.clone().fold(f64::INFINITY, f64::min);
                let hi = vals.fold(f64::NEG_INFINITY, f64::max);
                let v = t.value(fused).get(r, c);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn gate_never_amplifies(h in matrix(4, 3, -5.0, 5.0), seed in any::<u64>()) {
        let mut store = ParamStore::new(seed);
        let p = GateParams::init(&mut store, 3);
        let mut t = Tape::new();
        let b = store.bind(&mut t);
        let hv = t.constant(h.clone());
        let out = gate(&mut t, hv, &p, &b).unwrap();
        for (o, x) in t.value(out).as_slice().iter().zip(h.as_slice()) {
            prop_assert!(o.abs() <= x.abs());
        }
    }
}
