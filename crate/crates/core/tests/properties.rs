use proptest::prelude::*;

use selfnet::attention::{attention_weights, attention_weights_max, pair_scores, sentence_vector, BilinearWeights};
use selfnet::eval::compute_metrics;
use selfnet::subword::{hash_ngram, extract_ngrams};
use selfnet::train::TrainConfig;
use selfnet::{Tensor, VocabConfig};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |data| Tensor::new([rows, cols], data).unwrap())
}

/// `(E, M, mask)` with at least one real position.
fn instance() -> impl Strategy<Value = (Tensor, Tensor, Vec<bool>)> {
    (1usize..8, 1usize..6).prop_flat_map(|(n, d)| {
        (
            matrix(n, d),
            matrix(d, d),
            prop::collection::vec(any::<bool>(), n).prop_filter("one real token", |m| m.contains(&true)),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn attention_is_a_distribution_over_real_tokens((e, m, mask) in instance()) {
        let (_, joint) = pair_scores(&e, &BilinearWeights::new(m).unwrap(), &mask).unwrap();
        for alpha in [attention_weights(&joint, &mask).unwrap(), attention_weights_max(&joint, &mask).unwrap()] {
            let a = alpha.data();
            prop_assert!(a.iter().all(|&x| x >= 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (x, &real) in a.iter().zip(&mask) {
                if !real {
                    prop_assert_eq!(*x, 0.0);
                }
            }
        }
    }

    #[test]
    fn attention_ignores_a_constant_shift((e, m, mask) in instance(), shift in -50.0f64..50.0) {
        let (_, joint) = pair_scores(&e, &BilinearWeights::new(m).unwrap(), &mask).unwrap();
        let shifted = joint.map(|x| x + shift);
        let a = attention_weights(&joint, &mask).unwrap();
        let b = attention_weights(&shifted, &mask).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_bilinear_matrix_averages_real_rows((e, _m, mask) in instance()) {
        let d = e.cols();
        let (_, joint) = pair_scores(&e, &BilinearWeights::new(Tensor::zeros([d, d])).unwrap(), &mask).unwrap();
        let alpha = attention_weights(&joint, &mask).unwrap();
        let real = mask.iter().filter(|&&r| r).count() as f64;
        let v = sentence_vector(&alpha, &e).unwrap();
        for j in 0..d {
            let mean: f64 = (0..e.rows()).filter(|&i| mask[i]).map(|i| e.get(i, j)).sum::<f64>() / real;
            prop_assert!((v.data()[j] - mean).abs() < 1e-12);
        }
        for (&a, &r) in alpha.data().iter().zip(&mask) {
            let want = if r { 1.0 / real } else { 0.0 };
            prop_assert!((a - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_matches_triple_loop((a, b) in (1usize..6, 1usize..6, 1usize..6)
        .prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n))))
    {
        let c = a.matmul(&b).unwrap();
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                prop_assert!((c.get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metrics_ignore_consistent_permutation(
        pairs in prop::collection::vec((0usize..2, 0usize..2), 1..60),
        rotate in 0usize..60,
    ) {
        let (p, t): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut rotated = pairs.clone();
        let k = rotate % rotated.len();
        rotated.rotate_left(k);
        rotated.reverse();
        let (rp, rt): (Vec<usize>, Vec<usize>) = rotated.into_iter().unzip();
        let a = compute_metrics(&p, &t).unwrap();
        let b = compute_metrics(&rp, &rt).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.tp + a.fp + a.fn_ + a.tn, pairs.len());
        if a.precision + a.recall > 0.0 {
            let f1 = 2.0 * a.precision * a.recall / (a.precision + a.recall);
            prop_assert!((a.f1 - f1).abs() < 1e-12);
        }
    }

    #[test]
    fn hashes_stay_in_range(s in "\\PC{1,12}", buckets in 1usize..5000) {
        prop_assert!(hash_ngram(&s, buckets) < buckets);
    }

    #[test]
    fn ngrams_are_substrings_of_the_marked_token(s in "[a-z\u{0900}-\u{097F}]{1,10}") {
        let config = VocabConfig::default();
        let marked = format!("<{s}>");
        for g in extract_ngrams(&s, &config) {
            prop_assert!(marked.contains(&g));
            let len = g.chars().count();
            prop_assert!(len >= config.min_n && len <= config.max_n);
        }
    }

    #[test]
    fn config_text_round_trips(
        lr in 1e-6f64..1.0,
        epochs in 1usize..100,
        hidden in prop::collection::vec(1usize..64, 0..3),
        seed in any::<u64>(),
        max_pool in any::<bool>(),
    ) {
        let mut c = TrainConfig::default();
        c.learning_rate = lr;
        c.epochs = epochs;
        c.model.mlp_hidden = hidden;
        c.seed = seed;
        c.set("attention_pool", if max_pool { "max" } else { "mean" }).unwrap();
        prop_assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }
}
