use ndarray::Array2;
use noisylab_core::losses::{representation_regularizer, BatchOutputs, Distance, RegularizerConfig};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn batch() -> impl Strategy<Value = (BatchOutputs, RegularizerConfig)> {
    (3usize..8, 2usize..5, 2usize..5, 1u8..=2, 1u8..=2, any::<bool>()).prop_flat_map(|(b, k, p, w_sl, w_ssl, smooth)| {
        (matrix(b, k), matrix(b, p), prop::collection::vec(0..k, b)).prop_map(move |(logits, t, labels)| {
            let o = BatchOutputs::new(logits, labels).unwrap().with_ssl(t).unwrap();
            let distance = if smooth { Distance::SmoothL1 } else { Distance::SquaredL2 };
            (o, RegularizerConfig { w_sl, w_ssl, distance, ..Default::default() })
        })
    })
}

fn reorder(m: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(m.raw_dim(), |(i, j)| m[[perm[i], j]])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn permuting_the_batch_keeps_the_value((o, cfg) in batch(), seed in any::<u64>()) {
        let b = o.batch_size();
        let mut perm: Vec<usize> = (0..b).collect();
        perm.rotate_left((seed % b as u64) as usize);
        perm.swap(0, b - 1);
        let shuffled = BatchOutputs::new(reorder(&o.logits, &perm), perm.iter().map(|&i| o.noisy_labels[i]).collect())
            .unwrap()
            .with_ssl(reorder(o.ssl_embeddings.as_ref().unwrap(), &perm))
            .unwrap();
        let a = representation_regularizer(&o, &cfg).unwrap();
        let b = representation_regularizer(&shuffled, &cfg).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-12);
        for (i, &src) in perm.iter().enumerate() {
            for j in 0..o.num_classes() {
                prop_assert!((b.grad_logits[[i, j]] - a.grad_logits[[src, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaling_and_shifting_embeddings_keeps_the_value((o, cfg) in batch(), c in 1e-3..1e3f64, shift in -5.0..5.0f64) {
        let base = representation_regularizer(&o, &cfg).unwrap().value;
        let t = o.ssl_embeddings.as_ref().unwrap() * c + shift;
        let moved = BatchOutputs { ssl_embeddings: Some(t), ..o.clone() };
        prop_assert!((representation_regularizer(&moved, &cfg).unwrap().value - base).abs() < 1e-10);
    }

    #[test]
    fn logit_shift_per_row_keeps_the_value((o, cfg) in batch(), shift in -10.0..10.0f64) {
        let base = representation_regularizer(&o, &cfg).unwrap();
        let moved = BatchOutputs { logits: &o.logits + shift, ..o.clone() };
        let r = representation_regularizer(&moved, &cfg).unwrap();
        prop_assert!((r.value - base.value).abs() < 1e-12);
        for row in r.grad_logits.rows() {
            prop_assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn value_is_finite_and_nonnegative((o, cfg) in batch()) {
        let r = representation_regularizer(&o, &cfg).unwrap();
        prop_assert!(r.is_finite());
        prop_assert!(r.value >= 0.0);
    }
}
