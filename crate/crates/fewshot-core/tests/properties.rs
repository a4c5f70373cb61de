//! Property tests over the numeric core and the data pipeline.

use proptest::prelude::*;

use fewshot_core::data::{augment, flip_horizontal, AugmentSpec, ImageSample, Split};
use fewshot_core::{Graph, Tensor};

fn finite_vec(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len..=len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Softmax rows sum to one and are invariant under per-row shifts.
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        data in finite_vec(12, -30.0, 30.0),
        shift in -50.0f64..50.0,
    ) {
        let g: Graph<f64> = Graph::inference();
        let x = Tensor::from_vec(&[3, 4], data.clone());
        let y = g.value(g.softmax_rows(g.leaf(x, false)).unwrap());
        for row in y.data().chunks(4) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            for &v in row {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        let shifted = Tensor::from_vec(&[3, 4], data.iter().map(|v| v + shift).collect());
        let ys = g.value(g.softmax_rows(g.leaf(shifted, false)).unwrap());
        for (a, b) in y.data().iter().zip(ys.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    /// pairwise_sq_dist(A, A) has a zero diagonal and is symmetric; all
    /// entries are non-negative.
    #[test]
    fn self_distance_matrix_is_symmetric_psd(data in finite_vec(15, -10.0, 10.0)) {
        let g: Graph<f64> = Graph::inference();
        let a = Tensor::from_vec(&[5, 3], data);
        let d = g.value(
            g.pairwise_sq_dist(g.leaf(a.clone(), false), g.leaf(a, false)).unwrap(),
        );
        for i in 0..5 {
            prop_assert_eq!(d.data()[i * 5 + i], 0.0);
            for j in 0..5 {
                prop_assert!(d.data()[i * 5 + j] >= 0.0);
                prop_assert!((d.data()[i * 5 + j] - d.data()[j * 5 + i]).abs() < 1e-9);
            }
        }
    }

    /// After row normalization, ||u - v||^2 = 2 - 2 (u . v): the geometry
    /// bridge between the matching and prototypical heads.
    #[test]
    fn normalized_distance_identity(
        u in finite_vec(6, -5.0, 5.0),
        v in finite_vec(6, -5.0, 5.0),
    ) {
        // Keep rows clearly nonzero.
        prop_assume!(u.iter().map(|x| x * x).sum::<f64>() > 1e-2);
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-2);
        let g: Graph<f64> = Graph::inference();
        let rows = Tensor::from_vec(&[2, 6], [u, v].concat());
        let normed = g.l2_normalize_rows(g.leaf(rows, false)).unwrap();
        let nv = g.value(normed);
        let dot: f64 = nv.data()[..6].iter().zip(&nv.data()[6..]).map(|(a, b)| a * b).sum();
        let dist = g.value(
            g.pairwise_sq_dist(
                g.slice_rows(normed, 0, 1).unwrap(),
                g.slice_rows(normed, 1, 2).unwrap(),
            )
            .unwrap(),
        );
        prop_assert!((dist.data()[0] - (2.0 - 2.0 * dot)).abs() < 1e-5);
        // Norms are one.
        for row in nv.data().chunks(6) {
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-5);
        }
    }

    /// l2_normalize is idempotent: normalizing a unit row returns it.
    #[test]
    fn l2_normalize_idempotent(data in finite_vec(8, -4.0, 4.0)) {
        prop_assume!(data.iter().map(|x| x * x).sum::<f64>() > 1e-2);
        let g: Graph<f64> = Graph::inference();
        let once = g.l2_normalize_rows(g.leaf(Tensor::from_vec(&[1, 8], data), false)).unwrap();
        let twice = g.l2_normalize_rows(once).unwrap();
        for (a, b) in g.value(once).data().iter().zip(g.value(twice).data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    /// Cross-entropy is non-negative and equals ln N exactly on uniform rows.
    #[test]
    fn cross_entropy_bounds(data in finite_vec(12, -8.0, 8.0), c in -3.0f64..3.0) {
        let g: Graph<f64> = Graph::inference();
        let logits = g.leaf(Tensor::from_vec(&[4, 3], data), false);
        let loss = g.cross_entropy_from_logits(logits, &[0, 1, 2, 0]).unwrap();
        prop_assert!(g.value(loss).item() >= 0.0);

        let uniform = g.leaf(Tensor::full(&[4, 3], c), false);
        let lu = g.cross_entropy_from_logits(uniform, &[0, 1, 2, 0]).unwrap();
        prop_assert!((g.value(lu).item() - 3.0f64.ln()).abs() < 1e-12);
    }

    /// Augmentation is a pure function of (sample id, epoch) and stays in
    /// the unit interval.
    #[test]
    fn augment_is_keyed_and_clamped(
        seed in 0u64..1_000,
        epoch in 0u64..64,
        flip in prop::bool::ANY,
    ) {
        let mut rng = fewshot_core::rng::Pcg32::new(seed, 2);
        let sample = ImageSample {
            id: format!("prop-{seed}"),
            pixels: Tensor::from_fn(&[3, 12, 12], |_| rng.next_f64() as f32),
            class_label: "c".into(),
            split: Split::Train,
        };
        let spec = AugmentSpec {
            flip_h_prob: if flip { 1.0 } else { 0.0 },
            ..AugmentSpec::default_train()
        };
        let a = augment(&sample, &spec, epoch).unwrap();
        let b = augment(&sample, &spec, epoch).unwrap();
        prop_assert_eq!(a.pixels.data(), b.pixels.data());
        prop_assert!(a.pixels.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Flip is an involution on the raw image.
        let back = flip_horizontal(&flip_horizontal(&sample));
        prop_assert_eq!(back.pixels.data(), sample.pixels.data());
    }

    /// Tensor reshape round-trips and argmax ties break low.
    #[test]
    fn reshape_round_trip(data in finite_vec(24, -5.0, 5.0)) {
        let t = Tensor::from_vec(&[4, 6], data);
        let r = t.reshaped(&[2, 12]).unwrap().reshaped(&[4, 6]).unwrap();
        prop_assert_eq!(t.data(), r.data());
    }
}
