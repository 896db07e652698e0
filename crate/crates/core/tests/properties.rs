use proptest::prelude::*;

use fedquad::data::{generate_blobs, partition_dirichlet, partition_iid, BlobConfig};
use fedquad::federation::{aggregate, aggregation_weights, participants_per_round, select_clients};
use fedquad::losses::quad_star;
use fedquad::model::ModelParameters;
use fedquad::numerics::{l2_distance, softmax_cross_entropy};
use fedquad::report::format_sig6;
use fedquad::Tensor;

fn vec_of(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, len)
}

fn shift(t: &[f64], rows: usize, cols: usize, offset: &[f64]) -> Tensor {
    let data = t
        .iter()
        .enumerate()
        .map(|(i, v)| v + offset[i % cols])
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

proptest! {
    #[test]
    fn l2_is_a_metric(a in vec_of(5), b in vec_of(5), c in vec_of(5)) {
        let (a, b, c) = (Tensor::vector(a), Tensor::vector(b), Tensor::vector(c));
        let ab = l2_distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, l2_distance(&b, &a).unwrap());
        prop_assert_eq!(l2_distance(&a, &a).unwrap(), 0.0);
        let ac = l2_distance(&a, &c).unwrap();
        let cb = l2_distance(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn quad_star_ignores_translation(
        rows in 1usize..5,
        data in vec_of(4 * 5 * 3),
        offset in vec_of(3),
        m1 in 0.1..3.0f64,
        m2 in 0.1..3.0f64,
        squared: bool,
    ) {
        let n = rows * 3;
        let roles: Vec<&[f64]> = data.chunks(15).map(|c| &c[..n]).collect();
        let plain: Vec<Tensor> = roles.iter().map(|r| shift(r, rows, 3, &[0.0; 3])).collect();
        let moved: Vec<Tensor> = roles.iter().map(|r| shift(r, rows, 3, &offset)).collect();
        let before = quad_star(&plain[0], &plain[1], &plain[2], &plain[3], m1, m2, squared).unwrap();
        let after = quad_star(&moved[0], &moved[1], &moved[2], &moved[3], m1, m2, squared).unwrap();
        prop_assert!(before >= 0.0);
        prop_assert!((before - after).abs() <= 1e-9 * (1.0 + before.abs()));
    }

    #[test]
    fn quad_star_grows_with_margins(
        data in vec_of(4 * 6),
        m1 in 0.1..2.0f64,
        m2 in 0.1..2.0f64,
        extra in 0.0..2.0f64,
    ) {
        let t: Vec<Tensor> = data.chunks(6).map(|c| Tensor::matrix(3, 2, c.to_vec()).unwrap()).collect();
        let small = quad_star(&t[0], &t[1], &t[2], &t[3], m1, m2, false).unwrap();
        let large = quad_star(&t[0], &t[1], &t[2], &t[3], m1 + extra, m2 + extra, false).unwrap();
        prop_assert!(large >= small);
        // each hinge rises by at most the margin increase
        prop_assert!(large <= small + 2.0 * extra + 1e-12);
    }

    #[test]
    fn cross_entropy_is_shift_invariant(logits in vec_of(6), shift_by in -50.0..50.0f64, l0 in 0usize..3, l1 in 0usize..3) {
        let a = Tensor::matrix(2, 3, logits.clone()).unwrap();
        let b = Tensor::matrix(2, 3, logits.iter().map(|v| v + shift_by).collect()).unwrap();
        let ca = softmax_cross_entropy(&a, &[l0, l1]).unwrap();
        let cb = softmax_cross_entropy(&b, &[l0, l1]).unwrap();
        prop_assert!(ca >= 0.0);
        prop_assert!((ca - cb).abs() < 1e-9);
    }

    #[test]
    fn aggregation_is_a_bounded_convex_combination(
        sizes in prop::collection::vec(1usize..1000, 1..6),
        seed_values in vec_of(6 * 4),
    ) {
        let weights = aggregation_weights(&sizes).unwrap();
        prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(weights.iter().all(|&w| w > 0.0));

        let models: Vec<ModelParameters> = (0..sizes.len())
            .map(|k| {
                let v = seed_values[k * 4..k * 4 + 4].to_vec();
                ModelParameters::from_entries(vec![("w".into(), Tensor::matrix(2, 2, v).unwrap())])
            })
            .collect();
        let merged = aggregate(&models, &sizes).unwrap();
        for i in 0..4 {
            let column: Vec<f64> = models.iter().map(|m| m.tensor(0).data()[i]).collect();
            let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = merged.tensor(0).data()[i];
            prop_assert!(lo <= v && v <= hi, "{} outside [{}, {}]", v, lo, hi);
        }
    }

    #[test]
    fn selection_is_sorted_distinct_and_sized(n in 1usize..300, fraction in 0.001..1.0f64, round in 0usize..50, seed: u64) {
        let ids = select_clients(n, fraction, round, seed);
        prop_assert_eq!(ids.len(), participants_per_round(n, fraction));
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ids.iter().all(|&i| i < n));
        prop_assert_eq!(ids, select_clients(n, fraction, round, seed));
    }

    #[test]
    fn sig6_round_trips_to_six_digits(x in prop::num::f64::NORMAL) {
        let s = format_sig6(x);
        let back: f64 = s.parse().unwrap();
        prop_assert!(((back - x) / x).abs() <= 5e-6, "{} -> {}", x, s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn partitions_are_disjoint_covers(
        clients in 1usize..8,
        alpha in 0.05..5.0f64,
        seed: u64,
        iid: bool,
    ) {
        let ds = generate_blobs(&BlobConfig::new(3, 2, 30, 0.5, seed)).unwrap();
        let parts = if iid {
            partition_iid(&ds, clients, seed).unwrap()
        } else {
            match partition_dirichlet(&ds, clients, alpha, seed, 1) {
                Ok(p) => p,
                // very skewed draws may exhaust the retry budget; that is a reported error, not a bad cover
                Err(e) => return Err(TestCaseError::reject(e.to_string())),
            }
        };
        prop_assert_eq!(parts.len(), clients);
        let mut all: Vec<usize> = parts.iter().flat_map(|p| p.indices.iter().copied()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        if iid {
            let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
