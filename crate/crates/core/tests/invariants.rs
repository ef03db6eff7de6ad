use permkron::store::TensorData;
use permkron::{
    decompose, kron_matvec, kron_reconstruct, objective, parse_plan, CompressionPlan, DenseMatrix, KronFactorPair,
    KronShape, KronSum, NamedTensor, NamedTensorFile, PermutationVec, PlanEntry,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn perm(n: usize) -> impl Strategy<Value = PermutationVec> {
    Just((0..n).collect::<Vec<_>>())
        .prop_shuffle()
        .prop_map(|m| PermutationVec::new(m).unwrap())
}

fn shape() -> impl Strategy<Value = KronShape> {
    (1..5usize, 1..5usize, 1..5usize, 1..5usize).prop_map(|(a, b, c, d)| KronShape::new(a, b, c, d))
}

fn kron_sum(s: KronShape, rank: usize, seed: u64) -> KronSum {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    KronSum::new(
        (0..rank)
            .map(|_| KronFactorPair::new(DenseMatrix::random(s.m1, s.n1, &mut r), DenseMatrix::random(s.m2, s.n2, &mut r)))
            .collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn inverse_undoes_permutation(p in (1..40usize).prop_flat_map(perm)) {
        let id = PermutationVec::identity(p.len());
        prop_assert_eq!(p.compose(&p.inverse()).unwrap(), id.clone());
        prop_assert_eq!(p.inverse().compose(&p).unwrap(), id);
        let x: Vec<usize> = (100..100 + p.len()).collect();
        prop_assert_eq!(p.scatter(&p.gather(&x)), x);
    }

    #[test]
    fn composition_matches_applying_in_turn(
        (p, q) in (1..20usize).prop_flat_map(|n| (perm(n), perm(n))),
        seed in any::<u64>(),
    ) {
        let m = DenseMatrix::random(p.len(), 3, &mut ChaCha8Rng::seed_from_u64(seed));
        let pq = p.compose(&q).unwrap();
        prop_assert_eq!(pq.permute_rows(&m), q.permute_rows(&p.permute_rows(&m)));
    }

    #[test]
    fn structured_matvec_matches_dense(s in shape(), rank in 1..3usize, seed in any::<u64>()) {
        let ks = kron_sum(s, rank, seed);
        let x = DenseMatrix::random(1, s.cols(), &mut ChaCha8Rng::seed_from_u64(seed ^ 1)).into_vec();
        let y = kron_matvec(&ks, &x).unwrap();
        let dense = kron_reconstruct(&ks).matvec(&x).unwrap();
        for (a, b) in y.iter().zip(&dense) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn decomposition_is_monotone_and_consistent(s in shape(), seed in any::<u64>()) {
        prop_assume!(s.rows() * s.cols() > 1);
        let w = DenseMatrix::random(s.rows(), s.cols(), &mut ChaCha8Rng::seed_from_u64(seed));
        let entry = PlanEntry::new("w", (s.m1, s.n1), (s.m2, s.n2)).with_kicks(5);
        let (d, trace) = decompose(&w, &entry, seed).unwrap();
        prop_assert!(trace.max_increase() <= 0.0);
        prop_assert!((objective(&w, &d).unwrap() - d.residual).abs() <= 1e-10 * (1.0 + w.frobenius_norm()));
        prop_assert!(d.residual <= w.frobenius_norm() + 1e-12);
    }

    #[test]
    fn files_round_trip(
        tensors in prop::collection::vec(
            (prop::collection::vec(1..5usize, 1..4), any::<bool>(), any::<u64>()),
            0..6,
        ),
    ) {
        let mut file = NamedTensorFile::new();
        for (k, (dims, single, seed)) in tensors.into_iter().enumerate() {
            let n: usize = dims.iter().product();
            let v = DenseMatrix::random(1, n, &mut ChaCha8Rng::seed_from_u64(seed)).into_vec();
            let data = if single {
                TensorData::F32(v.iter().map(|&x| x as f32).collect())
            } else {
                TensorData::F64(v)
            };
            file.push(NamedTensor::new(format!("t{k}"), dims, data).unwrap()).unwrap();
        }
        let bytes = file.to_bytes();
        let back = NamedTensorFile::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn plan_text_round_trips(
        dims in prop::collection::vec((1..6usize, 1..6usize, 1..6usize, 1..6usize), 1..5),
        perms in any::<bool>(),
        kicks in 0..200usize,
    ) {
        let entries: Vec<PlanEntry> = dims
            .iter()
            .enumerate()
            .map(|(i, &(a, b, c, d))| {
                PlanEntry::new(format!("layer{i}"), (a, b), (c, d))
                    .with_permutations(perms)
                    .with_kicks(kicks)
            })
            .collect();
        let plan = CompressionPlan::new(entries).unwrap();
        let manifest: Vec<(String, usize, usize)> = dims
            .iter()
            .enumerate()
            .map(|(i, &(a, b, c, d))| (format!("layer{i}"), a * c, b * d))
            .collect();
        prop_assert_eq!(parse_plan(&plan.to_text(), &manifest).unwrap(), plan);
    }
}
