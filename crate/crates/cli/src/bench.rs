use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use permkron::{
    decompose, load_tensors, DenseMatrix, Error, NamedTensorFile, PermutationVec, PlanEntry, Result,
};

use crate::pool::ordered_map;
use crate::records::{emit, BenchRecord};
use crate::{parse_dims, BenchArgs, Kind};

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> PermutationVec {
    let mut map: Vec<usize> = (0..n).collect();
    map.shuffle(rng);
    PermutationVec::new(map).expect("shuffle of the identity")
}

fn generate(kind: Kind, a: (usize, usize), b: (usize, usize), rng: &mut ChaCha8Rng) -> DenseMatrix {
    let (m, n) = (a.0 * b.0, a.1 * b.1);
    match kind {
        Kind::Random => DenseMatrix::random(m, n, rng),
        Kind::Kron => DenseMatrix::random(a.0, a.1, rng).kron(&DenseMatrix::random(b.0, b.1, rng)),
        Kind::Planted => {
            let k = DenseMatrix::random(a.0, a.1, rng).kron(&DenseMatrix::random(b.0, b.1, rng));
            let (p, c) = (shuffled(m, rng), shuffled(n, rng));
            c.inverse().permute_cols(&p.inverse().permute_rows(&k))
        }
    }
}

fn corpus(args: &BenchArgs, a: (usize, usize), b: (usize, usize)) -> Result<Vec<(String, DenseMatrix)>> {
    match (&args.input, args.random) {
        (Some(path), _) => {
            let file: NamedTensorFile = load_tensors(path)?;
            file.iter()
                .filter(|t| t.dims.len() == 2)
                .map(|t| Ok((t.name.clone(), t.to_matrix()?)))
                .collect()
        }
        (None, Some(count)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.solver.seed);
            Ok((0..count)
                .map(|i| (format!("{}.{i}", kind_name(args.kind)), generate(args.kind, a, b, &mut rng)))
                .collect())
        }
        (None, None) => Err(Error::Validation("give either --input or --random".into())),
    }
}

fn kind_name(k: Kind) -> &'static str {
    match k {
        Kind::Random => "random",
        Kind::Kron => "kron",
        Kind::Planted => "planted",
    }
}

pub fn run(args: BenchArgs) -> Result<()> {
    let a = parse_dims(&args.a, "--a")?;
    let b = parse_dims(&args.b, "--b")?;
    if let Some(s) = &args.shape {
        let (m, n) = parse_dims(s, "--shape")?;
        if (m, n) != (a.0 * b.0, a.1 * b.1) {
            return Err(Error::Shape(format!(
                "--shape {m}x{n} does not match the split {}x{} ⊗ {}x{}",
                a.0, a.1, b.0, b.1
            )));
        }
    }
    let base = args.solver.apply(PlanEntry::new("", a, b))?;
    let tensors = corpus(&args, a, b)?;

    let rows = ordered_map(&tensors, args.solver.jobs, |(name, w)| -> Result<BenchRecord> {
        let entry = PlanEntry { tensor: name.clone(), ..base.clone() };
        entry.check_shape(w.rows(), w.cols())?;
        let (vanilla, _) = decompose(w, &entry.clone().with_permutations(false), args.solver.seed)?;
        let (permuted, _) = decompose(w, &entry.with_permutations(true), args.solver.seed)?;
        let norm = w.frobenius_norm();
        let rel = |r: f64| if norm > 0.0 { r / norm } else { 0.0 };
        Ok(BenchRecord {
            tensor: name.clone(),
            m: w.rows(),
            n: w.cols(),
            vanilla_residual: vanilla.residual,
            permuted_residual: permuted.residual,
            vanilla_rel: rel(vanilla.residual),
            permuted_rel: rel(permuted.residual),
        })
    });
    let mut rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    if !rows.is_empty() {
        let k = rows.len() as f64;
        let wins = rows.iter().filter(|r| r.permuted_residual <= r.vanilla_residual).count();
        eprintln!("permuted residual <= vanilla on {wins}/{} tensors", rows.len());
        let mean = |f: fn(&BenchRecord) -> f64| rows.iter().map(f).sum::<f64>() / k;
        let aggregate = BenchRecord {
            tensor: "mean".into(),
            m: rows[0].m,
            n: rows[0].n,
            vanilla_residual: mean(|r| r.vanilla_residual),
            permuted_residual: mean(|r| r.permuted_residual),
            vanilla_rel: mean(|r| r.vanilla_rel),
            permuted_rel: mean(|r| r.permuted_rel),
        };
        rows.push(aggregate);
    }
    emit(&rows, args.csv.as_deref())
}
