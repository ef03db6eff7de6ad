use std::time::Instant;

use permkron::store::DecompositionRecord;
use permkron::{
    decompose, load_tensors, parse_plan, save_tensors, Error, NamedTensorFile, PermutedKronDecomposition, PlanEntry,
    Result,
};

use crate::pool::ordered_map;
use crate::records::{emit, RunRecord};
use crate::{DecomposeArgs, SolverArgs};

impl SolverArgs {
    /// Applies the command-line overrides to one plan record.
    pub fn apply(&self, mut e: PlanEntry) -> Result<PlanEntry> {
        if self.no_perm {
            e.use_permutations = false;
        }
        if let Some(r) = self.rank {
            e.rank = r;
        }
        if let Some(k) = self.iters {
            e.max_alt_iters = k;
        }
        if let Some(k) = self.kicks {
            e.kicks = k;
        }
        e.check()?;
        Ok(e)
    }
}

pub struct Outcome {
    pub decomposition: PermutedKronDecomposition,
    pub record: RunRecord,
}

/// Decomposes one tensor of `file` according to `entry`.
pub fn decompose_one(file: &NamedTensorFile, entry: &PlanEntry, seed: u64) -> Result<Outcome> {
    let w = file.matrix(&entry.tensor)?;
    let start = Instant::now();
    let (d, trace) = decompose(&w, entry, seed)?;
    let seconds = start.elapsed().as_secs_f64();
    if !d.residual.is_finite() {
        return Err(Error::Numerical(format!("tensor `{}`: residual is not finite", entry.tensor)));
    }
    let norm = w.frobenius_norm();
    let record = RunRecord {
        tensor: entry.tensor.clone(),
        m: w.rows(),
        n: w.cols(),
        m1: entry.m1,
        n1: entry.n1,
        m2: entry.m2,
        n2: entry.n2,
        rank: entry.rank,
        perm: entry.use_permutations,
        abs_residual: d.residual,
        rel_residual: if norm > 0.0 { d.residual / norm } else { 0.0 },
        params_before: w.len(),
        params_after: d.parameter_count(),
        iters: trace.iterations(),
        seconds,
    };
    Ok(Outcome { decomposition: d, record })
}

pub fn run(args: DecomposeArgs) -> Result<()> {
    let input = load_tensors(&args.input)?;
    let text = std::fs::read_to_string(&args.plan).map_err(|source| Error::Io {
        path: args.plan.clone(),
        source,
    })?;
    let plan = parse_plan(&text, &input.manifest())?;
    let entries = plan
        .entries
        .iter()
        .map(|e| args.solver.apply(e.clone()))
        .collect::<Result<Vec<_>>>()?;

    let total = entries.len();
    let outcomes = ordered_map(&entries, args.solver.jobs, |e| {
        let r = decompose_one(&input, e, args.solver.seed);
        if let Ok(o) = &r {
            eprintln!(
                "decomposed {} ({}x{}): relative residual {:.6e}",
                e.tensor, o.record.m, o.record.n, o.record.rel_residual
            );
        }
        r
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    eprintln!("{total} tensor(s) decomposed");

    let dtype = args.dtype.into();
    let mut out = NamedTensorFile::new();
    for t in input.iter() {
        match outcomes.iter().find(|o| o.record.tensor == t.name) {
            Some(o) => {
                for part in o.decomposition.to_tensors(&t.name, dtype)? {
                    out.push(part)?;
                }
            }
            None => out.push(t.clone())?,
        }
    }
    save_tensors(&out, &args.output)?;

    let meta: String = entries
        .iter()
        .zip(&outcomes)
        .map(|(e, o)| {
            let rec = DecompositionRecord {
                entry: e.clone(),
                residual: o.record.abs_residual,
                rel_residual: o.record.rel_residual,
            };
            format!("{rec}\n")
        })
        .collect();
    let mut meta_path = args.output.clone().into_os_string();
    meta_path.push(".meta");
    std::fs::write(&meta_path, meta).map_err(|source| Error::Io {
        path: meta_path.into(),
        source,
    })?;

    let rows: Vec<RunRecord> = outcomes.into_iter().map(|o| o.record).collect();
    emit(&rows, args.csv.as_deref())
}
