use std::collections::HashSet;

use permkron::optimizer::decomposed_names;
use permkron::{load_tensors, objective, Error, PermutedKronDecomposition, Result};

use crate::records::{emit, ReportRecord};
use crate::ReportArgs;

fn owned_by(name: &str, base: &str, rank: usize) -> bool {
    let Some(rest) = name.strip_prefix(base).and_then(|r| r.strip_prefix('.')) else {
        return false;
    };
    if rest == "P" || rest == "C" {
        return true;
    }
    let index = rest.strip_prefix("A.").or_else(|| rest.strip_prefix("B."));
    index.and_then(|i| i.parse::<usize>().ok()).is_some_and(|i| i < rank)
}

pub fn run(args: ReportArgs) -> Result<()> {
    let file = load_tensors(&args.input)?;
    let original = args.original.as_ref().map(load_tensors).transpose()?;

    let mut rows = Vec::new();
    let mut claimed = HashSet::new();
    for base in decomposed_names(&file) {
        let d = PermutedKronDecomposition::from_tensors(&file, &base)?;
        for t in file.iter().filter(|t| owned_by(&t.name, &base, d.rank())) {
            claimed.insert(t.name.clone());
        }
        let (abs, rel) = match &original {
            Some(orig) => {
                let w = orig.get(&base).ok_or_else(|| Error::Reference(base.clone()))?.to_matrix()?;
                let r = objective(&w, &d)?;
                let norm = w.frobenius_norm();
                (Some(r), Some(if norm > 0.0 { r / norm } else { 0.0 }))
            }
            None => (None, None),
        };
        rows.push(ReportRecord {
            tensor: base,
            kind: "kron".into(),
            m: Some(d.rows()),
            n: Some(d.cols()),
            rank: Some(d.rank()),
            perm: Some(d.use_permutations),
            params_before: d.rows() * d.cols(),
            params_after: d.parameter_count(),
            abs_residual: abs,
            rel_residual: rel,
        });
    }
    for t in file.iter().filter(|t| !claimed.contains(&t.name)) {
        let (m, n) = match t.dims.as_slice() {
            &[m, n] => (Some(m), Some(n)),
            &[m] => (Some(m), None),
            _ => (None, None),
        };
        rows.push(ReportRecord {
            tensor: t.name.clone(),
            kind: "dense".into(),
            m,
            n,
            rank: None,
            perm: None,
            params_before: t.numel(),
            params_after: t.numel(),
            abs_residual: None,
            rel_residual: None,
        });
    }
    let total = ReportRecord {
        tensor: "total".into(),
        kind: "total".into(),
        m: None,
        n: None,
        rank: None,
        perm: None,
        params_before: rows.iter().map(|r| r.params_before).sum(),
        params_after: rows.iter().map(|r| r.params_after).sum(),
        abs_residual: None,
        rel_residual: None,
    };
    eprintln!("total parameters: {} -> {}", total.params_before, total.params_after);
    rows.push(total);
    emit(&rows, args.csv.as_deref())
}
