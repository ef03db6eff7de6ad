//! CSV row types written by the subcommands.

use std::io::Write;
use std::path::Path;

use permkron::{Error, Result};
use serde::{Deserialize, Serialize};

/// One decomposed tensor in a `decompose` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tensor: String,
    pub m: usize,
    pub n: usize,
    pub m1: usize,
    pub n1: usize,
    pub m2: usize,
    pub n2: usize,
    pub rank: usize,
    pub perm: bool,
    pub abs_residual: f64,
    pub rel_residual: f64,
    pub params_before: usize,
    pub params_after: usize,
    pub iters: usize,
    pub seconds: f64,
}

/// Vanilla against permuted residual for one tensor of `bench-perm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub tensor: String,
    pub m: usize,
    pub n: usize,
    pub vanilla_residual: f64,
    pub permuted_residual: f64,
    pub vanilla_rel: f64,
    pub permuted_rel: f64,
}

/// One tensor of a compressed file in `report`. Residuals are present only
/// when the original file is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub tensor: String,
    pub kind: String,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub rank: Option<usize>,
    pub perm: Option<bool>,
    pub params_before: usize,
    pub params_after: usize,
    pub abs_residual: Option<f64>,
    pub rel_residual: Option<f64>,
}

/// One line of the `distill-demo` training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
    pub params: usize,
    pub residual: f64,
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.into(),
            source,
        },
        other => Error::Format(format!("{path}: {other:?}")),
    }
}

pub fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W, label: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(label, e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: label.into(),
        source,
    })
}

/// Writes to `path` when given, otherwise to standard output.
pub fn emit<T: Serialize>(rows: &[T], path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            let file = std::fs::File::create(p).map_err(|source| Error::Io {
                path: p.to_path_buf(),
                source,
            })?;
            write_rows(rows, file, &p.display().to_string())
        }
        None => write_rows(rows, std::io::stdout().lock(), "<stdout>"),
    }
}

#[cfg(test)]
pub fn read_rows<T: serde::de::DeserializeOwned>(text: &str) -> Vec<T> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .unwrap()
}
