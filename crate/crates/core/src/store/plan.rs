//! Compression plans: one record per line,
//!
//! ```text
//! tensor=<name> a=<m1>x<n1> b=<m2>x<n2> rank=<r> perm=<on|off> iters=<k>
//! ```
//!
//! `#` starts a comment, blank lines are ignored. `rank`, `perm` and `iters`
//! default to 1, on and 10 when omitted. An optional `kicks=<k>` sets the
//! patience of the perturbation phase that follows the alternating rounds
//! (default 100, `0` disables it).

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_RANK: usize = 1;
pub const DEFAULT_ITERS: usize = 10;
pub const DEFAULT_KICKS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanEntry {
    pub tensor: String,
    pub m1: usize,
    pub n1: usize,
    pub m2: usize,
    pub n2: usize,
    pub rank: usize,
    pub use_permutations: bool,
    pub max_alt_iters: usize,
    /// Consecutive non-improving perturbations tolerated before stopping.
    pub kicks: usize,
}

impl PlanEntry {
    pub fn new(tensor: impl Into<String>, a: (usize, usize), b: (usize, usize)) -> Self {
        Self {
            tensor: tensor.into(),
            m1: a.0,
            n1: a.1,
            m2: b.0,
            n2: b.1,
            rank: DEFAULT_RANK,
            use_permutations: true,
            max_alt_iters: DEFAULT_ITERS,
            kicks: DEFAULT_KICKS,
        }
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = rank;
        self
    }

    pub fn with_permutations(mut self, on: bool) -> Self {
        self.use_permutations = on;
        self
    }

    pub fn with_iters(mut self, iters: usize) -> Self {
        self.max_alt_iters = iters;
        self
    }

    pub fn with_kicks(mut self, kicks: usize) -> Self {
        self.kicks = kicks;
        self
    }

    pub fn rows(&self) -> usize {
        self.m1 * self.m2
    }

    pub fn cols(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn max_rank(&self) -> usize {
        (self.m1 * self.n1).min(self.m2 * self.n2)
    }

    /// Shape-independent checks.
    pub fn check(&self) -> Result<()> {
        let t = &self.tensor;
        if [self.m1, self.n1, self.m2, self.n2].contains(&0) {
            return Err(Error::Validation(format!("tensor `{t}`: factor dimensions must be positive")));
        }
        if self.rank == 0 || self.rank > self.max_rank() {
            return Err(Error::Validation(format!(
                "tensor `{t}`: rank {} outside 1..={}",
                self.rank,
                self.max_rank()
            )));
        }
        if self.max_alt_iters == 0 {
            return Err(Error::Validation(format!("tensor `{t}`: iters must be at least 1")));
        }
        Ok(())
    }

    /// Checks that the factor shapes tile a `rows x cols` tensor.
    pub fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        let t = &self.tensor;
        if self.rows() != rows {
            return Err(Error::Shape(format!(
                "tensor `{t}`: m1*m2 = {}*{} = {} but the tensor has {rows} rows",
                self.m1,
                self.m2,
                self.rows()
            )));
        }
        if self.cols() != cols {
            return Err(Error::Shape(format!(
                "tensor `{t}`: n1*n2 = {}*{} = {} but the tensor has {cols} columns",
                self.n1,
                self.n2,
                self.cols()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for PlanEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tensor={} a={}x{} b={}x{} rank={} perm={} iters={}",
            self.tensor,
            self.m1,
            self.n1,
            self.m2,
            self.n2,
            self.rank,
            if self.use_permutations { "on" } else { "off" },
            self.max_alt_iters
        )?;
        if self.kicks != DEFAULT_KICKS {
            write!(f, " kicks={}", self.kicks)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompressionPlan {
    pub entries: Vec<PlanEntry>,
}

impl CompressionPlan {
    pub fn new(entries: Vec<PlanEntry>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            e.check()?;
            if let Some(prev) = seen.insert(e.tensor.clone(), i) {
                return Err(Error::Validation(format!(
                    "tensor `{}` appears in plan records {} and {}",
                    e.tensor,
                    prev + 1,
                    i + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Parses the text grammar without consulting any tensor manifest.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let fields = split_fields(line, lineno + 1)?;
            entries.push(entry_from_fields(&fields, lineno + 1, &[])?);
        }
        Self::new(entries)
    }

    /// Validates every record against `(name, rows, cols)` triples.
    pub fn validate(&self, manifest: &[(String, usize, usize)]) -> Result<()> {
        for e in &self.entries {
            let (_, rows, cols) = manifest
                .iter()
                .find(|(name, _, _)| *name == e.tensor)
                .ok_or_else(|| Error::Reference(e.tensor.clone()))?;
            e.check_shape(*rows, *cols)?;
        }
        Ok(())
    }

    pub fn get(&self, tensor: &str) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.tensor == tensor)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|e| format!("{e}\n")).collect()
    }
}

/// Parses a plan and validates it against a tensor manifest in one go.
pub fn parse_plan(text: &str, manifest: &[(String, usize, usize)]) -> Result<CompressionPlan> {
    let plan = CompressionPlan::parse(text)?;
    plan.validate(manifest)?;
    Ok(plan)
}

/// Sidecar record written next to a compressed tensor file: a plan record
/// extended with the residual achieved for that tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionRecord {
    pub entry: PlanEntry,
    pub residual: f64,
    pub rel_residual: f64,
}

impl fmt::Display for DecompositionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} residual={} rel_residual={}",
            self.entry, self.residual, self.rel_residual
        )
    }
}

pub fn parse_sidecar(text: &str) -> Result<Vec<DecompositionRecord>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let fields = split_fields(line, lineno + 1)?;
        let entry = entry_from_fields(&fields, lineno + 1, &["residual", "rel_residual"])?;
        let real = |key: &str| -> Result<f64> {
            let v = lookup(&fields, key)
                .ok_or_else(|| Error::Format(format!("line {}: missing `{key}`", lineno + 1)))?;
            v.parse::<f64>()
                .map_err(|_| Error::Format(format!("line {}: `{key}={v}` is not a number", lineno + 1)))
        };
        out.push(DecompositionRecord {
            residual: real("residual")?,
            rel_residual: real("rel_residual")?,
            entry,
        });
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(head, _)| head)
}

fn split_fields(line: &str, lineno: usize) -> Result<Vec<(&str, &str)>> {
    let mut fields: Vec<(&str, &str)> = Vec::new();
    for tok in line.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {lineno}: expected key=value, got `{tok}`")))?;
        if fields.iter().any(|(seen, _)| *seen == k) {
            return Err(Error::Format(format!("line {lineno}: key `{k}` given twice")));
        }
        fields.push((k, v));
    }
    Ok(fields)
}

fn lookup<'a>(fields: &[(&'a str, &'a str)], key: &str) -> Option<&'a str> {
    fields.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

fn entry_from_fields(fields: &[(&str, &str)], lineno: usize, extra_keys: &[&str]) -> Result<PlanEntry> {
    const KEYS: [&str; 7] = ["tensor", "a", "b", "rank", "perm", "iters", "kicks"];
    for (k, _) in fields {
        if !KEYS.contains(k) && !extra_keys.contains(k) {
            return Err(Error::Format(format!("line {lineno}: unknown key `{k}`")));
        }
    }
    let required = |key: &str| {
        lookup(fields, key).ok_or_else(|| Error::Format(format!("line {lineno}: missing `{key}=`")))
    };
    let tensor = required("tensor")?;
    if tensor.is_empty() {
        return Err(Error::Format(format!("line {lineno}: empty tensor name")));
    }
    let (m1, n1) = parse_shape(required("a")?, lineno)?;
    let (m2, n2) = parse_shape(required("b")?, lineno)?;
    let rank = match lookup(fields, "rank") {
        Some(v) => parse_count(v, "rank", lineno)?,
        None => DEFAULT_RANK,
    };
    let use_permutations = match lookup(fields, "perm") {
        None | Some("on") => true,
        Some("off") => false,
        Some(other) => {
            return Err(Error::Format(format!(
                "line {lineno}: perm must be `on` or `off`, got `{other}`"
            )))
        }
    };
    let max_alt_iters = match lookup(fields, "iters") {
        Some(v) => parse_count(v, "iters", lineno)?,
        None => DEFAULT_ITERS,
    };
    let kicks = match lookup(fields, "kicks") {
        Some(v) => parse_count(v, "kicks", lineno)?,
        None => DEFAULT_KICKS,
    };
    Ok(PlanEntry {
        tensor: tensor.to_string(),
        m1,
        n1,
        m2,
        n2,
        rank,
        use_permutations,
        max_alt_iters,
        kicks,
    })
}

fn parse_shape(s: &str, lineno: usize) -> Result<(usize, usize)> {
    let bad = || Error::Format(format!("line {lineno}: shape `{s}` is not <rows>x<cols>"));
    let (r, c) = s.split_once('x').ok_or_else(bad)?;
    Ok((r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
}

fn parse_count(s: &str, key: &str, lineno: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Format(format!("line {lineno}: `{key}={s}` is not a non-negative integer")))
}
