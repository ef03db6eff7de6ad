//! Named-tensor container.
//!
//! Layout, little-endian, no padding:
//!
//! ```text
//! magic   "PKTN"            4 bytes
//! version u32 = 1
//! count   u64
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   dtype    u8   (1 = f32, 2 = f64)
//!   ndim     u8
//!   dims     ndim x u64
//!   payload  product(dims) x dtype width, row-major
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const MAGIC: &[u8; 4] = b"PKTN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let name = name.into();
        if dims.is_empty() || dims.len() > u8::MAX as usize {
            return Err(Error::Validation(format!(
                "tensor `{name}` must have between 1 and 255 dimensions"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Validation(format!(
                "tensor `{name}` has a zero dimension in {dims:?}"
            )));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::Validation(format!(
                "tensor `{name}` with dims {dims:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, dims, data })
    }

    /// Stores a matrix as a 2-D tensor, narrowing to f32 when asked.
    pub fn from_matrix(name: impl Into<String>, m: &DenseMatrix, dtype: Dtype) -> Self {
        let data = match dtype {
            Dtype::F64 => TensorData::F64(m.as_slice().to_vec()),
            Dtype::F32 => TensorData::F32(m.as_slice().iter().map(|&v| v as f32).collect()),
        };
        Self {
            name: name.into(),
            dims: vec![m.rows(), m.cols()],
            data,
        }
    }

    /// Stores a 1-D vector; an empty vector is not representable.
    pub fn from_vector(name: impl Into<String>, v: &[f64], dtype: Dtype) -> Result<Self> {
        let data = match dtype {
            Dtype::F64 => TensorData::F64(v.to_vec()),
            Dtype::F32 => TensorData::F32(v.iter().map(|&x| x as f32).collect()),
        };
        Self::new(name, vec![v.len()], data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    /// Widened 2-D view. 1-D tensors are rejected; callers reshape first.
    pub fn to_matrix(&self) -> Result<DenseMatrix> {
        match self.dims.as_slice() {
            &[r, c] => DenseMatrix::from_vec(r, c, self.data.to_f64()),
            other => Err(Error::Shape(format!(
                "tensor `{}` has dims {other:?}, expected a matrix",
                self.name
            ))),
        }
    }

    pub fn to_vector(&self) -> Result<Vec<f64>> {
        match self.dims.as_slice() {
            &[_] => Ok(self.data.to_f64()),
            other => Err(Error::Shape(format!(
                "tensor `{}` has dims {other:?}, expected a vector",
                self.name
            ))),
        }
    }
}

/// Ordered collection of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedTensorFile {
    entries: Vec<NamedTensor>,
}

impl NamedTensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<NamedTensor>) -> Result<Self> {
        let mut file = Self::new();
        for e in entries {
            file.push(e)?;
        }
        Ok(file)
    }

    pub fn push(&mut self, tensor: NamedTensor) -> Result<()> {
        if self.get(&tensor.name).is_some() {
            return Err(Error::Validation(format!(
                "duplicate tensor name `{}`",
                tensor.name
            )));
        }
        self.entries.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.entries.iter().find(|t| t.name == name)
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor> {
        self.entries.iter()
    }

    pub fn matrix(&self, name: &str) -> Result<DenseMatrix> {
        self.get(name)
            .ok_or_else(|| Error::Reference(name.to_string()))?
            .to_matrix()
    }

    /// (name, rows, cols) for every 2-D tensor, in file order.
    pub fn manifest(&self) -> Vec<(String, usize, usize)> {
        self.entries
            .iter()
            .filter_map(|t| match t.dims.as_slice() {
                &[r, c] => Some((t.name.clone(), r, c)),
                _ => None,
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self
            .entries
            .iter()
            .map(|t| 6 + t.name.len() + 8 * t.dims.len() + t.numel() * t.dtype().width())
            .sum();
        let mut out = Vec::with_capacity(16 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for t in &self.entries {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dtype().code());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).map_err(|_| Error::Format("file too short for magic".into()))?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"PKTN\"")));
        }
        let version = r
            .u32()
            .map_err(|_| Error::Format("missing format version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let count = r.u64().map_err(|_| Error::Format("missing tensor count".into()))?;

        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for idx in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format(format!("tensor #{idx} name is not UTF-8")))?
                .to_string();
            let code = r.u8()?;
            let dtype = Dtype::from_code(code)
                .ok_or_else(|| Error::Format(format!("tensor `{name}` has unknown dtype code {code}")))?;
            let ndim = r.u8()? as usize;
            if ndim == 0 {
                return Err(Error::Format(format!("tensor `{name}` has zero dimensions")));
            }
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let d = r.u64()?;
                dims.push(usize::try_from(d).map_err(|_| {
                    Error::Format(format!("tensor `{name}` dimension {d} overflows"))
                })?);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor `{name}` element count overflows")))?;
            let nbytes = numel
                .checked_mul(dtype.width())
                .ok_or_else(|| Error::Format(format!("tensor `{name}` byte size overflows")))?;
            let raw = r.take(nbytes)?;
            let data = match dtype {
                Dtype::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                ),
                Dtype::F64 => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect(),
                ),
            };
            let finite = match &data {
                TensorData::F32(v) => v.iter().all(|x| x.is_finite()),
                TensorData::F64(v) => v.iter().all(|x| x.is_finite()),
            };
            if !finite {
                return Err(Error::Validation(format!("tensor `{name}` contains non-finite values")));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::Validation(format!("duplicate tensor name `{name}`")));
            }
            entries.push(NamedTensor::new(name, dims, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Corruption(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { entries })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corruption(format!(
                    "truncated payload: wanted {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<NamedTensorFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    NamedTensorFile::from_bytes(&bytes)
}

pub fn save_tensors(tensors: &NamedTensorFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, tensors.to_bytes()).map_err(|e| Error::io(path, e))
}
