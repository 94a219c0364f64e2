//! The OVPT tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "OVPT" | u32 version = 1 | u32 tensor count
//! per tensor:
//!   u32 name length | name bytes (UTF-8) | u8 dtype (0 = f32, 1 = f64, 2 = u8 mask)
//!   u32 ndim | ndim x u64 dims | raw little-endian data, row-major
//! ```
//!
//! Tensor order in the file is insertion order, so writing the same container
//! twice gives identical bytes. Row-major flattening of a weight tensor is the
//! index order every pruner uses.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result, StoreError};

pub const MAGIC: [u8; 4] = *b"OVPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    Mask,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::Mask => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::Mask),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::Mask => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    Mask(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::Mask(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::Mask(_) => DType::Mask,
        }
    }
}

// Bitwise comparison so that NaN payloads and signed zeros round-trip exactly.
impl PartialEq for TensorData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::Mask(a), TensorData::Mask(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self, StoreError> {
        Self::checked(dims, data, "<unnamed>")
    }

    fn checked(dims: Vec<usize>, data: TensorData, name: &str) -> Result<Self, StoreError> {
        let invalid = |reason: String| StoreError::InvalidTensor {
            tensor: name.to_string(),
            reason,
        };
        if dims.is_empty() {
            return Err(invalid("dims must be non-empty".into()));
        }
        if dims.contains(&0) {
            return Err(invalid(format!("zero dimension in {dims:?}")));
        }
        let count = element_count(&dims).ok_or_else(|| invalid("element count overflows".into()))?;
        if count != data.len() {
            return Err(invalid(format!(
                "dims {dims:?} describe {count} elements, data has {}",
                data.len()
            )));
        }
        if let TensorData::Mask(m) = &data {
            if let Some(bad) = m.iter().find(|&&v| v > 1) {
                return Err(invalid(format!("mask value {bad} not in {{0,1}}")));
            }
        }
        Ok(Self { dims, data })
    }

    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, StoreError> {
        Self::new(dims, TensorData::F32(data))
    }

    pub fn f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, StoreError> {
        Self::new(dims, TensorData::F64(data))
    }

    pub fn mask(dims: Vec<usize>, data: Vec<u8>) -> Result<Self, StoreError> {
        Self::new(dims, TensorData::Mask(data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values widened to f64. Masks map to 0.0 / 1.0.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::Mask(v) => v.iter().map(|&x| f64::from(x)).collect(),
        }
    }

    pub fn as_mask(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::Mask(m) => Some(m),
            _ => None,
        }
    }

    /// Same dims and dtype as `self`, with new values (narrowed to f32 if needed).
    pub fn with_values(&self, values: &[f64]) -> Result<Self, StoreError> {
        let data = match self.dtype() {
            DType::F32 => TensorData::F32(values.iter().map(|&x| x as f32).collect()),
            DType::F64 => TensorData::F64(values.to_vec()),
            DType::Mask => TensorData::Mask(values.iter().map(|&x| u8::from(x != 0.0)).collect()),
        };
        Self::new(self.dims.clone(), data)
    }

    fn byte_len(&self) -> usize {
        self.len() * self.dtype().width()
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorContainer {
    version: u32,
    entries: IndexMap<String, Tensor>,
}

impl Default for TensorContainer {
    fn default() -> Self {
        Self::new()
    }
}

impl TensorContainer {
    pub fn new() -> Self {
        Self {
            version: FORMAT_VERSION,
            entries: IndexMap::new(),
        }
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Inserts a tensor; fails if the name is already present.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), StoreError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(StoreError::DuplicateName(name));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    /// Inserts or replaces, keeping the original position on replace.
    pub fn set(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let size = 12
            + self
                .entries
                .iter()
                .map(|(k, t)| 4 + k.len() + 1 + 4 + 8 * t.dims.len() + t.byte_len())
                .sum::<usize>();
        let mut out = Vec::with_capacity(size);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype().code());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::Mask(v) => out.extend_from_slice(v),
            }
        }
        debug_assert_eq!(out.len(), size);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, || "magic".into())?.try_into().unwrap();
        if magic != MAGIC {
            return Err(StoreError::BadMagic { found: magic });
        }
        let version = r.u32(|| "version".into())?;
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let count = r.u32(|| "tensor count".into())?;
        let mut c = TensorContainer::new();
        for idx in 0..count {
            let name_len = r.u32(|| format!("name length of tensor #{idx}"))? as usize;
            let name = r.take(name_len, || format!("name of tensor #{idx}"))?;
            let name = std::str::from_utf8(name).map_err(|_| StoreError::BadName)?.to_string();
            let code = r.u8(|| format!("dtype of tensor `{name}`"))?;
            let dtype = DType::from_code(code).ok_or_else(|| StoreError::UnknownDtype {
                tensor: name.clone(),
                code,
            })?;
            let ndim = r.u32(|| format!("ndim of tensor `{name}`"))? as usize;
            let mut dims = Vec::with_capacity(ndim.min(64));
            for _ in 0..ndim {
                let d = r.u64(|| format!("dims of tensor `{name}`"))?;
                let d = usize::try_from(d).map_err(|_| StoreError::InvalidTensor {
                    tensor: name.clone(),
                    reason: format!("dimension {d} does not fit in memory"),
                })?;
                dims.push(d);
            }
            let count = element_count(&dims).ok_or_else(|| StoreError::InvalidTensor {
                tensor: name.clone(),
                reason: "element count overflows".into(),
            })?;
            let nbytes = count
                .checked_mul(dtype.width())
                .ok_or_else(|| StoreError::InvalidTensor {
                    tensor: name.clone(),
                    reason: "byte count overflows".into(),
                })?;
            let raw = r.take(nbytes, || format!("data of tensor `{name}`"))?;
            let data = match dtype {
                DType::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                DType::F64 => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                DType::Mask => TensorData::Mask(raw.to_vec()),
            };
            let tensor = Tensor::checked(dims, data, &name)?;
            c.insert(name, tensor)?;
        }
        if r.pos != bytes.len() {
            return Err(StoreError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(c)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: impl FnOnce() -> String) -> Result<&'a [u8], StoreError> {
        if self.buf.len() - self.pos < n {
            return Err(StoreError::Truncated { what: what() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: impl FnOnce() -> String) -> Result<u8, StoreError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: impl FnOnce() -> String) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: impl FnOnce() -> String) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn write_container(path: impl AsRef<Path>, c: &TensorContainer) -> Result<(), StoreError> {
    let path = path.as_ref();
    fs::write(path, c.to_bytes()).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_container(path: impl AsRef<Path>) -> Result<TensorContainer, StoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TensorContainer::from_bytes(&bytes)
}

/// Tensor names for layer `<id>`.
pub mod keys {
    pub const PREFIX: &str = "layer.";

    pub fn weight(id: &str) -> String {
        format!("layer.{id}.weight")
    }
    pub fn grads(id: &str) -> String {
        format!("layer.{id}.grads")
    }
    pub fn mask(id: &str) -> String {
        format!("layer.{id}.mask")
    }
    pub fn prunable(id: &str) -> String {
        format!("layer.{id}.prunable")
    }

    /// Layer id of a `layer.<id>.weight` name.
    pub fn weight_id(name: &str) -> Option<&str> {
        name.strip_prefix(PREFIX)?.strip_suffix(".weight")
    }

    /// Layer id of a `layer.<id>.grads` name.
    pub fn grads_id(name: &str) -> Option<&str> {
        name.strip_prefix(PREFIX)?.strip_suffix(".grads")
    }
}

/// Per-sample gradients for one layer: `samples` is `[n, d]` row-major, row `i`
/// being the flattened gradient of sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    layer: String,
    n: usize,
    d: usize,
    samples: Vec<f64>,
}

impl GradientSet {
    pub fn new(layer: impl Into<String>, n: usize, d: usize, samples: Vec<f64>) -> Result<Self> {
        let layer = layer.into();
        if n == 0 || d == 0 {
            return Err(Error::Shape(format!(
                "layer `{layer}`: gradient set must be non-empty, got [{n}, {d}]"
            )));
        }
        if samples.len() != n * d {
            return Err(Error::Shape(format!(
                "layer `{layer}`: {} gradient values for shape [{n}, {d}]",
                samples.len()
            )));
        }
        Ok(Self { layer, n, d, samples })
    }

    pub fn from_rows(layer: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let layer = layer.into();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape(format!("layer `{layer}`: ragged gradient rows")));
        }
        Self::new(layer, rows.len(), d, rows.concat())
    }

    pub fn from_tensor(layer: impl Into<String>, t: &Tensor) -> Result<Self> {
        let layer = layer.into();
        match (t.dtype(), t.dims()) {
            (DType::Mask, _) => Err(Error::Shape(format!("layer `{layer}`: gradients must be f32 or f64"))),
            (_, [n, d]) => Self::new(layer, *n, *d, t.to_f64()),
            (_, dims) => Err(Error::Shape(format!(
                "layer `{layer}`: gradients must have shape [N, d], got {dims:?}"
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::f64(vec![self.n, self.d], self.samples.clone()).expect("validated shape")
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn num_samples(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.samples[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.d)
    }

    /// Keeps only the first `n` rows.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.clamp(1, self.n);
        Self {
            layer: self.layer.clone(),
            n,
            d: self.d,
            samples: self.samples[..n * self.d].to_vec(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.samples.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                layer: self.layer.clone(),
                what: "gradients".into(),
            })
        }
    }
}
