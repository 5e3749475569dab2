//! Dense, dtype-tagged tensors and the elementwise arithmetic the rest of the
//! crate is built from.
//!
//! Storage is row-major and immutable after construction. Arithmetic always
//! widens to `f32` (norms to `f64`) and rounds back to the storage dtype with
//! IEEE round-to-nearest-even on store.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage element type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "F32", alias = "f32", alias = "float32")]
    F32,
    #[serde(rename = "F16", alias = "f16", alias = "float16")]
    F16,
    #[serde(rename = "BF16", alias = "bf16", alias = "bfloat16")]
    BF16,
}

impl DType {
    pub const ALL: [DType; 3] = [DType::F32, DType::F16, DType::BF16];

    /// Width of one element in bytes.
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 | DType::BF16 => 2,
        }
    }

    /// Container dtype string.
    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "F32",
            DType::F16 => "F16",
            DType::BF16 => "BF16",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F32" | "f32" | "float32" => Ok(DType::F32),
            "F16" | "f16" | "float16" => Ok(DType::F16),
            "BF16" | "bf16" | "bfloat16" => Ok(DType::BF16),
            other => Err(Error::format(format!("unsupported dtype `{other}`"))),
        }
    }
}

/// Typed element buffer.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F16(Vec<f16>),
    BF16(Vec<bf16>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F16(_) => DType::F16,
            TensorData::BF16(_) => DType::BF16,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F16(v) => v.len(),
            TensorData::BF16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.dtype().size()
    }

    /// Rounds `values` into `dtype` storage.
    pub fn from_f32(values: Vec<f32>, dtype: DType) -> Self {
        match dtype {
            DType::F32 => TensorData::F32(values),
            DType::F16 => TensorData::F16(values.into_iter().map(f16::from_f32).collect()),
            DType::BF16 => TensorData::BF16(values.into_iter().map(bf16::from_f32).collect()),
        }
    }

    /// Widened copy of the elements; borrowed when already `f32`.
    pub fn to_f32(&self) -> Cow<'_, [f32]> {
        match self {
            TensorData::F32(v) => Cow::Borrowed(v.as_slice()),
            TensorData::F16(v) => Cow::Owned(v.iter().map(|x| x.to_f32()).collect()),
            TensorData::BF16(v) => Cow::Owned(v.iter().map(|x| x.to_f32()).collect()),
        }
    }

    /// Decodes little-endian bytes.
    pub fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(dtype.size()) {
            return Err(Error::format(format!(
                "{} bytes is not a multiple of the {dtype} element size",
                bytes.len()
            )));
        }
        Ok(match dtype {
            DType::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::F16 => TensorData::F16(
                bytes
                    .chunks_exact(2)
                    .map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]])))
                    .collect(),
            ),
            DType::BF16 => TensorData::BF16(
                bytes
                    .chunks_exact(2)
                    .map(|c| bf16::from_bits(u16::from_le_bytes([c[0], c[1]])))
                    .collect(),
            ),
        })
    }

    /// Appends the little-endian encoding to `out`.
    pub fn write_le_bytes(&self, out: &mut Vec<u8>) {
        out.reserve(self.byte_len());
        match self {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F16(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_bits().to_le_bytes())),
            TensorData::BF16(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_bits().to_le_bytes())),
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_le_bytes(&mut out);
        out
    }

    /// Bit-level equality (NaN payloads and signed zeros included).
    pub fn bitwise_eq(&self, other: &TensorData) -> bool {
        match (self, other) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::F16(a), TensorData::F16(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::BF16(a), TensorData::BF16(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

/// A named, shaped, dtype-tagged dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: TensorData,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidTensor {
                name,
                reason: "empty name".into(),
            });
        }
        if shape.contains(&0) {
            return Err(Error::InvalidTensor {
                name,
                reason: format!("shape {shape:?} has a zero dimension"),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor {
                name,
                reason: format!(
                    "shape {shape:?} needs {expected} elements, buffer has {}",
                    data.len()
                ),
            });
        }
        Ok(Self { name, shape, data })
    }

    pub fn from_f32(name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Self::new(name, shape, TensorData::F32(values))
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>, dtype: DType) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(name, shape, TensorData::from_f32(vec![0.0; n], dtype))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn byte_len(&self) -> usize {
        self.data.byte_len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` for rank-2 tensors.
    pub fn matrix_dims(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            &[m, n] => Some((m, n)),
            _ => None,
        }
    }

    pub fn to_f32(&self) -> Cow<'_, [f32]> {
        self.data.to_f32()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        let name = name.into();
        assert!(!name.is_empty(), "tensor names must be non-empty");
        self.name = name;
        self
    }

    pub fn bitwise_eq(&self, other: &NamedTensor) -> bool {
        self.name == other.name && self.shape == other.shape && self.data.bitwise_eq(&other.data)
    }

    fn check_same_shape(&self, other: &NamedTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                name: self.name.clone(),
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// `a + scale * b`, accumulated in `f32` and stored as `a`'s dtype under
/// `a`'s name. A zero scale returns `a` untouched.
pub fn add_scaled(a: &NamedTensor, b: &NamedTensor, scale: f64) -> Result<NamedTensor> {
    a.check_same_shape(b)?;
    if scale == 0.0 {
        return Ok(a.clone());
    }
    let s = scale as f32;
    let lhs = a.to_f32();
    let rhs = b.to_f32();
    let out: Vec<f32> = lhs.iter().zip(rhs.iter()).map(|(x, y)| x + s * y).collect();
    Ok(NamedTensor {
        name: a.name.clone(),
        shape: a.shape.clone(),
        data: TensorData::from_f32(out, a.dtype()),
    })
}

/// `a - b` as an `f32` tensor named after `a`.
pub fn subtract(a: &NamedTensor, b: &NamedTensor) -> Result<NamedTensor> {
    a.check_same_shape(b)?;
    let lhs = a.to_f32();
    let rhs = b.to_f32();
    let out: Vec<f32> = lhs.iter().zip(rhs.iter()).map(|(x, y)| x - y).collect();
    Ok(NamedTensor {
        name: a.name.clone(),
        shape: a.shape.clone(),
        data: TensorData::F32(out),
    })
}

pub fn frobenius_norm(t: &NamedTensor) -> f64 {
    t.to_f32()
        .iter()
        .map(|&x| {
            let x = f64::from(x);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rounds to the nearest value representable in `dtype` (ties to even).
/// Out-of-range magnitudes become infinities; NaN stays NaN.
pub fn cast(t: &NamedTensor, dtype: DType) -> NamedTensor {
    if t.dtype() == dtype {
        return t.clone();
    }
    // 16-bit to 16-bit goes through f32, which holds both exactly.
    NamedTensor {
        name: t.name.clone(),
        shape: t.shape.clone(),
        data: TensorData::from_f32(t.to_f32().into_owned(), dtype),
    }
}
