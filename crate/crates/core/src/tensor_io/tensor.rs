//! Dense row-major tensors and the `DPT1` binary container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "DPT1" | dtype u8 (1 = f32, 2 = f64) | rank u8 | 0u8 0u8 | rank x u64 extents | payload
//! ```

use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::{Array, Array1, Array2, Array3, Dimension, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DPT1";
pub const FIXED_HEADER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DType::F32 => f.write_str("float32"),
            DType::F64 => f.write_str("float64"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        match self {
            TensorData::F32(v) => v.iter().position(|x| !x.is_finite()),
            TensorData::F64(v) => v.iter().position(|x| !x.is_finite()),
        }
    }
}

/// Shape and dtype as read from a container header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl TensorHeader {
    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    fn encoded_len(&self) -> usize {
        FIXED_HEADER_LEN + 8 * self.shape.len()
    }
}

/// A finite, non-empty, row-major numeric array.
///
/// Construction validates every invariant, so a `Tensor` value is always
/// well-formed.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        validate_shape(&shape)?;
        let expected = checked_product(&shape)?;
        if expected != data.len() {
            return Err(Error::PayloadMismatch { expected, actual: data.len() });
        }
        if let Some(idx) = data.first_non_finite() {
            return Err(Error::NonFinite(idx));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    /// Copies a standard-layout `f64` array into an `f64` tensor.
    pub fn from_array<D: Dimension>(array: &Array<f64, D>) -> Result<Self> {
        let shape = array.shape().to_vec();
        Self::from_f64(shape, array.iter().copied().collect())
    }

    /// Same as [`Tensor::from_array`] but narrows to `f32`.
    pub fn from_array_f32<D: Dimension>(array: &Array<f64, D>) -> Result<Self> {
        let shape = array.shape().to_vec();
        Self::from_f32(shape, array.iter().map(|&x| x as f32).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn header(&self) -> TensorHeader {
        TensorHeader { dtype: self.dtype(), shape: self.shape.clone() }
    }

    /// Widens to `f64` (exact for `f32` payloads).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    pub fn to_array(&self) -> Array<f64, IxDyn> {
        Array::from_shape_vec(IxDyn(&self.shape), self.to_f64_vec()).expect("shape product equals payload length")
    }

    pub fn to_array1(&self) -> Result<Array1<f64>> {
        self.expect_rank(1)?;
        Ok(Array1::from(self.to_f64_vec()))
    }

    pub fn to_array2(&self) -> Result<Array2<f64>> {
        self.expect_rank(2)?;
        Ok(Array2::from_shape_vec((self.shape[0], self.shape[1]), self.to_f64_vec())
            .expect("shape product equals payload length"))
    }

    pub fn to_array3(&self) -> Result<Array3<f64>> {
        self.expect_rank(3)?;
        let s = &self.shape;
        Ok(Array3::from_shape_vec((s[0], s[1], s[2]), self.to_f64_vec()).expect("shape product equals payload length"))
    }

    fn expect_rank(&self, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::DimensionMismatch(format!("expected rank-{rank} tensor, found shape {:?}", self.shape)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::with_capacity(header.encoded_len() + self.len() * self.dtype().size_of());
        out.extend_from_slice(MAGIC);
        out.push(self.dtype().code());
        out.push(self.rank() as u8);
        out.extend_from_slice(&[0, 0]);
        for &extent in &self.shape {
            out.extend_from_slice(&(extent as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = parse_header(bytes)?;
        let payload = &bytes[header.encoded_len()..];
        let expected = checked_product(&header.shape)?;
        let width = header.dtype.size_of();
        if payload.len() != expected * width {
            return Err(Error::PayloadMismatch { expected, actual: payload.len() / width });
        }
        let data = match header.dtype {
            DType::F32 => {
                TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            }
            DType::F64 => {
                TensorData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
        };
        Tensor::new(header.shape, data)
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidTensor("rank must be at least 1".into()));
    }
    if shape.len() > u8::MAX as usize {
        return Err(Error::InvalidTensor(format!("rank {} exceeds 255", shape.len())));
    }
    if shape.contains(&0) {
        return Err(Error::ZeroExtent(shape.to_vec()));
    }
    Ok(())
}

fn checked_product(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::InvalidTensor(format!("shape {shape:?} overflows usize")))
}

fn parse_header(bytes: &[u8]) -> Result<TensorHeader> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("header shorter than magic"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(Error::Truncated("fixed header"));
    }
    let dtype = DType::from_code(bytes[4])?;
    let rank = bytes[5] as usize;
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(Error::InvalidTensor("reserved header bytes are not zero".into()));
    }
    if rank == 0 {
        return Err(Error::InvalidTensor("rank must be at least 1".into()));
    }
    let dims_end = FIXED_HEADER_LEN + 8 * rank;
    if bytes.len() < dims_end {
        return Err(Error::Truncated("extent list"));
    }
    let shape = bytes[FIXED_HEADER_LEN..dims_end]
        .chunks_exact(8)
        .map(|c| {
            usize::try_from(u64::from_le_bytes(c.try_into().unwrap()))
                .map_err(|_| Error::InvalidTensor("extent exceeds usize".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    validate_shape(&shape)?;
    Ok(TensorHeader { dtype, shape })
}

/// Writes `t` in the `DPT1` layout.
pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

/// Reads only the header, without touching the payload.
pub fn read_header(path: impl AsRef<Path>) -> Result<TensorHeader> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut fixed = [0u8; FIXED_HEADER_LEN];
    let got = read_up_to(&mut file, &mut fixed).map_err(|e| Error::io(path, e))?;
    let rank = if got >= 6 { fixed[5] as usize } else { 0 };
    let mut buf = fixed[..got].to_vec();
    if got == FIXED_HEADER_LEN && rank > 0 {
        let mut dims = vec![0u8; 8 * rank];
        let got_dims = read_up_to(&mut file, &mut dims).map_err(|e| Error::io(path, e))?;
        buf.extend_from_slice(&dims[..got_dims]);
    }
    let header = parse_header(&buf)?;
    // the payload is not read, but its length must still match
    let actual = file.metadata().map_err(|e| Error::io(path, e))?.len() as usize - header.encoded_len();
    let expected = header.num_elements() * header.dtype.size_of();
    if actual != expected {
        return Err(Error::PayloadMismatch { expected, actual });
    }
    Ok(header)
}

fn read_up_to(reader: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}
