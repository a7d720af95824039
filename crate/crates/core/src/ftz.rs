//! The `FTZ1` tensor container.
//!
//! Layout, all little-endian: the four bytes `FTZ1`, a `u32` rank, `rank`
//! `u32` dimensions, then the row-major `f32` payload.

use std::fs;
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::smoothing::{CertifiedRadiusMap, WeightMap};
use crate::tensor::{ImageShape, ImageTensor, LabelMap, ProbMap};

pub const MAGIC: &[u8; 4] = b"FTZ1";

/// Highest rank accepted when decoding.
const MAX_RANK: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let len = element_count(&dims)?;
        if len != data.len() {
            return Err(shape_err(len, data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated {
                needed: 4,
                available: bytes.len(),
            });
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[..4]);
        if &magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let rank = read_u32(bytes, 4)?;
        if rank > MAX_RANK {
            return Err(Error::DimOverflow(vec![rank]));
        }
        let dims = (0..rank as usize)
            .map(|i| read_u32(bytes, 8 + 4 * i))
            .collect::<Result<Vec<_>>>()?;
        let len = element_count(&dims)?;
        let header = 8 + 4 * rank as usize;
        let needed = len
            .checked_mul(4)
            .and_then(|b| b.checked_add(header))
            .ok_or_else(|| Error::DimOverflow(dims.clone()))?;
        if bytes.len() < needed {
            return Err(Error::Truncated {
                needed,
                available: bytes.len(),
            });
        }
        if bytes.len() > needed {
            return Err(Error::InvalidArgument(format!(
                "{} trailing bytes after tensor payload",
                bytes.len() - needed
            )));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let slice = bytes.get(at..at + 4).ok_or(Error::Truncated {
        needed: at + 4,
        available: bytes.len(),
    })?;
    Ok(u32::from_le_bytes([slice[0], slice[1], slice[2], slice[3]]))
}

fn element_count(dims: &[u32]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::DimOverflow(dims.to_vec()))
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &RawTensor) -> Result<()> {
    fs::write(path, tensor.to_bytes())?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<RawTensor> {
    RawTensor::from_bytes(&fs::read(path)?)
}

fn dim(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::DimOverflow(vec![u32::MAX]))
}

impl ImageTensor {
    pub fn to_raw(&self) -> Result<RawTensor> {
        let s = self.shape();
        RawTensor::new(
            vec![dim(s.height)?, dim(s.width)?, dim(s.channels)?],
            self.data().to_vec(),
        )
    }

    pub fn from_raw(raw: RawTensor) -> Result<Self> {
        match raw.dims[..] {
            [h, w, c] => ImageTensor::new(ImageShape::new(h as usize, w as usize, c as usize), raw.data),
            _ => Err(shape_err("rank 3 image", format!("dims {:?}", raw.dims))),
        }
    }
}

impl LabelMap {
    /// Labels travel as integer-valued floats with a trailing unit dimension.
    pub fn to_raw(&self) -> Result<RawTensor> {
        RawTensor::new(
            vec![dim(self.height())?, dim(self.width())?, 1],
            self.labels().iter().map(|&l| l as f32).collect(),
        )
    }

    pub fn from_raw(raw: RawTensor) -> Result<Self> {
        let [h, w, 1] = raw.dims[..] else {
            return Err(shape_err("H x W x 1 label map", format!("dims {:?}", raw.dims)));
        };
        let labels = raw
            .data
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f32 {
                    Ok(v as u32)
                } else {
                    Err(Error::OutOfRange(format!("label value {v} is not a class index")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        LabelMap::new(h as usize, w as usize, labels)
    }
}

impl ProbMap {
    pub fn to_raw(&self) -> Result<RawTensor> {
        RawTensor::new(
            vec![dim(self.height())?, dim(self.width())?, dim(self.num_classes())?],
            self.probs().iter().map(|&p| p as f32).collect(),
        )
    }
}

impl CertifiedRadiusMap {
    pub fn to_raw(&self) -> Result<RawTensor> {
        RawTensor::new(
            vec![dim(self.height())?, dim(self.width())?],
            self.radii().iter().map(|&r| r as f32).collect(),
        )
    }
}

impl WeightMap {
    pub fn to_raw(&self) -> Result<RawTensor> {
        RawTensor::new(
            vec![dim(self.height())?, dim(self.width())?],
            self.weights().iter().map(|&w| w as f32).collect(),
        )
    }
}

/// Plain-text PGM rendering of a label map, scaled so class indices spread
/// over the grey range.
pub fn label_map_pgm(labels: &LabelMap, num_classes: usize) -> String {
    let scale = 255 / num_classes.saturating_sub(1).max(1) as u32;
    let mut out = format!("P2\n{} {}\n255\n", labels.width(), labels.height());
    for row in labels.labels().chunks(labels.width()) {
        let line: Vec<String> = row.iter().map(|&l| (l * scale).min(255).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
