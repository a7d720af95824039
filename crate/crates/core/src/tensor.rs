//! Dense value types shared by every module: images, label maps, probability
//! maps and budgeted perturbations.
//!
//! Storage is `f32` for images (what a model consumes) and `f64` for anything
//! that is accumulated: probabilities, perturbations, norms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Tolerance on per-pixel probability sums.
pub const SIMPLEX_TOL: f64 = 1e-5;

/// Relative slack allowed on a perturbation's budget.
pub const BUDGET_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Total number of scalar inputs, `H·W·C`.
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// An `H×W×C` image, row-major with channels innermost, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: ImageShape,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(shape: ImageShape, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        if data.len() != shape.len() {
            return Err(shape_err(shape.len(), data.len()));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: ImageShape, value: f32) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Builds an image from values that are already known to lie in `[0, 1]`.
    pub(crate) fn from_clamped(shape: ImageShape, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        Self { shape, data }
    }
}

/// Ground-truth or predicted class per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("label map dimensions must be positive".into()));
        }
        if labels.len() != height * width {
            return Err(shape_err(height * width, labels.len()));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l as usize >= num_classes) {
            Some(l) => Err(Error::OutOfRange(format!(
                "label {l} not below class count {num_classes}"
            ))),
            None => Ok(()),
        }
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Per-pixel class distribution, `H×W×K`, row-major with classes innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    num_classes: usize,
    probs: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument("probability map dimensions must be positive".into()));
        }
        if probs.len() != height * width * num_classes {
            return Err(shape_err(height * width * num_classes, probs.len()));
        }
        for (n, row) in probs.chunks_exact(num_classes).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::OutOfRange(format!(
                    "pixel {n} is not a probability distribution (sum {sum})"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            num_classes,
            probs,
        })
    }

    pub(crate) fn from_raw(height: usize, width: usize, num_classes: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), height * width * num_classes);
        Self {
            height,
            width,
            num_classes,
            probs,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel(&self, n: usize) -> &[f64] {
        &self.probs[n * self.num_classes..(n + 1) * self.num_classes]
    }

    pub fn iter_pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.probs.chunks_exact(self.num_classes)
    }

    pub fn max_probs(&self) -> Vec<f64> {
        self.iter_pixels()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    pub fn check_labels(&self, labels: &LabelMap) -> Result<()> {
        if labels.height() != self.height || labels.width() != self.width {
            return Err(shape_err(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", labels.height(), labels.width()),
            ));
        }
        labels.validate(self.num_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    L2,
    Linf,
}

impl NormKind {
    pub const ALL: [NormKind; 3] = [NormKind::L1, NormKind::L2, NormKind::Linf];
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::L1 => "l1",
            NormKind::L2 => "l2",
            NormKind::Linf => "linf",
        })
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(NormKind::L1),
            "l2" => Ok(NormKind::L2),
            "linf" | "inf" => Ok(NormKind::Linf),
            other => Err(Error::InvalidArgument(format!("unknown norm {other:?}"))),
        }
    }
}

/// `||v||_p` accumulated in `f64`.
pub fn lp_norm(v: &[f64], p: NormKind) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(lp_norm_unchecked(v, p))
}

pub(crate) fn lp_norm_unchecked(v: &[f64], p: NormKind) -> f64 {
    match p {
        NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
        NormKind::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormKind::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// A perturbation `δ` that is guaranteed to respect its budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    data: Vec<f64>,
    norm: NormKind,
    eps: f64,
}

impl Perturbation {
    pub fn new(data: Vec<f64>, norm: NormKind, eps: f64) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("budget must be nonnegative, got {eps}")));
        }
        let size = lp_norm(&data, norm)?;
        if size > eps * (1.0 + BUDGET_SLACK) {
            return Err(Error::OutOfRange(format!(
                "{norm} norm {size} exceeds budget {eps}"
            )));
        }
        Ok(Self { data, norm, eps })
    }

    pub fn zeros(n: usize, norm: NormKind, eps: f64) -> Result<Self> {
        Self::new(vec![0.0; n], norm, eps)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm
    }

    pub fn budget(&self) -> f64 {
        self.eps
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn size(&self, p: NormKind) -> f64 {
        lp_norm_unchecked(&self.data, p)
    }
}
