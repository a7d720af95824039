//! Randomized smoothing for per-pixel classifiers.
//!
//! The smoothed model averages the base model's probability maps over
//! Gaussian-noised copies of the input. Each pixel's top-class probability
//! `p` then certifies an l2 radius `σ·Φ⁻¹(p)`; attacks turn those radii into
//! per-pixel loss weights `1 / (1 + exp(a·cr + b))` so that pixels which are
//! easy to flip dominate the objective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::normal::inv_norm_cdf;
use crate::oracle::{pixel_cross_entropy, BlackBoxOracle};
use crate::projections::clip_image;
use crate::rng::{gaussian_sample, RandomSource};
use crate::tensor::{ImageTensor, LabelMap, ProbMap};

/// Top-class probabilities are clamped into `[P_CLAMP, 1 − P_CLAMP]` before
/// inversion so saturated Monte-Carlo estimates give finite radii.
pub const P_CLAMP: f64 = 1e-6;

/// Noise samples evaluated per parallel work unit in [`smoothed_probs`].
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Gaussian noise standard deviation, in image-intensity units.
    pub sigma: f64,
    /// Monte-Carlo sample count `M`.
    pub samples: usize,
    pub a: f64,
    pub b: f64,
    /// Weights are recomputed every `interval` attack iterations.
    pub interval: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            sigma: 0.001,
            samples: 8,
            a: 2.0,
            b: -4.0,
            interval: 8,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("smoothing needs at least one sample".into()));
        }
        if self.interval == 0 {
            return Err(Error::InvalidArgument("recomputation interval must be >= 1".into()));
        }
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidArgument("weight parameters must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedRadiusMap {
    height: usize,
    width: usize,
    radii: Vec<f64>,
}

impl CertifiedRadiusMap {
    pub fn new(height: usize, width: usize, radii: Vec<f64>) -> Result<Self> {
        if radii.len() != height * width {
            return Err(shape_err(height * width, radii.len()));
        }
        if radii.iter().any(|r| !r.is_finite()) {
            return Err(Error::OutOfRange("certified radii must be finite".into()));
        }
        Ok(Self { height, width, radii })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
}

/// Per-pixel loss weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl WeightMap {
    pub fn new(height: usize, width: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != height * width {
            return Err(shape_err(height * width, weights.len()));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::OutOfRange("pixel weights must lie in [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    pub fn uniform(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Monte-Carlo estimate of the smoothed model at `x`. Noisy copies are clamped
/// into `[0,1]` before querying; exactly `cfg.samples` queries are made.
///
/// Sample `j` draws its noise from `rng.split(j)`, and partial sums are
/// combined in sample order, so the result does not depend on scheduling.
pub fn smoothed_probs<O: BlackBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    cfg: &SmoothingConfig,
    rng: &RandomSource,
) -> Result<ProbMap> {
    cfg.validate()?;
    let m = cfg.samples;
    let sample = |j: usize| -> Result<ProbMap> {
        let noise = gaussian_sample(&rng.split(j as u64), x.len(), cfg.sigma)?;
        oracle.predict(&clip_image(x, &noise)?)
    };
    let chunks: Vec<Vec<f64>> = (0..m.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc: Option<Vec<f64>> = None;
            for j in c * CHUNK..((c + 1) * CHUNK).min(m) {
                let p = sample(j)?;
                match acc.as_mut() {
                    None => acc = Some(p.probs().to_vec()),
                    Some(a) => a.iter_mut().zip(p.probs()).for_each(|(s, v)| *s += v),
                }
            }
            Ok(acc.expect("chunks are nonempty"))
        })
        .collect::<Result<_>>()?;
    let mut total = chunks[0].clone();
    for c in &chunks[1..] {
        total.iter_mut().zip(c).for_each(|(s, v)| *s += v);
    }
    total.iter_mut().for_each(|v| *v /= m as f64);
    let shape = x.shape();
    ProbMap::new(shape.height, shape.width, oracle.num_classes(), total)
}

/// `cr_n = σ·Φ⁻¹(clamp(max_c p_{n,c}))`. Negative radii are kept.
pub fn pixel_certified_radius(smoothed: &ProbMap, sigma: f64) -> Result<CertifiedRadiusMap> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    let radii = smoothed
        .max_probs()
        .into_iter()
        .map(|p| inv_norm_cdf(p.clamp(P_CLAMP, 1.0 - P_CLAMP)).map(|z| sigma * z))
        .collect::<Result<Vec<_>>>()?;
    CertifiedRadiusMap::new(smoothed.height(), smoothed.width(), radii)
}

/// Certified l2 radius of a smoothed classifier with top-class probability
/// lower bound `p_a` and runner-up upper bound `p_b`.
pub fn classification_certified_radius(p_a: f64, p_b: f64, sigma: f64) -> Result<f64> {
    if !(0.0 < p_b && p_b <= p_a && p_a < 1.0) {
        return Err(Error::OutOfRange(format!(
            "need 0 < pB <= pA < 1, got pA={p_a}, pB={p_b}"
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok(0.5 * sigma * (inv_norm_cdf(p_a)? - inv_norm_cdf(p_b)?))
}

pub fn pixel_weights(cr: &CertifiedRadiusMap, a: f64, b: f64) -> WeightMap {
    let weights = cr
        .radii()
        .iter()
        .map(|&r| 1.0 / (1.0 + (a * r + b).exp()))
        .collect();
    WeightMap {
        height: cr.height(),
        width: cr.width(),
        weights,
    }
}

/// `(1/N)·Σ_n w_n·CE_n`.
pub fn cr_weighted_loss(probs: &ProbMap, y: &LabelMap, weights: &WeightMap) -> Result<f64> {
    if weights.height() != probs.height() || weights.width() != probs.width() {
        return Err(shape_err(
            format!("{}x{}", probs.height(), probs.width()),
            format!("{}x{}", weights.height(), weights.width()),
        ));
    }
    let ce = pixel_cross_entropy(probs, y)?;
    let total: f64 = ce.iter().zip(weights.weights()).map(|(c, w)| c * w).sum();
    Ok(total / ce.len() as f64)
}

/// Smoothing, radii and weights in one call.
pub fn certify<O: BlackBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    cfg: &SmoothingConfig,
    rng: &RandomSource,
) -> Result<(CertifiedRadiusMap, WeightMap)> {
    let smoothed = smoothed_probs(oracle, x, cfg, rng)?;
    let cr = pixel_certified_radius(&smoothed, cfg.sigma)?;
    let w = pixel_weights(&cr, cfg.a, cfg.b);
    Ok((cr, w))
}
