//! Model access: black-box (probabilities only) and white-box (loss
//! gradients), plus exact query accounting.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::projections::clip_image;
use crate::smoothing::WeightMap;
use crate::tensor::{ImageShape, ImageTensor, LabelMap, ProbMap};

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Probability-only access to a segmentation model. Implementations must be
/// safe to call concurrently on distinct images.
pub trait BlackBoxOracle: Sync {
    fn image_shape(&self) -> ImageShape;
    fn num_classes(&self) -> usize;
    fn predict(&self, x: &ImageTensor) -> Result<ProbMap>;
}

#[derive(Debug, Clone)]
pub struct LossGradient {
    pub loss: f64,
    /// `∂loss/∂x`, same layout as the image.
    pub gradient: Vec<f64>,
}

/// Full model access. Gradient calls never count as black-box queries.
pub trait WhiteBoxOracle: BlackBoxOracle {
    /// Mean (optionally weighted) per-pixel cross-entropy of the prediction
    /// at `x` against `y`, and its gradient with respect to the input.
    fn loss_gradient(
        &self,
        x: &ImageTensor,
        y: &LabelMap,
        weights: Option<&WeightMap>,
    ) -> Result<LossGradient>;
}

impl<T: BlackBoxOracle + ?Sized> BlackBoxOracle for &T {
    fn image_shape(&self) -> ImageShape {
        (**self).image_shape()
    }

    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn predict(&self, x: &ImageTensor) -> Result<ProbMap> {
        (**self).predict(x)
    }
}

impl<T: WhiteBoxOracle + ?Sized> WhiteBoxOracle for &T {
    fn loss_gradient(
        &self,
        x: &ImageTensor,
        y: &LabelMap,
        weights: Option<&WeightMap>,
    ) -> Result<LossGradient> {
        (**self).loss_gradient(x, y, weights)
    }
}

/// Monotone query count with an optional hard limit.
#[derive(Debug, Default)]
pub struct QueryCounter {
    count: AtomicU64,
    limit: Option<u64>,
}

impl QueryCounter {
    pub fn new(limit: Option<u64>) -> Self {
        Self {
            count: AtomicU64::new(0),
            limit,
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }

    pub fn limit(&self) -> Option<u64> {
        self.limit
    }

    pub fn remaining(&self) -> Option<u64> {
        self.limit.map(|l| l.saturating_sub(self.count()))
    }

    /// Claims one query, failing without incrementing once the limit is hit.
    pub fn acquire(&self) -> Result<u64> {
        match self.limit {
            None => Ok(self.count.fetch_add(1, Ordering::SeqCst) + 1),
            Some(limit) => self
                .count
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |c| (c < limit).then_some(c + 1))
                .map(|prev| prev + 1)
                .map_err(|_| Error::BudgetExhausted { limit }),
        }
    }
}

/// An oracle whose predictions are metered by a [`QueryCounter`].
#[derive(Debug)]
pub struct Counted<O> {
    inner: O,
    counter: QueryCounter,
}

pub fn with_counter<O: BlackBoxOracle>(oracle: O, limit: Option<u64>) -> Counted<O> {
    Counted {
        inner: oracle,
        counter: QueryCounter::new(limit),
    }
}

impl<O> Counted<O> {
    pub fn queries(&self) -> u64 {
        self.counter.count()
    }

    pub fn counter(&self) -> &QueryCounter {
        &self.counter
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: BlackBoxOracle> BlackBoxOracle for Counted<O> {
    fn image_shape(&self) -> ImageShape {
        self.inner.image_shape()
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn predict(&self, x: &ImageTensor) -> Result<ProbMap> {
        self.counter.acquire()?;
        self.inner.predict(x)
    }
}

impl<O: WhiteBoxOracle> WhiteBoxOracle for Counted<O> {
    fn loss_gradient(
        &self,
        x: &ImageTensor,
        y: &LabelMap,
        weights: Option<&WeightMap>,
    ) -> Result<LossGradient> {
        self.inner.loss_gradient(x, y, weights)
    }
}

/// Per-pixel cross-entropy `−ln max(p_{n,y_n}, LOG_FLOOR)`.
pub fn pixel_cross_entropy(probs: &ProbMap, y: &LabelMap) -> Result<Vec<f64>> {
    probs.check_labels(y)?;
    Ok(probs
        .iter_pixels()
        .zip(y.labels())
        .map(|(row, &label)| -row[label as usize].max(LOG_FLOOR).ln())
        .collect())
}

/// Mean per-pixel cross-entropy, optionally weighted per pixel.
pub fn mean_cross_entropy(probs: &ProbMap, y: &LabelMap, weights: Option<&WeightMap>) -> Result<f64> {
    let ce = pixel_cross_entropy(probs, y)?;
    let total: f64 = match weights {
        None => ce.iter().sum(),
        Some(w) => {
            if w.height() != probs.height() || w.width() != probs.width() {
                return Err(crate::error::shape_err(
                    format!("{}x{}", probs.height(), probs.width()),
                    format!("{}x{}", w.height(), w.width()),
                ));
            }
            ce.iter().zip(w.weights()).map(|(c, w)| c * w).sum()
        }
    };
    Ok(total / ce.len() as f64)
}

/// Attack objective at `clip(x + δ)`. Costs exactly one query.
pub fn attack_loss<O: BlackBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    delta: &[f64],
    y: &LabelMap,
    weights: Option<&WeightMap>,
) -> Result<f64> {
    let probs = oracle.predict(&clip_image(x, delta)?)?;
    mean_cross_entropy(&probs, y, weights)
}
