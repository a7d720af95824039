//! Gradient-based attacks: FGSM, PGD, DAG, and their certified-radius-guided
//! variants.
//!
//! Gradients are always taken at the feasible image `clip(x + δ)`; the
//! budget projection then acts on `δ` alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::argmax_labels;
use crate::oracle::WhiteBoxOracle;
use crate::projections::{clip_image, project};
use crate::rng::RandomSource;
use crate::smoothing::{certify, SmoothingConfig, WeightMap};
use crate::tensor::{lp_norm_unchecked, ImageTensor, LabelMap, NormKind, Perturbation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhiteBoxAttackConfig {
    pub norm: NormKind,
    pub eps: f64,
    pub steps: usize,
    pub alpha: f64,
    pub cr_flag: bool,
    pub smoothing: SmoothingConfig,
}

/// Step size used by default: `2.5·ε/T` for l1 and l2, `ε/T` for linf.
pub fn default_alpha(norm: NormKind, eps: f64, steps: usize) -> f64 {
    let t = steps.max(1) as f64;
    match norm {
        NormKind::L1 | NormKind::L2 => 2.5 * eps / t,
        NormKind::Linf => eps / t,
    }
}

impl WhiteBoxAttackConfig {
    pub fn new(norm: NormKind, eps: f64, steps: usize) -> Self {
        Self {
            norm,
            eps,
            steps,
            alpha: default_alpha(norm, eps, steps),
            cr_flag: false,
            smoothing: SmoothingConfig::default(),
        }
    }

    pub fn with_cr(mut self, smoothing: SmoothingConfig) -> Self {
        self.cr_flag = true;
        self.smoothing = smoothing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("attack needs at least one step".into()));
        }
        // A zero budget has nothing to step through, so `alpha = 0` is allowed there.
        if !(self.alpha > 0.0 || (self.alpha == 0.0 && self.eps == 0.0)) {
            return Err(Error::InvalidArgument(format!("step size must be > 0, got {}", self.alpha)));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("budget must be >= 0, got {}", self.eps)));
        }
        if self.cr_flag {
            self.smoothing.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub loss: f64,
    /// Model predictions spent on smoothing so far.
    pub queries: u64,
}

#[derive(Debug, Clone)]
pub struct WhiteBoxRun {
    pub perturbation: Perturbation,
    pub trace: Vec<IterRecord>,
}

/// Normalised ascent direction; `None` when the gradient vanishes.
fn step_direction(g: &[f64], norm: NormKind) -> Option<Vec<f64>> {
    match norm {
        NormKind::Linf => {
            if g.iter().all(|&v| v == 0.0) {
                return None;
            }
            Some(
                g.iter()
                    .map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
                    .collect(),
            )
        }
        NormKind::L1 | NormKind::L2 => {
            let n = lp_norm_unchecked(g, norm);
            (n > 0.0 && n.is_finite()).then(|| g.iter().map(|v| v / n).collect())
        }
    }
}

fn run_pgd<O: WhiteBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    y: &LabelMap,
    cfg: &WhiteBoxAttackConfig,
    rng: Option<&RandomSource>,
    init: Option<Vec<f64>>,
) -> Result<WhiteBoxRun> {
    cfg.validate()?;
    let n = x.len();
    let mut delta = match init {
        Some(d) => project(&d, cfg.norm, cfg.eps)?,
        None => vec![0.0; n],
    };
    let mut weights: Option<WeightMap> = None;
    let mut queries = 0u64;
    let mut trace = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let xt = clip_image(x, &delta)?;
        if cfg.cr_flag && t % cfg.smoothing.interval == 0 {
            let rng = rng.ok_or_else(|| Error::InvalidArgument("guided attack needs a random source".into()))?;
            let (_, w) = certify(oracle, &xt, &cfg.smoothing, &rng.split(t as u64))?;
            queries += cfg.smoothing.samples as u64;
            weights = Some(w);
        }
        let lg = oracle.loss_gradient(&xt, y, weights.as_ref())?;
        trace.push(IterRecord {
            iter: t,
            loss: lg.loss,
            queries,
        });
        if let Some(dir) = step_direction(&lg.gradient, cfg.norm) {
            let stepped: Vec<f64> = delta.iter().zip(&dir).map(|(d, s)| d + cfg.alpha * s).collect();
            delta = project(&stepped, cfg.norm, cfg.eps)?;
        }
    }
    Ok(WhiteBoxRun {
        perturbation: Perturbation::new(delta, cfg.norm, cfg.eps)?,
        trace,
    })
}

/// Projected gradient ascent on the mean cross-entropy.
pub fn pgd<O: WhiteBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    y: &LabelMap,
    cfg: &WhiteBoxAttackConfig,
) -> Result<WhiteBoxRun> {
    let plain = WhiteBoxAttackConfig {
        cr_flag: false,
        ..*cfg
    };
    run_pgd(oracle, x, y, &plain, None, None)
}

/// PGD started from `init` (projected into the budget first).
pub fn pgd_from<O: WhiteBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    y: &LabelMap,
    cfg: &WhiteBoxAttackConfig,
    rng: Option<&RandomSource>,
    init: Vec<f64>,
) -> Result<WhiteBoxRun> {
    run_pgd(oracle, x, y, cfg, rng, Some(init))
}

/// One full-budget step.
pub fn fgsm<O: WhiteBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    y: &LabelMap,
    norm: NormKind,
    eps: f64,
) -> Result<WhiteBoxRun> {
    if eps == 0.0 {
        return Ok(WhiteBoxRun {
            perturbation: Perturbation::zeros(x.len(), norm, 0.0)?,
            trace: Vec::new(),
        });
    }
    let cfg = WhiteBoxAttackConfig {
        norm,
        eps,
        steps: 1,
        alpha: eps,
        cr_flag: false,
        smoothing: SmoothingConfig::default(),
    };
    run_pgd(oracle, x, y, &cfg, None, None)
}

/// PGD on the certified-radius-weighted loss. Weights are refreshed at
/// `t = 0` and every `smoothing.interval` iterations, reused in between.
pub fn cr_pgd<O: WhiteBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    y: &LabelMap,
    cfg: &WhiteBoxAttackConfig,
    rng: &RandomSource,
) -> Result<WhiteBoxRun> {
    let guided = WhiteBoxAttackConfig {
        cr_flag: true,
        ..*cfg
    };
    run_pgd(oracle, x, y, &guided, Some(rng), None)
}

/// FGSM on the certified-radius-weighted loss; weights computed once at `x`.
pub fn cr_fgsm<O: WhiteBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    y: &LabelMap,
    norm: NormKind,
    eps: f64,
    smoothing: &SmoothingConfig,
    rng: &RandomSource,
) -> Result<WhiteBoxRun> {
    if eps == 0.0 {
        return Ok(WhiteBoxRun {
            perturbation: Perturbation::zeros(x.len(), norm, 0.0)?,
            trace: Vec::new(),
        });
    }
    let cfg = WhiteBoxAttackConfig {
        norm,
        eps,
        steps: 1,
        alpha: eps,
        cr_flag: true,
        smoothing: *smoothing,
    };
    run_pgd(oracle, x, y, &cfg, Some(rng), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DagConfig {
    pub eps: f64,
    pub steps: usize,
    /// linf size of each normalised step.
    pub step_size: f64,
}

impl DagConfig {
    /// Step of 0.5 intensity levels on a 0–255 scale.
    pub fn new(eps: f64, steps: usize) -> Self {
        Self {
            eps,
            steps,
            step_size: 0.5 / 255.0,
        }
    }
}

/// Dense adversary generation (linf only).
///
/// Each pixel gets a fixed adversarial target, its strongest wrong class at
/// the clean image. Per step, the direction is the difference of the
/// cross-entropy gradients against the true and target labels, which equals
/// `∇(z_target − z_true)`, summed over pixels still classified correctly.
/// The direction is scaled to linf norm `step_size`, accumulated, and the
/// accumulated perturbation clipped to `[−ε, ε]`. Stops early once no pixel
/// is left to flip.
pub fn dag<O: WhiteBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    y: &LabelMap,
    cfg: &DagConfig,
) -> Result<WhiteBoxRun> {
    if !(cfg.eps >= 0.0) || !(cfg.step_size > 0.0) {
        return Err(Error::InvalidArgument("DAG needs eps >= 0 and a positive step".into()));
    }
    let mut delta = vec![0.0; x.len()];
    let mut trace = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 || cfg.eps == 0.0 {
        return Ok(WhiteBoxRun {
            perturbation: Perturbation::new(delta, NormKind::Linf, cfg.eps)?,
            trace,
        });
    }
    let clean = oracle.predict(x)?;
    clean.check_labels(y)?;
    let targets: Vec<u32> = clean
        .iter_pixels()
        .zip(y.labels())
        .map(|(row, &label)| {
            (0..row.len())
                .filter(|&c| c != label as usize)
                .fold(None::<usize>, |best, c| match best {
                    Some(b) if row[b] >= row[c] => Some(b),
                    _ => Some(c),
                })
                .expect("at least two classes") as u32
        })
        .collect();
    let targets = LabelMap::new(y.height(), y.width(), targets)?;
    for t in 0..cfg.steps {
        let xt = clip_image(x, &delta)?;
        let pred = argmax_labels(&oracle.predict(&xt)?);
        let active: Vec<f64> = pred
            .labels()
            .iter()
            .zip(y.labels())
            .map(|(p, l)| if p == l { 1.0 } else { 0.0 })
            .collect();
        if active.iter().all(|&a| a == 0.0) {
            break;
        }
        let mask = WeightMap::new(y.height(), y.width(), active)?;
        let toward_true = oracle.loss_gradient(&xt, y, Some(&mask))?;
        let toward_target = oracle.loss_gradient(&xt, &targets, Some(&mask))?;
        trace.push(IterRecord {
            iter: t,
            loss: toward_true.loss,
            queries: 0,
        });
        let diff: Vec<f64> = toward_true
            .gradient
            .iter()
            .zip(&toward_target.gradient)
            .map(|(a, b)| a - b)
            .collect();
        let size = lp_norm_unchecked(&diff, NormKind::Linf);
        if size == 0.0 {
            break;
        }
        let scale = cfg.step_size / size;
        for (d, r) in delta.iter_mut().zip(&diff) {
            *d = (*d + scale * r).clamp(-cfg.eps, cfg.eps);
        }
    }
    Ok(WhiteBoxRun {
        perturbation: Perturbation::new(delta, NormKind::Linf, cfg.eps)?,
        trace,
    })
}
