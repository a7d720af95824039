use rand::seq::SliceRandom;
use rand::Rng;

use super::data::Sample;
use super::net::{ParamGrads, ToySegModel};
use crate::error::{Error, Result};
use crate::projections::clip_image;
use crate::rng::RandomSource;
use crate::smoothing::SmoothingConfig;
use crate::tensor::{ImageTensor, NormKind};
use crate::whitebox::{cr_pgd, WhiteBoxAttackConfig};

/// Epoch losses above this abort training.
pub const DIVERGENCE_LOSS: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 0.05,
            batch_size: 8,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(
                "need lr > 0, batch size >= 1 and momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

struct Sgd {
    velocity: ParamGrads,
    lr: f64,
    momentum: f64,
}

impl Sgd {
    fn new(model: &ToySegModel, cfg: &TrainConfig) -> Self {
        Self {
            velocity: ParamGrads::zeros(model.config()),
            lr: cfg.lr,
            momentum: cfg.momentum,
        }
    }

    fn step(&mut self, model: &mut ToySegModel, grad: &ParamGrads) {
        let v = &mut self.velocity;
        v.w1 *= self.momentum;
        v.b1 *= self.momentum;
        v.w2 *= self.momentum;
        v.b2 *= self.momentum;
        v.add_assign(grad);
        model.apply_update(v, self.lr);
    }
}

/// Runs one epoch, calling `prepare` to produce the image each sample is
/// trained on. Returns the mean loss.
fn epoch<F>(
    model: &mut ToySegModel,
    data: &[Sample],
    cfg: &TrainConfig,
    opt: &mut Sgd,
    rng: &RandomSource,
    mut prepare: F,
) -> Result<f64>
where
    F: FnMut(&ToySegModel, &Sample, &RandomSource) -> Result<ImageTensor>,
{
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng.derive("shuffle").rng());
    let mut total = 0.0;
    for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
        let mut grad = ParamGrads::zeros(model.config());
        let batch_rng = rng.split(b as u64);
        for &i in batch {
            let s = &data[i];
            let input = prepare(model, s, &batch_rng.split(i as u64))?;
            let back = model.backward(&input, &s.labels, None, false, true)?;
            total += guard(back.loss)?;
            grad.add_assign(&back.params.expect("requested"));
        }
        let scale = 1.0 / batch.len() as f64;
        grad.w1 *= scale;
        grad.b1 *= scale;
        grad.w2 *= scale;
        grad.b2 *= scale;
        opt.step(model, &grad);
    }
    guard(total / data.len() as f64)
}

fn guard(loss: f64) -> Result<f64> {
    if loss.is_finite() && loss <= DIVERGENCE_LOSS {
        Ok(loss)
    } else {
        Err(Error::Diverged { loss })
    }
}

/// Mini-batch SGD with momentum on the mean per-pixel cross-entropy. The
/// trained parameters are rounded to checkpoint precision.
pub fn train(
    model: &mut ToySegModel,
    data: &[Sample],
    cfg: &TrainConfig,
    rng: &RandomSource,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    cfg.validate()?;
    let mut opt = Sgd::new(model, cfg);
    let mut report = TrainReport::default();
    for e in 0..cfg.epochs {
        let loss = epoch(model, data, cfg, &mut opt, &rng.split(e as u64), |_, s, _| {
            Ok(s.image.clone())
        })?;
        report.epoch_losses.push(loss);
    }
    if let Some(&last) = report.epoch_losses.last() {
        model.final_loss = Some(last);
        model.snap_to_storage();
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastAdtConfig {
    /// linf training budget.
    pub eps: f64,
    /// Size of the signed-gradient step from the random start.
    pub alpha: f64,
    pub train: TrainConfig,
    /// Generate training perturbations with guided PGD instead of one
    /// signed step.
    pub cr_flag: bool,
    pub smoothing: SmoothingConfig,
    /// Inner iterations of the guided PGD.
    pub inner_steps: usize,
}

impl FastAdtConfig {
    /// Step `alpha = ε/2`. Steps of `0.75ε` and up collapse the default toy
    /// model to a constant background predictor.
    pub fn new(eps: f64, train: TrainConfig) -> Self {
        Self {
            eps,
            alpha: 0.5 * eps,
            train,
            cr_flag: false,
            smoothing: SmoothingConfig::default(),
            inner_steps: 5,
        }
    }
}

/// FGSM adversarial training from a uniform random start: each sample is
/// perturbed by `δ ~ U(−ε, ε)`, one signed-gradient step of size `alpha`,
/// clipped back to `[−ε, ε]`, and the parameters take an SGD step on the
/// perturbed image. With `cr_flag` the perturbation comes from guided PGD
/// (`inner_steps` iterations, weights refreshed once per batch).
pub fn fast_adt(
    model: &mut ToySegModel,
    data: &[Sample],
    cfg: &FastAdtConfig,
    rng: &RandomSource,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(cfg.eps >= 0.0) || !(cfg.alpha >= 0.0) {
        return Err(Error::InvalidArgument("FastADT needs eps >= 0 and alpha >= 0".into()));
    }
    cfg.train.validate()?;
    let inner = (cfg.cr_flag && cfg.eps > 0.0).then(|| {
        let smoothing = SmoothingConfig {
            interval: cfg.inner_steps.max(1),
            ..cfg.smoothing
        };
        WhiteBoxAttackConfig::new(NormKind::Linf, cfg.eps, cfg.inner_steps.max(1)).with_cr(smoothing)
    });
    let mut opt = Sgd::new(model, &cfg.train);
    let mut report = TrainReport::default();
    for e in 0..cfg.train.epochs {
        let loss = epoch(
            model,
            data,
            &cfg.train,
            &mut opt,
            &rng.split(e as u64),
            |m, s, r| adversarial_input(m, s, cfg, inner.as_ref(), r),
        )?;
        report.epoch_losses.push(loss);
    }
    if let Some(&last) = report.epoch_losses.last() {
        model.final_loss = Some(last);
        model.snap_to_storage();
    }
    Ok(report)
}

fn adversarial_input(
    model: &ToySegModel,
    s: &Sample,
    cfg: &FastAdtConfig,
    inner: Option<&WhiteBoxAttackConfig>,
    rng: &RandomSource,
) -> Result<ImageTensor> {
    if cfg.eps == 0.0 {
        return Ok(s.image.clone());
    }
    if let Some(inner) = inner {
        let run = cr_pgd(model, &s.image, &s.labels, inner, rng)?;
        return clip_image(&s.image, run.perturbation.data());
    }
    let mut r = rng.rng();
    let mut delta: Vec<f64> = (0..s.image.len()).map(|_| r.random_range(-cfg.eps..=cfg.eps)).collect();
    let g = model.input_gradient(&clip_image(&s.image, &delta)?, &s.labels, None)?;
    for (d, gi) in delta.iter_mut().zip(&g.gradient) {
        let sign = if *gi > 0.0 { 1.0 } else if *gi < 0.0 { -1.0 } else { 0.0 };
        *d = (*d + cfg.alpha * sign).clamp(-cfg.eps, cfg.eps);
    }
    clip_image(&s.image, &delta)
}
