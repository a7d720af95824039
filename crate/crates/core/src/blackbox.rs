//! Projected bandit gradient descent (PBGD) and its certified-radius-guided
//! variant, with exact query accounting.
//!
//! Each round draws a direction `u` on the unit sphere, queries the model at
//! `clip(x + δ ± γu)`, forms the two-point estimate from the two scalar
//! losses and takes a projected ascent step. The guided variant additionally
//! spends `M` queries every `INT` rounds (on rounds `1, INT+1, 2·INT+1, …`)
//! to refresh its pixel weights, so a run of `T` rounds costs
//! `2T + M·⌈T/INT⌉` queries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradest::{tpge_along, GradientEstimate};
use crate::oracle::{attack_loss, with_counter, BlackBoxOracle};
use crate::projections::{clip_image, project, sample_unit_sphere_l2};
use crate::rng::RandomSource;
use crate::smoothing::{certify, SmoothingConfig, WeightMap};
use crate::tensor::{ImageTensor, LabelMap, NormKind, Perturbation};

/// Default finite-difference radius, in image-intensity units.
pub const DEFAULT_GAMMA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxAttackConfig {
    pub norm: NormKind,
    pub eps: f64,
    pub rounds: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub cr_flag: bool,
    pub smoothing: SmoothingConfig,
    pub query_limit: Option<u64>,
    /// Evaluate `L(δ)` every this many rounds (one extra query each) and
    /// return the best such `δ` instead of the last iterate.
    pub bookkeeping: Option<usize>,
}

impl BlackBoxAttackConfig {
    pub fn new(norm: NormKind, eps: f64, rounds: usize, alpha: f64) -> Self {
        let smoothing = SmoothingConfig::default();
        Self {
            norm,
            eps,
            rounds,
            alpha,
            gamma: DEFAULT_GAMMA,
            cr_flag: false,
            smoothing: SmoothingConfig {
                interval: 2 * smoothing.samples,
                ..smoothing
            },
            query_limit: None,
            bookkeeping: None,
        }
    }

    pub fn with_cr(mut self, smoothing: SmoothingConfig) -> Self {
        self.cr_flag = true;
        self.smoothing = smoothing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("attack needs at least one round".into()));
        }
        if !(self.alpha > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument("alpha and gamma must be > 0".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("budget must be >= 0, got {}", self.eps)));
        }
        if self.bookkeeping == Some(0) {
            return Err(Error::InvalidArgument("bookkeeping interval must be >= 1".into()));
        }
        if self.cr_flag {
            self.smoothing.validate()?;
        }
        Ok(())
    }

    /// Queries a complete run makes.
    pub fn expected_queries(&self) -> u64 {
        let t = self.rounds as u64;
        let mut q = 2 * t;
        if self.cr_flag {
            q += self.smoothing.samples as u64 * t.div_ceil(self.smoothing.interval as u64);
        }
        if let Some(k) = self.bookkeeping {
            q += t / k as u64;
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub loss_plus: f64,
    pub loss_minus: f64,
    pub queries_cum: u64,
    pub grad_norm: f64,
    /// Best objective value seen so far.
    pub best_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretTrace {
    pub records: Vec<RoundRecord>,
    pub best_loss: f64,
}

impl RegretTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,loss_plus,loss_minus,queries_cum,grad_norm\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.round, r.loss_plus, r.loss_minus, r.queries_cum, r.grad_norm
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BlackBoxRun {
    /// The answer: the best bookkept iterate when bookkeeping is on,
    /// otherwise the last iterate.
    pub perturbation: Perturbation,
    pub last_iterate: Perturbation,
    pub trace: RegretTrace,
    pub queries: u64,
    /// The query limit stopped the run early.
    pub exhausted: bool,
}

fn run<O: BlackBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    y: &LabelMap,
    cfg: &BlackBoxAttackConfig,
    rng: &RandomSource,
) -> Result<BlackBoxRun> {
    cfg.validate()?;
    if x.shape() != oracle.image_shape() {
        return Err(crate::error::shape_err(oracle.image_shape(), x.shape()));
    }
    let counted = with_counter(oracle, cfg.query_limit);
    let n = x.len();
    let mut delta = vec![0.0; n];
    let mut weights: Option<WeightMap> = None;
    let mut trace = RegretTrace {
        records: Vec::with_capacity(cfg.rounds),
        best_loss: f64::NEG_INFINITY,
    };
    let mut best_delta = delta.clone();
    let mut exhausted = false;

    for t in 0..cfg.rounds {
        let round_rng = rng.split(t as u64);
        let step = (|| -> Result<GradientEstimate> {
            if cfg.cr_flag && t % cfg.smoothing.interval == 0 {
                let xt = clip_image(x, &delta)?;
                let (_, w) = certify(&counted, &xt, &cfg.smoothing, &round_rng.derive("smoothing"))?;
                weights = Some(w);
            }
            let u = sample_unit_sphere_l2(&mut round_rng.rng(), n);
            let w = weights.as_ref();
            tpge_along(|d| attack_loss(&counted, x, d, y, w), &delta, cfg.gamma, &u)
        })();
        let est = match step {
            Ok(est) => est,
            Err(Error::BudgetExhausted { .. }) => {
                exhausted = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let (plus, minus) = (est.probes[0], est.probes[1]);
        if cfg.bookkeeping.is_none() {
            // symmetric probes average to L(δ) up to O(γ²)
            let centre = 0.5 * (plus + minus);
            if centre > trace.best_loss {
                trace.best_loss = centre;
            }
        }
        let stepped: Vec<f64> = delta.iter().zip(&est.vector).map(|(d, g)| d + cfg.alpha * g).collect();
        delta = project(&stepped, cfg.norm, cfg.eps)?;

        if let Some(k) = cfg.bookkeeping {
            if (t + 1) % k == 0 {
                match attack_loss(&counted, x, &delta, y, weights.as_ref()) {
                    Ok(l) => {
                        if l > trace.best_loss {
                            trace.best_loss = l;
                            best_delta.clone_from(&delta);
                        }
                    }
                    Err(Error::BudgetExhausted { .. }) => exhausted = true,
                    Err(e) => return Err(e),
                }
            }
        }
        trace.records.push(RoundRecord {
            round: t + 1,
            loss_plus: plus,
            loss_minus: minus,
            queries_cum: counted.queries(),
            grad_norm: est.norm(),
            best_loss: trace.best_loss,
        });
        if exhausted {
            break;
        }
    }

    let last_iterate = Perturbation::new(delta, cfg.norm, cfg.eps)?;
    let perturbation = if cfg.bookkeeping.is_some() && trace.best_loss.is_finite() {
        Perturbation::new(best_delta, cfg.norm, cfg.eps)?
    } else {
        last_iterate.clone()
    };
    Ok(BlackBoxRun {
        perturbation,
        last_iterate,
        trace,
        queries: counted.queries(),
        exhausted,
    })
}

/// Plain PBGD on the mean cross-entropy; `2T` queries.
pub fn pbgd<O: BlackBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    y: &LabelMap,
    cfg: &BlackBoxAttackConfig,
    rng: &RandomSource,
) -> Result<BlackBoxRun> {
    let plain = BlackBoxAttackConfig {
        cr_flag: false,
        ..*cfg
    };
    run(oracle, x, y, &plain, rng)
}

/// PBGD on the certified-radius-weighted loss; `2T + M·⌈T/INT⌉` queries.
pub fn cr_pbgd<O: BlackBoxOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    y: &LabelMap,
    cfg: &BlackBoxAttackConfig,
    rng: &RandomSource,
) -> Result<BlackBoxRun> {
    let guided = BlackBoxAttackConfig {
        cr_flag: true,
        ..*cfg
    };
    run(oracle, x, y, &guided, rng)
}

/// Rounds for plain PBGD that spend the same queries as a guided run of
/// `rounds` rounds: `T + M·⌈T/INT⌉/2`, which is `1.25T` at `INT = 2M`.
pub fn matched_pbgd_rounds(rounds: usize, smoothing: &SmoothingConfig) -> usize {
    rounds + (smoothing.samples * rounds.div_ceil(smoothing.interval)) / 2
}
