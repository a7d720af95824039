//! Zeroth-order gradient estimators driven purely by loss evaluations.
//!
//! Every estimator takes the loss as a closure, so the same code serves the
//! black-box attacks (where each call is a model query) and synthetic test
//! objectives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projections::{sample_unit_ball_l2, sample_unit_sphere_l2};
use crate::tensor::{lp_norm_unchecked, NormKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    Zoo,
    Opge,
    Tpge,
    CrTpge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub vector: Vec<f64>,
    pub kind: EstimatorKind,
    /// Loss evaluations spent on this estimate.
    pub queries_used: u64,
    pub gamma: f64,
    /// Observed losses, in evaluation order.
    pub probes: Vec<f64>,
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        lp_norm_unchecked(&self.vector, NormKind::L2)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("smoothing radius gamma must be > 0, got {gamma}")))
    }
}

fn offset(delta: &[f64], dir: &[f64], scale: f64) -> Vec<f64> {
    delta.iter().zip(dir).map(|(d, u)| d + scale * u).collect()
}

/// Coordinate-wise central differences; `2N` evaluations.
pub fn zoo_estimate<F>(mut loss: F, delta: &[f64], gamma: f64) -> Result<GradientEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_gamma(gamma)?;
    let mut vector = Vec::with_capacity(delta.len());
    let mut probes = Vec::with_capacity(2 * delta.len());
    let mut point = delta.to_vec();
    for i in 0..delta.len() {
        point[i] = delta[i] + gamma;
        let up = loss(&point)?;
        point[i] = delta[i] - gamma;
        let down = loss(&point)?;
        point[i] = delta[i];
        vector.push((up - down) / (2.0 * gamma));
        probes.extend([up, down]);
    }
    Ok(GradientEstimate {
        vector,
        kind: EstimatorKind::Zoo,
        queries_used: 2 * delta.len() as u64,
        gamma,
        probes,
    })
}

/// `(N/γ)·L(δ + γu)·u` along a direction `u` supplied by the caller.
pub fn opge_along<F>(mut loss: F, delta: &[f64], gamma: f64, u: &[f64]) -> Result<GradientEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_gamma(gamma)?;
    let n = delta.len() as f64;
    let l = loss(&offset(delta, u, gamma))?;
    let c = n / gamma * l;
    Ok(GradientEstimate {
        vector: u.iter().map(|v| c * v).collect(),
        kind: EstimatorKind::Opge,
        queries_used: 1,
        gamma,
        probes: vec![l],
    })
}

/// One-point estimator with `u` uniform on the unit l2 sphere; 1 evaluation.
pub fn opge_estimate<F, R>(loss: F, delta: &[f64], gamma: f64, rng: &mut R) -> Result<GradientEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    check_gamma(gamma)?;
    let u = sample_unit_sphere_l2(rng, delta.len());
    opge_along(loss, delta, gamma, &u)
}

/// `(N/(2γ))·(L(δ + γu) − L(δ − γu))·u` along a caller-supplied `u`.
pub fn tpge_along<F>(mut loss: F, delta: &[f64], gamma: f64, u: &[f64]) -> Result<GradientEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_gamma(gamma)?;
    let n = delta.len() as f64;
    let plus = loss(&offset(delta, u, gamma))?;
    let minus = loss(&offset(delta, u, -gamma))?;
    let c = n / (2.0 * gamma) * (plus - minus);
    Ok(GradientEstimate {
        vector: u.iter().map(|v| c * v).collect(),
        kind: EstimatorKind::Tpge,
        queries_used: 2,
        gamma,
        probes: vec![plus, minus],
    })
}

/// Two-point estimator with `u` uniform on the unit l2 sphere; 2 evaluations.
pub fn tpge_estimate<F, R>(loss: F, delta: &[f64], gamma: f64, rng: &mut R) -> Result<GradientEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    check_gamma(gamma)?;
    let u = sample_unit_sphere_l2(rng, delta.len());
    tpge_along(loss, delta, gamma, &u)
}

/// Two-point estimator on a certified-radius-weighted loss. Identical
/// arithmetic to [`tpge_estimate`]; refreshing the weights is the caller's
/// business.
pub fn cr_tpge_estimate<F, R>(loss: F, delta: &[f64], gamma: f64, rng: &mut R) -> Result<GradientEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    let mut est = tpge_estimate(loss, delta, gamma, rng)?;
    est.kind = EstimatorKind::CrTpge;
    Ok(est)
}

/// Monte-Carlo value of the ball-smoothed loss `E_v[L(δ + γv)]`, `v`
/// uniform in the unit l2 ball.
pub fn smoothed_loss_mc<F, R>(
    mut loss: F,
    delta: &[f64],
    gamma: f64,
    samples: usize,
    rng: &mut R,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
    }
    if gamma == 0.0 {
        return loss(delta);
    }
    let mut total = 0.0;
    for _ in 0..samples {
        let v = sample_unit_ball_l2(rng, delta.len());
        total += loss(&offset(delta, &v, gamma))?;
    }
    Ok(total / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn dot(c: &[f64], d: &[f64]) -> f64 {
        c.iter().zip(d).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn zoo_is_exact_on_quadratics_and_linears() {
        let est = zoo_estimate(|d| Ok(d.iter().map(|v| v * v).sum()), &[1.0, 2.0], 0.25).unwrap();
        assert_eq!(est.vector, vec![2.0, 4.0]);
        assert_eq!(est.queries_used, 4);
        let c = [0.5, -2.0, 3.0];
        let est = zoo_estimate(|d| Ok(dot(&c, d)), &[0.1, 0.2, 0.3], 0.5).unwrap();
        for (g, c) in est.vector.iter().zip(c) {
            assert!((g - c).abs() < 1e-12);
        }
        let est = zoo_estimate(|_| Ok(7.0), &[0.0; 4], 0.1).unwrap();
        assert!(est.vector.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gamma_must_be_positive() {
        let mut rng = RandomSource::new(0).rng();
        assert!(zoo_estimate(|_| Ok(0.0), &[0.0], 0.0).is_err());
        assert!(opge_estimate(|_| Ok(0.0), &[0.0], -1.0, &mut rng).is_err());
        assert!(tpge_estimate(|_| Ok(0.0), &[0.0], 0.0, &mut rng).is_err());
    }

    #[test]
    fn opge_hand_value() {
        let est = opge_along(|d| Ok(d[0]), &[0.0, 0.0], 0.1, &[1.0, 0.0]).unwrap();
        assert!((est.vector[0] - 2.0).abs() < 1e-12);
        assert_eq!(est.vector[1], 0.0);
        assert_eq!(est.queries_used, 1);
        let mut rng = RandomSource::new(1).rng();
        let zero = opge_estimate(|_| Ok(0.0), &[0.3, 0.1], 0.1, &mut rng).unwrap();
        assert!(zero.vector.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn tpge_hand_values() {
        let c = [1.0, 0.0];
        let orth = tpge_along(|d| Ok(dot(&c, d)), &[0.0, 0.0], 0.1, &[0.0, 1.0]).unwrap();
        assert_eq!(orth.vector, vec![0.0, 0.0]);
        let aligned = tpge_along(|d| Ok(dot(&c, d)), &[0.0, 0.0], 0.1, &[1.0, 0.0]).unwrap();
        assert!((aligned.vector[0] - 2.0).abs() < 1e-12);
        assert_eq!(aligned.queries_used, 2);
    }

    #[test]
    fn cr_variant_matches_plain_arithmetic() {
        let c = [0.3, -0.7, 0.2];
        let a = tpge_estimate(|d| Ok(dot(&c, d)), &[0.1; 3], 0.01, &mut RandomSource::new(4).rng()).unwrap();
        let b = cr_tpge_estimate(|d| Ok(dot(&c, d)), &[0.1; 3], 0.01, &mut RandomSource::new(4).rng()).unwrap();
        assert_eq!(a.vector, b.vector);
        assert_eq!(b.kind, EstimatorKind::CrTpge);
        let z = cr_tpge_estimate(|d| Ok(0.0 * dot(&c, d)), &[0.1; 3], 0.01, &mut RandomSource::new(4).rng())
            .unwrap();
        assert!(z.vector.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn smoothed_loss_degenerate_cases() {
        let mut rng = RandomSource::new(2).rng();
        assert_eq!(smoothed_loss_mc(|_| Ok(3.5), &[0.0; 3], 0.5, 100, &mut rng).unwrap(), 3.5);
        let f = |d: &[f64]| Ok(d.iter().map(|v| v.abs()).sum::<f64>());
        assert_eq!(smoothed_loss_mc(f, &[0.25, -1.0], 0.0, 10, &mut rng).unwrap(), 1.25);
        assert!(smoothed_loss_mc(f, &[0.0], 0.1, 0, &mut rng).is_err());
    }
}
