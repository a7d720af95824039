//! Euclidean projections onto lp-balls, unit-sphere sampling, and image
//! feasibility clamping.
//!
//! Budget projection acts on `δ` alone. Keeping `x + δ` inside `[0,1]^N` is
//! the job of [`clip_image`], applied whenever an image is sent to a model.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{lp_norm_unchecked, ImageTensor, NormKind};

/// Points whose norm exceeds the radius by less than this relative amount
/// are treated as inside, which makes every projection exactly idempotent.
const INSIDE_SLACK: f64 = 1e-12;

fn check_eps(eps: f64) -> Result<()> {
    if eps >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("radius must be nonnegative, got {eps}")))
    }
}

pub fn project_linf(v: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_eps(eps)?;
    Ok(v.iter().map(|x| x.clamp(-eps, eps)).collect())
}

pub fn project_l2(v: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_eps(eps)?;
    let norm = lp_norm_unchecked(v, NormKind::L2);
    if norm <= eps * (1.0 + INSIDE_SLACK) {
        return Ok(v.to_vec());
    }
    let scale = eps / norm;
    Ok(v.iter().map(|x| x * scale).collect())
}

/// Sort-based soft thresholding: find `θ ≥ 0` with `Σ max(|v_i| − θ, 0) = eps`
/// and shrink every coordinate toward zero by `θ`.
pub fn project_l1(v: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_eps(eps)?;
    let norm = lp_norm_unchecked(v, NormKind::L1);
    if norm <= eps * (1.0 + INSIDE_SLACK) {
        return Ok(v.to_vec());
    }
    if eps == 0.0 {
        return Ok(vec![0.0; v.len()]);
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - eps) / (i + 1) as f64;
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    let out: Vec<f64> = v
        .iter()
        .map(|&x| x.signum() * (x.abs() - theta).max(0.0))
        .collect();
    // The threshold is exact up to rounding; a final radial rescale removes
    // any residual excess so the result is always feasible.
    let got = lp_norm_unchecked(&out, NormKind::L1);
    if got > eps {
        let s = eps / got;
        return Ok(out.into_iter().map(|x| x * s).collect());
    }
    Ok(out)
}

pub fn project(v: &[f64], norm: NormKind, eps: f64) -> Result<Vec<f64>> {
    match norm {
        NormKind::L1 => project_l1(v, eps),
        NormKind::L2 => project_l2(v, eps),
        NormKind::Linf => project_linf(v, eps),
    }
}

/// Uniform draw from the unit l2 sphere in `n` dimensions.
pub fn sample_unit_sphere_l2<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    assert!(n >= 1, "sphere dimension must be positive");
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = lp_norm_unchecked(&v, NormKind::L2);
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Uniform draw from the unit l2 ball.
pub fn sample_unit_ball_l2<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let dir = sample_unit_sphere_l2(rng, n);
    let r: f64 = rng.random::<f64>().powf(1.0 / n as f64);
    dir.into_iter().map(|x| x * r).collect()
}

/// `clamp(x + δ, 0, 1)` elementwise.
pub fn clip_image(x: &ImageTensor, delta: &[f64]) -> Result<ImageTensor> {
    if delta.len() != x.len() {
        return Err(shape_err(x.len(), delta.len()));
    }
    let data = x
        .data()
        .iter()
        .zip(delta)
        .map(|(&a, &d)| (a as f64 + d).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(ImageTensor::from_clamped(x.shape(), data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use crate::tensor::ImageShape;

    #[test]
    fn linf_examples() {
        assert_eq!(project_linf(&[0.3, -0.9], 0.5).unwrap(), vec![0.3, -0.5]);
        assert_eq!(project_linf(&[0.1, 0.2], 0.5).unwrap(), vec![0.1, 0.2]);
        assert_eq!(project_linf(&[-2.0, 2.0], 0.0).unwrap(), vec![0.0, 0.0]);
        assert!(project_linf(&[1.0], -0.1).is_err());
    }

    #[test]
    fn l2_examples() {
        let v = [0.6, -0.8];
        assert_eq!(project_l2(&v, 0.5).unwrap(), vec![0.3, -0.4]);
        assert_eq!(project_l2(&[0.1, 0.1], 1.0).unwrap(), vec![0.1, 0.1]);
        assert_eq!(project_l2(&[0.0, 0.0], 0.3).unwrap(), vec![0.0, 0.0]);
        assert!(project_l2(&[1.0], -1.0).is_err());
    }

    #[test]
    fn l1_examples() {
        assert_eq!(project_l1(&[3.0, 0.0], 1.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(project_l1(&[2.0, 1.0], 1.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(project_l1(&[0.3, -0.4], 1.0).unwrap(), vec![0.3, -0.4]);
        assert_eq!(project_l1(&[0.3, -0.4], 0.0).unwrap(), vec![0.0, 0.0]);
        assert!(project_l1(&[1.0], -1.0).is_err());
    }

    #[test]
    fn l1_ties_split_evenly() {
        let u = project_l1(&[1.0, -1.0, 1.0], 1.5).unwrap();
        for x in &u {
            assert!((x.abs() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn sphere_samples_have_unit_norm() {
        let mut rng = RandomSource::new(3).rng();
        for n in [1, 2, 7, 100] {
            let u = sample_unit_sphere_l2(&mut rng, n);
            assert!((lp_norm_unchecked(&u, NormKind::L2) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sphere_moments() {
        let mut rng = RandomSource::new(11).rng();
        let draws = 100_000;
        let mut mean = [0.0; 3];
        let mut diag = [0.0; 3];
        for _ in 0..draws {
            let u = sample_unit_sphere_l2(&mut rng, 3);
            for i in 0..3 {
                mean[i] += u[i] / draws as f64;
                diag[i] += u[i] * u[i] / draws as f64;
            }
        }
        for i in 0..3 {
            assert!(mean[i].abs() < 0.02, "mean {mean:?}");
            assert!((diag[i] - 1.0 / 3.0).abs() < 0.02, "diag {diag:?}");
        }
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = RandomSource::new(5).rng();
        for _ in 0..1000 {
            let v = sample_unit_ball_l2(&mut rng, 4);
            assert!(lp_norm_unchecked(&v, NormKind::L2) <= 1.0);
        }
    }

    #[test]
    fn clip_image_examples() {
        let shape = ImageShape::new(1, 3, 1);
        let x = ImageTensor::new(shape, vec![0.5, 0.5, 0.9]).unwrap();
        let up = clip_image(&x, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(up.data(), &[1.0, 1.0, 1.0]);
        assert_eq!(clip_image(&x, &[0.0; 3]).unwrap(), x);
        let down = clip_image(&x, &[0.0, 0.0, -0.2]).unwrap();
        assert!((down.data()[2] - 0.7).abs() < 1e-6);
        assert!(clip_image(&x, &[0.0; 2]).is_err());
    }
}
