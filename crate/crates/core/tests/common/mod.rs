//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use crseg_core::NormKind;

/// `Φ(x)` from the everywhere-convergent series
/// `1/2 + φ(x)·Σ x^{2n+1} / (2n+1)!!`.
pub fn norm_cdf(x: f64) -> f64 {
    let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs().max(1e-300) {
        n += 1.0;
        term *= x * x / (2.0 * n + 1.0);
        sum += term;
        if n > 5000.0 {
            break;
        }
    }
    0.5 + phi * sum
}

/// `Φ⁻¹(p)` by bisection on [`norm_cdf`].
pub fn inv_norm_cdf_bisect(p: f64) -> f64 {
    let (mut lo, mut hi) = (-12.0f64, 12.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn norm(v: &[f64], p: NormKind) -> f64 {
    match p {
        NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
        NormKind::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormKind::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest point of the ball by exhaustive search. An outside point
/// projects onto the sphere, so the search runs over directions `w`, mapped
/// radially onto the sphere, on a grid that is repeatedly re-centred on the
/// incumbent and shrunk.
pub fn grid_project(v: &[f64], p: NormKind, eps: f64) -> Vec<f64> {
    if norm(v, p) <= eps {
        return v.to_vec();
    }
    let n = v.len();
    let radial = |w: &[f64]| -> Option<Vec<f64>> {
        let s = norm(w, p);
        (s > 0.0).then(|| w.iter().map(|x| eps * x / s).collect())
    };
    let k: i64 = if n <= 2 { 10 } else { 4 };
    let side = (2 * k + 1) as usize;
    let total = side.pow(n as u32);
    let mut centre = v.to_vec();
    let mut half = norm(v, NormKind::Linf);
    let mut best = radial(v).expect("outside point is nonzero");
    let mut best_d = dist2(&best, v);
    let mut w = vec![0.0; n];
    for _ in 0..80 {
        let step = half / k as f64;
        let mut best_w = centre.clone();
        for idx in 0..total {
            let mut r = idx;
            for (c, slot) in w.iter_mut().enumerate() {
                let i = (r % side) as i64 - k;
                r /= side;
                *slot = centre[c] + i as f64 * step;
            }
            if let Some(point) = radial(&w) {
                let d = dist2(&point, v);
                if d < best_d {
                    best_d = d;
                    best = point;
                    best_w.copy_from_slice(&w);
                }
            }
        }
        centre = best_w;
        half = 2.0 * step;
    }
    best
}

/// Central finite differences of a scalar function.
pub fn finite_difference<F: FnMut(&[f64]) -> f64>(mut f: F, at: &[f64], h: f64) -> Vec<f64> {
    let mut x = at.to_vec();
    (0..at.len())
        .map(|i| {
            x[i] = at[i] + h;
            let up = f(&x);
            x[i] = at[i] - h;
            let down = f(&x);
            x[i] = at[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
