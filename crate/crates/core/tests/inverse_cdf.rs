mod common;

use approx::assert_abs_diff_eq;
use common::{inv_norm_cdf_bisect, norm_cdf};
use crseg_core::normal::inv_norm_cdf;
use crseg_core::smoothing::{classification_certified_radius, pixel_certified_radius};
use crseg_core::ProbMap;

#[test]
fn series_cdf_reference_values() {
    assert_abs_diff_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(norm_cdf(1.0), 0.841_344_746_068_542_9, epsilon = 1e-14);
    assert_abs_diff_eq!(norm_cdf(-1.959_963_984_540_054), 0.025, epsilon = 1e-14);
}

#[test]
fn inverse_matches_bisection_oracle() {
    let mut ps: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
    ps.extend([1e-6, 1e-5, 1e-4, 0.501, 0.841_344_746, 0.9999, 1.0 - 1e-6]);
    for p in ps {
        let z = inv_norm_cdf(p).unwrap();
        assert_abs_diff_eq!(z, inv_norm_cdf_bisect(p), epsilon = 1e-9);
    }
}

#[test]
fn inverse_rejects_closed_endpoints() {
    for p in [0.0, 1.0, -0.1, 1.1, f64::NAN] {
        assert!(inv_norm_cdf(p).is_err(), "p = {p}");
    }
}

#[test]
fn pixel_radius_against_oracle() {
    let sigma = 0.25;
    let ps = [0.501, 0.6, 0.841_344_746, 0.9, 0.99];
    let probs: Vec<f64> = ps.iter().flat_map(|&p| [p, 1.0 - p]).collect();
    let map = ProbMap::new(1, ps.len(), 2, probs).unwrap();
    let cr = pixel_certified_radius(&map, sigma).unwrap();
    for (r, p) in cr.radii().iter().zip(ps) {
        assert_abs_diff_eq!(*r, sigma * inv_norm_cdf_bisect(p), epsilon = 1e-9);
    }
}

#[test]
fn saturated_probabilities_give_finite_radii() {
    let map = ProbMap::new(1, 2, 2, vec![1.0, 0.0, 0.5, 0.5]).unwrap();
    let cr = pixel_certified_radius(&map, 1.0).unwrap();
    assert_abs_diff_eq!(cr.radii()[0], inv_norm_cdf_bisect(1.0 - 1e-6), epsilon = 1e-9);
    assert_abs_diff_eq!(cr.radii()[1], 0.0, epsilon = 1e-12);
}

#[test]
fn classification_radius_is_half_gap() {
    let r = classification_certified_radius(0.9, 0.05, 0.5).unwrap();
    let expect = 0.25 * (inv_norm_cdf_bisect(0.9) - inv_norm_cdf_bisect(0.05));
    assert_abs_diff_eq!(r, expect, epsilon = 1e-9);
    assert!(classification_certified_radius(0.4, 0.5, 0.5).is_err());
}
