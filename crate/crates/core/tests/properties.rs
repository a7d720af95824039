use std::collections::HashSet;

use crseg_core::ftz::RawTensor;
use crseg_core::metrics::{argmax_labels, miou, pix_acc};
use crseg_core::smoothing::{pixel_weights, CertifiedRadiusMap};
use crseg_core::tensor::lp_norm;
use crseg_core::{LabelMap, NormKind, ProbMap};
use proptest::prelude::*;

/// mIoU from explicit pixel sets.
fn miou_by_sets(pred: &[LabelMap], truth: &[LabelMap], k: usize) -> f64 {
    let mut ratios = Vec::new();
    for (p, t) in pred.iter().zip(truth) {
        for c in 0..k as u32 {
            let ps: HashSet<usize> = (0..p.len()).filter(|&i| p.labels()[i] == c).collect();
            let ts: HashSet<usize> = (0..t.len()).filter(|&i| t.labels()[i] == c).collect();
            let union = ps.union(&ts).count();
            if union > 0 {
                ratios.push(ps.intersection(&ts).count() as f64 / union as f64);
            }
        }
    }
    ratios.iter().sum::<f64>() / ratios.len() as f64
}

fn label_pairs() -> impl Strategy<Value = (usize, Vec<LabelMap>, Vec<LabelMap>)> {
    (2usize..5, 1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(k, imgs, h, w)| {
        let map = move || prop::collection::vec(0..k as u32, h * w).prop_map(move |v| LabelMap::new(h, w, v).unwrap());
        (
            Just(k),
            prop::collection::vec(map(), imgs),
            prop::collection::vec(map(), imgs),
        )
    })
}

proptest! {
    #[test]
    fn metrics_bounded_and_match_set_oracle((k, pred, truth) in label_pairs()) {
        let acc = pix_acc(&pred, &truth).unwrap();
        let m = miou(&pred, &truth, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!((m - miou_by_sets(&pred, &truth, k)).abs() < 1e-12);
        prop_assert_eq!(pix_acc(&truth, &truth).unwrap(), 1.0);
        prop_assert_eq!(miou(&truth, &truth, k).unwrap(), 1.0);
    }

    #[test]
    fn metrics_invariant_under_pixel_permutation((k, pred, truth) in label_pairs(), seed in any::<u64>()) {
        let len = pred[0].len();
        let mut order: Vec<usize> = (0..len).collect();
        let mut s = seed;
        for i in (1..len).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffle = |maps: &[LabelMap]| -> Vec<LabelMap> {
            maps.iter()
                .map(|m| LabelMap::new(1, len, order.iter().map(|&i| m.labels()[i]).collect()).unwrap())
                .collect()
        };
        let (p2, t2) = (shuffle(&pred), shuffle(&truth));
        prop_assert_eq!(pix_acc(&pred, &truth).unwrap(), pix_acc(&p2, &t2).unwrap());
        prop_assert!((miou(&pred, &truth, k).unwrap() - miou(&p2, &t2, k).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn norms_are_ordered_and_homogeneous(v in prop::collection::vec(-10.0f64..10.0, 1..20), c in -3.0f64..3.0) {
        let l1 = lp_norm(&v, NormKind::L1).unwrap();
        let l2 = lp_norm(&v, NormKind::L2).unwrap();
        let li = lp_norm(&v, NormKind::Linf).unwrap();
        prop_assert!(li <= l2 * (1.0 + 1e-12) && l2 <= l1 * (1.0 + 1e-12));
        prop_assert!(l1 <= li * v.len() as f64 * (1.0 + 1e-12));
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        for (p, base) in [(NormKind::L1, l1), (NormKind::L2, l2), (NormKind::Linf, li)] {
            let s = lp_norm(&scaled, p).unwrap();
            prop_assert!((s - c.abs() * base).abs() <= 1e-9 * (1.0 + base));
        }
    }

    #[test]
    fn weights_decrease_with_radius(
        mut radii in prop::collection::vec(-1.0f64..1.0, 2..30),
        a in 0.0f64..50.0,
        b in -10.0f64..10.0,
    ) {
        radii.sort_by(f64::total_cmp);
        let cr = CertifiedRadiusMap::new(1, radii.len(), radii).unwrap();
        let w = pixel_weights(&cr, a, b);
        for pair in w.weights().windows(2) {
            prop_assert!(pair[1] <= pair[0]);
        }
        prop_assert!(w.weights().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn ftz_round_trip(dims in prop::collection::vec(1u32..5, 0..4), seed in any::<u32>()) {
        let len: u32 = dims.iter().product();
        let data: Vec<f32> = (0..len).map(|i| (i ^ seed) as f32 * 0.37 - 5.0).collect();
        let t = RawTensor::new(dims, data).unwrap();
        let bytes = t.to_bytes();
        prop_assert_eq!(RawTensor::from_bytes(&bytes).unwrap(), t);
        prop_assert!(RawTensor::from_bytes(&bytes[..bytes.len() - 1]).is_err() || bytes.len() == 8);
    }

    #[test]
    fn argmax_picks_a_maximum(rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..10)) {
        let n = rows.len();
        let probs: Vec<f64> = rows.iter().flat_map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(move |v| v / s)
        }).collect();
        let map = ProbMap::new(1, n, 3, probs).unwrap();
        let labels = argmax_labels(&map);
        for (i, &l) in labels.labels().iter().enumerate() {
            let row = map.pixel(i);
            prop_assert!(row.iter().all(|&v| v <= row[l as usize]));
        }
    }
}

#[test]
fn hand_worked_metrics() {
    let truth = LabelMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
    let pred = LabelMap::new(2, 2, vec![0, 1, 1, 1]).unwrap();
    assert_eq!(pix_acc(std::slice::from_ref(&pred), std::slice::from_ref(&truth)).unwrap(), 0.75);
    // class 0: 1/2, class 1: 2/3
    assert_eq!(miou(&[pred], std::slice::from_ref(&truth), 2).unwrap(), 7.0 / 12.0);
    // class 2 never appears and is left out of the mean
    let all_wrong = LabelMap::new(2, 2, vec![1, 1, 0, 0]).unwrap();
    assert_eq!(miou(std::slice::from_ref(&all_wrong), std::slice::from_ref(&truth), 3).unwrap(), 0.0);
    assert_eq!(pix_acc(&[all_wrong], &[truth]).unwrap(), 0.0);
}

#[test]
fn metric_input_errors() {
    let a = LabelMap::new(2, 2, vec![0; 4]).unwrap();
    let b = LabelMap::new(1, 4, vec![0; 4]).unwrap();
    assert!(pix_acc(std::slice::from_ref(&a), &[b]).is_err());
    assert!(pix_acc(&[], &[]).is_err());
    assert!(miou(std::slice::from_ref(&a), &[], 2).is_err());
    let out_of_range = LabelMap::new(2, 2, vec![0, 0, 0, 5]).unwrap();
    assert!(miou(&[out_of_range], &[a], 2).is_err());
}
