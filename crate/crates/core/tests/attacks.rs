use crseg_core::blackbox::{cr_pbgd, pbgd, BlackBoxAttackConfig};
use crseg_core::metrics::argmax_labels;
use crseg_core::oracle::{attack_loss, with_counter};
use crseg_core::results::summarize;
use crseg_core::smoothing::SmoothingConfig;
use crseg_core::toymodel::{ModelConfig, ToySegModel};
use crseg_core::whitebox::{cr_fgsm, cr_pgd, dag, fgsm, pgd, DagConfig, WhiteBoxAttackConfig};
use crseg_core::{BlackBoxOracle, ImageTensor, LabelMap, NormKind, RandomSource};

const NORMS: [NormKind; 3] = [NormKind::L1, NormKind::L2, NormKind::Linf];

fn setup() -> (ToySegModel, ImageTensor, LabelMap) {
    let cfg = ModelConfig {
        height: 8,
        width: 8,
        channels: 3,
        num_classes: 3,
        patch_radius: 1,
        hidden: 12,
    };
    let model = ToySegModel::new(cfg, &RandomSource::new(4)).unwrap();
    let x = model.random_image(&mut RandomSource::new(5).rng());
    let y = argmax_labels(&model.predict(&x).unwrap());
    (model, x, y)
}

/// Weights `1/(1+e^{-40})`, which is exactly 1.0 in double precision.
fn unit_weights(samples: usize, interval: usize) -> SmoothingConfig {
    SmoothingConfig {
        sigma: 0.05,
        samples,
        a: 0.0,
        b: -40.0,
        interval,
    }
}

#[test]
fn zero_budget_leaves_predictions_unchanged() {
    let (model, x, y) = setup();
    let rng = RandomSource::new(1);
    let smoothing = SmoothingConfig::default();
    for norm in NORMS {
        let cfg = WhiteBoxAttackConfig::new(norm, 0.0, 5);
        let bb = BlackBoxAttackConfig::new(norm, 0.0, 10, 0.01);
        let runs = [
            pgd(&model, &x, &y, &cfg).unwrap().perturbation,
            cr_pgd(&model, &x, &y, &cfg.with_cr(smoothing), &rng).unwrap().perturbation,
            fgsm(&model, &x, &y, norm, 0.0).unwrap().perturbation,
            cr_fgsm(&model, &x, &y, norm, 0.0, &smoothing, &rng).unwrap().perturbation,
            pbgd(&model, &x, &y, &bb, &rng).unwrap().perturbation,
            cr_pbgd(&model, &x, &y, &bb.with_cr(smoothing), &rng).unwrap().perturbation,
        ];
        for delta in runs {
            assert!(delta.data().iter().all(|&v| v == 0.0));
            let s = summarize(&model, "x", &x, &y, &delta).unwrap();
            assert_eq!(s.pixacc_clean, s.pixacc_attacked);
            assert_eq!(s.miou_clean, s.miou_attacked);
        }
    }
    let d = dag(&model, &x, &y, &DagConfig::new(0.0, 10)).unwrap();
    assert!(d.perturbation.data().iter().all(|&v| v == 0.0));
}

#[test]
fn perturbations_respect_budget_and_raise_loss() {
    let (model, x, y) = setup();
    let clean = attack_loss(&model, &x, &vec![0.0; x.len()], &y, None).unwrap();
    for (norm, eps) in [(NormKind::L1, 2.0), (NormKind::L2, 0.5), (NormKind::Linf, 0.05)] {
        let run = pgd(&model, &x, &y, &WhiteBoxAttackConfig::new(norm, eps, 10)).unwrap();
        assert!(run.perturbation.size(norm) <= eps * (1.0 + 1e-9));
        let attacked = attack_loss(&model, &x, run.perturbation.data(), &y, None).unwrap();
        assert!(attacked > clean, "{norm}: {attacked} <= {clean}");
        let f = fgsm(&model, &x, &y, norm, eps).unwrap();
        assert!(f.perturbation.size(norm) <= eps * (1.0 + 1e-9));
    }
    let d = dag(&model, &x, &y, &DagConfig::new(0.05, 40)).unwrap();
    assert!(d.perturbation.size(NormKind::Linf) <= 0.05 + 1e-12);
    let flipped = summarize(&model, "dag", &x, &y, &d.perturbation).unwrap();
    assert!(flipped.pixacc_attacked < flipped.pixacc_clean);
}

#[test]
fn guided_pgd_with_unit_weights_is_plain_pgd() {
    let (model, x, y) = setup();
    let cfg = WhiteBoxAttackConfig::new(NormKind::Linf, 0.03, 12);
    let plain = pgd(&model, &x, &y, &cfg).unwrap();
    let guided = cr_pgd(&model, &x, &y, &cfg.with_cr(unit_weights(4, 3)), &RandomSource::new(2)).unwrap();
    assert_eq!(plain.perturbation.data(), guided.perturbation.data());
    assert_eq!(guided.trace.last().unwrap().queries, 4 * 4);
}

#[test]
fn guided_pbgd_with_unit_weights_follows_plain_pbgd() {
    let (model, x, y) = setup();
    let rng = RandomSource::new(3);
    let cfg = BlackBoxAttackConfig::new(NormKind::L2, 0.5, 40, 0.002);
    let plain = pbgd(&model, &x, &y, &cfg, &rng).unwrap();
    let guided = cr_pbgd(&model, &x, &y, &cfg.with_cr(unit_weights(4, 8)), &rng).unwrap();
    assert_eq!(plain.perturbation.data(), guided.perturbation.data());
    assert_eq!(plain.queries, 80);
    assert_eq!(guided.queries, 80 + 4 * 5);
}

#[test]
fn query_counts_are_exact() {
    let (model, x, y) = setup();
    let rng = RandomSource::new(6);
    let counted = with_counter(&model, None);
    let run = pbgd(&counted, &x, &y, &BlackBoxAttackConfig::new(NormKind::L2, 0.5, 100, 0.01), &rng).unwrap();
    assert_eq!((run.queries, counted.queries()), (200, 200));

    let counted = with_counter(&model, None);
    let smoothing = SmoothingConfig {
        samples: 8,
        interval: 16,
        ..SmoothingConfig::default()
    };
    let cfg = BlackBoxAttackConfig::new(NormKind::L2, 0.5, 96, 0.01).with_cr(smoothing);
    let run = cr_pbgd(&counted, &x, &y, &cfg, &rng).unwrap();
    assert_eq!((run.queries, counted.queries(), cfg.expected_queries()), (240, 240, 240));
    assert_eq!(run.trace.records.last().unwrap().queries_cum, 240);

    let counted = with_counter(&model, None);
    let cfg = BlackBoxAttackConfig {
        bookkeeping: Some(10),
        ..BlackBoxAttackConfig::new(NormKind::Linf, 0.05, 50, 0.005)
    };
    let run = pbgd(&counted, &x, &y, &cfg, &rng).unwrap();
    assert_eq!((run.queries, counted.queries()), (105, 105));
}

#[test]
fn query_limit_stops_early() {
    let (model, x, y) = setup();
    let cfg = BlackBoxAttackConfig {
        query_limit: Some(31),
        ..BlackBoxAttackConfig::new(NormKind::L2, 0.5, 100, 0.01)
    };
    let run = pbgd(&model, &x, &y, &cfg, &RandomSource::new(0)).unwrap();
    assert!(run.exhausted);
    assert!(run.queries <= 31);
    assert_eq!(run.trace.records.len(), 15);
}

#[test]
fn attacks_are_deterministic() {
    let (model, x, y) = setup();
    let smoothing = SmoothingConfig {
        sigma: 0.1,
        ..SmoothingConfig::default()
    };
    let wb = WhiteBoxAttackConfig::new(NormKind::L2, 0.5, 10).with_cr(smoothing);
    let bb = BlackBoxAttackConfig::new(NormKind::L2, 0.5, 60, 0.01).with_cr(smoothing);
    let a = cr_pgd(&model, &x, &y, &wb, &RandomSource::new(9)).unwrap();
    let b = cr_pgd(&model, &x, &y, &wb, &RandomSource::new(9)).unwrap();
    assert_eq!(a.perturbation.data(), b.perturbation.data());
    let a = cr_pbgd(&model, &x, &y, &bb, &RandomSource::new(9)).unwrap();
    let b = cr_pbgd(&model, &x, &y, &bb, &RandomSource::new(9)).unwrap();
    assert_eq!(a.perturbation.data(), b.perturbation.data());
    assert_eq!(a.trace, b.trace);
    let c = cr_pbgd(&model, &x, &y, &bb, &RandomSource::new(10)).unwrap();
    assert_ne!(a.perturbation.data(), c.perturbation.data());
}

#[test]
fn invalid_configs_rejected() {
    let (model, x, y) = setup();
    let mut cfg = WhiteBoxAttackConfig::new(NormKind::Linf, 0.03, 0);
    assert!(pgd(&model, &x, &y, &cfg).is_err());
    cfg.steps = 3;
    cfg.eps = -1.0;
    assert!(pgd(&model, &x, &y, &cfg).is_err());
    let bb = BlackBoxAttackConfig {
        gamma: 0.0,
        ..BlackBoxAttackConfig::new(NormKind::L2, 0.5, 10, 0.01)
    };
    assert!(pbgd(&model, &x, &y, &bb, &RandomSource::new(0)).is_err());
}
