use certsmooth::classifiers::{ClassifierHandle, NestedBall, Point, ProbitHalfspace};
use certsmooth::memory::ScanStrategy;
use certsmooth::pipeline::synthetic::{concentric_annuli, two_gaussian_clusters};
use certsmooth::pipeline::{default_radii, run_campaign, CampaignConfig, CampaignMode, LabeledDataset};
use certsmooth::sigma_opt::{GradMode, SigmaOptConfig};
use certsmooth::smoothing::{GaussianCertConfig, Norm, Prediction};

fn config(mode: CampaignMode, seed: u64) -> CampaignConfig {
    CampaignConfig {
        mode,
        cert: GaussianCertConfig {
            sigma: 0.25,
            n0: 100,
            n_cert: 5_000,
            seed,
            ..Default::default()
        },
        opt: SigmaOptConfig {
            sigma0: 0.25,
            step_alpha: 0.02,
            iters_k: 40,
            n_samples: 64,
            grad_mode: GradMode::Analytic,
            seed,
            ..Default::default()
        },
        radii: default_radii(),
        scan: ScanStrategy::Linear,
    }
}

fn probit() -> ClassifierHandle {
    ClassifierHandle::new(ProbitHalfspace::new(vec![1.0, 0.0], 0.0, 0.5).unwrap())
}

#[test]
fn campaigns_are_reproducible() {
    let data = two_gaussian_clusters(40, 1);
    let a = run_campaign(&probit(), &data, &config(CampaignMode::Ds, 9), None).unwrap();
    let b = run_campaign(&probit(), &data, &config(CampaignMode::Ds, 9), None).unwrap();
    assert_eq!(a.results, b.results);
    assert_eq!(a.memory.regions(), b.memory.regions());
}

#[test]
fn indexed_scan_matches_linear_scan() {
    let data = concentric_annuli(60, 2);
    let c = ClassifierHandle::new(NestedBall::new(1.3, 2).unwrap());
    let mut linear = config(CampaignMode::Ds, 5);
    linear.opt.grad_mode = GradMode::ScalarFd;
    let indexed = CampaignConfig {
        scan: ScanStrategy::Indexed,
        ..linear.clone()
    };
    let a = run_campaign(&c, &data, &linear, None).unwrap();
    let b = run_campaign(&c, &data, &indexed, None).unwrap();
    assert_eq!(a.results, b.results);
    assert_eq!(a.audit.overlap_events, b.audit.overlap_events);
}

#[test]
fn data_dependent_dominates_fixed_on_probit() {
    let mut wins = 0;
    for seed in 0..10 {
        let data = two_gaussian_clusters(50, seed);
        let ds = run_campaign(&probit(), &data, &config(CampaignMode::Ds, seed), None).unwrap();
        let fixed = run_campaign(&probit(), &data, &config(CampaignMode::FixedSigma, seed), None).unwrap();
        if ds.metrics.acr > fixed.metrics.acr {
            wins += 1;
        }
    }
    assert!(wins >= 9, "{wins}/10");
}

#[test]
fn memory_keeps_issued_certificates_consistent() {
    let data = concentric_annuli(80, 3);
    let c = ClassifierHandle::new(NestedBall::new(1.3, 2).unwrap());
    for mode in [CampaignMode::Ds, CampaignMode::DsL1] {
        let mut cfg = config(mode, 4);
        cfg.opt.grad_mode = GradMode::ScalarFd;
        let out = run_campaign(&c, &data, &cfg, None).unwrap();
        assert!(out.memory.find_violation().is_none());
        let norm = if mode == CampaignMode::Ds { Norm::L2 } else { Norm::L1 };
        assert!(out.memory.regions().iter().all(|r| r.norm == norm));
        let stored = out.results.iter().filter(|r| r.outcome.prediction != Prediction::Abstain).count();
        assert_eq!(stored, out.memory.len());
        assert_eq!(out.metrics.overlap_events, out.audit.overlap_events);
    }
}

#[test]
fn certified_accuracy_is_non_increasing() {
    let data = two_gaussian_clusters(60, 6);
    let out = run_campaign(&probit(), &data, &config(CampaignMode::Ds, 6), None).unwrap();
    let curve = &out.metrics.certified_accuracy;
    assert!(curve.windows(2).all(|w| w[1] <= w[0]));
    assert!(curve.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn prior_memory_is_respected() {
    let first = LabeledDataset::new(vec![(Point::new(vec![1.0, 0.0]).unwrap(), 1)]).unwrap();
    let second = LabeledDataset::new(vec![(Point::new(vec![-0.05, 0.0]).unwrap(), 0)]).unwrap();
    let cfg = config(CampaignMode::Ds, 8);
    let seeded = run_campaign(&probit(), &first, &cfg, None).unwrap();
    let out = run_campaign(&probit(), &second, &cfg, Some(seeded.memory)).unwrap();
    assert_eq!(out.memory.len(), 2);
    assert!(out.memory.find_violation().is_none());
}
