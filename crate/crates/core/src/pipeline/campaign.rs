use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::dataset::LabeledDataset;
use super::metrics::{summarize, validate_radii, MetricsSummary, Scored};
use crate::classifiers::{ClassifierHandle, Point};
use crate::error::{Error, Result};
use crate::memory::{AuditReport, CertifiedRegion, MemoryStore, ScanStrategy};
use crate::sigma_opt::{optimize_sigma, SigmaOptConfig};
use crate::smoothing::{certify_l1, certify_l2, mix_seed, CertificationOutcome, GaussianCertConfig, NoiseKind, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignMode {
    /// Every input certified at `cert.sigma`.
    FixedSigma,
    /// Per-input Gaussian scale, ℓ2 certificates reconciled through memory.
    Ds,
    /// Per-input uniform half-width, ℓ1 certificates reconciled through memory.
    DsL1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub mode: CampaignMode,
    pub cert: GaussianCertConfig,
    pub opt: SigmaOptConfig,
    pub radii: Vec<f64>,
    pub scan: ScanStrategy,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        self.cert.validate()?;
        if self.mode != CampaignMode::FixedSigma {
            self.opt.validate()?;
        }
        validate_radii(&self.radii)
    }
}

/// Default radii grid for certified-accuracy curves: 0 to 2 in steps of 0.25.
pub fn default_radii() -> Vec<f64> {
    (0..=8).map(|i| i as f64 * 0.25).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputResult {
    pub idx: usize,
    pub label: usize,
    /// Final outcome after memory reconciliation.
    pub outcome: CertificationOutcome,
    pub sigma_star: f64,
    pub adjusted_by_memory: bool,
    pub class_flips: usize,
}

impl InputResult {
    pub fn correct(&self) -> bool {
        self.outcome.prediction == Prediction::Class(self.label)
    }

    pub fn scored(&self) -> Scored {
        Scored {
            prediction: self.outcome.prediction,
            radius: self.outcome.radius,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CampaignOutput {
    pub results: Vec<InputResult>,
    pub memory: MemoryStore,
    pub audit: AuditReport,
    pub metrics: MetricsSummary,
}

struct Certified {
    outcome: CertificationOutcome,
    sigma_star: f64,
    class_flips: usize,
}

fn certify_one(c: &ClassifierHandle, x: &Point, idx: usize, cfg: &CampaignConfig) -> Result<Certified> {
    let cert = cfg.cert.with_seed(mix_seed(cfg.cert.seed, idx as u64));
    match cfg.mode {
        CampaignMode::FixedSigma => Ok(Certified {
            outcome: certify_l2(c, x, &cert)?,
            sigma_star: cfg.cert.sigma,
            class_flips: 0,
        }),
        CampaignMode::Ds | CampaignMode::DsL1 => {
            let noise = if cfg.mode == CampaignMode::Ds {
                NoiseKind::Gaussian
            } else {
                NoiseKind::Uniform
            };
            let opt = SigmaOptConfig {
                noise,
                seed: mix_seed(cfg.opt.seed, idx as u64),
                ..cfg.opt
            };
            let found = optimize_sigma(c, x, &opt)?;
            let outcome = match noise {
                NoiseKind::Gaussian => certify_l2(c, x, &cert.with_sigma(found.sigma_star))?,
                NoiseKind::Uniform => certify_l1(c, x, found.sigma_star, &cert)?,
            };
            Ok(Certified {
                outcome,
                sigma_star: found.sigma_star,
                class_flips: found.trace.class_flips,
            })
        }
    }
}

/// Certifies every row of `data`. Per-input work runs in parallel with seeds
/// derived from the row index; memory insertion then runs sequentially in
/// dataset order. `memory` seeds the store (fresh when `None`); it is only
/// consulted in the data-dependent modes.
pub fn run_campaign(
    c: &ClassifierHandle,
    data: &LabeledDataset,
    cfg: &CampaignConfig,
    memory: Option<MemoryStore>,
) -> Result<CampaignOutput> {
    cfg.validate()?;
    if let Some(dim) = data.dim() {
        c.check_dim(dim)?;
    }
    if let Some((_, y)) = data.rows().iter().find(|(_, y)| *y >= c.num_classes()) {
        return Err(Error::InvalidConfig(format!(
            "label {y} out of range for {} classes",
            c.num_classes()
        )));
    }
    let certified: Vec<Certified> = data
        .rows()
        .par_iter()
        .enumerate()
        .map(|(idx, (x, _))| certify_one(c, x, idx, cfg))
        .collect::<Result<_>>()?;

    let mut memory = memory.unwrap_or_else(|| MemoryStore::with_strategy(cfg.scan));
    let mut results = Vec::with_capacity(certified.len());
    for (idx, (found, (x, label))) in certified.into_iter().zip(data.rows()).enumerate() {
        let mut outcome = found.outcome;
        let mut adjusted = false;
        if cfg.mode != CampaignMode::FixedSigma {
            if let Prediction::Class(class) = outcome.prediction {
                let region = CertifiedRegion::new(x.clone(), outcome.radius, outcome.norm, class, found.sigma_star)?;
                let inserted = memory.insert(region)?;
                outcome.prediction = Prediction::Class(inserted.prediction);
                outcome.radius = inserted.region.radius;
                adjusted = inserted.adjusted;
            }
        }
        results.push(InputResult {
            idx,
            label: *label,
            outcome,
            sigma_star: found.sigma_star,
            adjusted_by_memory: adjusted,
            class_flips: found.class_flips,
        });
    }
    let audit = memory.audit(cfg.cert.n_cert);
    let scored: Vec<Scored> = results.iter().map(InputResult::scored).collect();
    let metrics = summarize(&scored, &data.labels(), &cfg.radii, audit.overlap_events)?;
    info!(
        inputs = results.len(),
        acr = metrics.acr,
        overlap_events = audit.overlap_events,
        "campaign finished"
    );
    Ok(CampaignOutput {
        results,
        memory,
        audit,
        metrics,
    })
}
