//! Training with per-input smoothing scales, and the end-to-end demo that
//! compares it against fixed-scale training on synthetic data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::campaign::{default_radii, run_campaign, CampaignConfig, CampaignMode};
use super::dataset::LabeledDataset;
use super::metrics::MetricsSummary;
use super::synthetic::concentric_annuli;
use crate::classifiers::{ClassifierHandle, ClassifierSpec, Mlp, MlpGrad, Point};
use crate::error::{Error, Result};
use crate::memory::ScanStrategy;
use crate::sigma_opt::{optimize_sigma, GradMode, ReturnMode, SigmaOptConfig};
use crate::smoothing::{mix_seed, GaussianCertConfig, NoiseKind};

/// One parameter update given per-input noise scales.
pub trait TrainFunction {
    fn step(&mut self, model: &mut Mlp, batch: &[(Point, usize)], sigmas: &[f64]) -> Result<f64>;
}

/// Cross-entropy on Gaussian-perturbed copies of each input, one gradient
/// step per batch.
#[derive(Debug, Clone)]
pub struct GaussianAugmentation {
    pub learning_rate: f64,
    /// Noisy copies drawn per input and step.
    pub copies: usize,
    rng: ChaCha8Rng,
}

impl GaussianAugmentation {
    pub fn new(learning_rate: f64, copies: usize, seed: u64) -> Self {
        Self {
            learning_rate,
            copies: copies.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl TrainFunction for GaussianAugmentation {
    fn step(&mut self, model: &mut Mlp, batch: &[(Point, usize)], sigmas: &[f64]) -> Result<f64> {
        if batch.len() != sigmas.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                got: sigmas.len(),
            });
        }
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut grad = MlpGrad::zeros_like(model);
        let weight = 1.0 / (batch.len() * self.copies) as f64;
        let mut noisy = vec![0.0; model.w1[0].len()];
        let mut loss = 0.0;
        for ((x, y), &sigma) in batch.iter().zip(sigmas) {
            for _ in 0..self.copies {
                for (n, xi) in noisy.iter_mut().zip(x.as_slice()) {
                    *n = xi + sigma * self.rng.sample::<f64, _>(StandardNormal);
                }
                loss += weight * model.accumulate_cross_entropy_grad(&noisy, *y, weight, &mut grad);
            }
        }
        model.apply_gradient(&grad, self.learning_rate);
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatchOutcome {
    pub sigmas: Vec<f64>,
    pub optimize_calls: usize,
    pub loss: f64,
}

/// Optimizes the scale of every input in the batch starting from its carried
/// value, then runs one trainer step with those scales. `stream` separates
/// the optimizer's noise across batches and epochs.
pub fn train_batch<T: TrainFunction>(
    spec: &mut ClassifierSpec,
    batch: &[(Point, usize)],
    sigmas: &[f64],
    opt_cfg: &SigmaOptConfig,
    trainer: &mut T,
    stream: u64,
) -> Result<TrainBatchOutcome> {
    let ClassifierSpec::Mlp(model) = spec else {
        return Err(Error::InvalidConfig("only the perceptron classifier is trainable".into()));
    };
    model.validate()?;
    if batch.len() != sigmas.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            got: sigmas.len(),
        });
    }
    let handle = ClassifierHandle::new(model.clone());
    let optimized: Vec<f64> = batch
        .par_iter()
        .zip(sigmas)
        .enumerate()
        .map(|(i, ((x, _), &sigma))| {
            let cfg = SigmaOptConfig {
                sigma0: sigma.clamp(opt_cfg.sigma_min, opt_cfg.sigma_max),
                seed: mix_seed(opt_cfg.seed, mix_seed(stream, i as u64)),
                ..*opt_cfg
            };
            Ok(optimize_sigma(&handle, x, &cfg)?.sigma_star)
        })
        .collect::<Result<_>>()?;
    let loss = trainer.step(model, batch, &optimized)?;
    Ok(TrainBatchOutcome {
        optimize_calls: optimized.len(),
        sigmas: optimized,
        loss,
    })
}

/// Settings for [`run_train_demo`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub hidden: usize,
    pub epochs: usize,
    /// Leading epochs trained with a fixed scale before per-input scales kick in.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub copies: usize,
    pub sigma0: f64,
    /// Optimizer used inside training (typically a single step per epoch).
    pub train_opt: SigmaOptConfig,
    /// Optimizer used when certifying the trained model.
    pub cert_opt: SigmaOptConfig,
    pub cert: GaussianCertConfig,
}

impl DemoConfig {
    pub fn with_seed(seed: u64) -> Self {
        let sigma0 = 0.25;
        let opt = SigmaOptConfig {
            sigma0,
            step_alpha: 0.02,
            iters_k: 1,
            n_samples: 32,
            sigma_min: 0.05,
            sigma_max: 1.0,
            grad_mode: GradMode::Analytic,
            return_mode: ReturnMode::Faithful,
            noise: NoiseKind::Gaussian,
            seed,
            ..Default::default()
        };
        Self {
            seed,
            n_train: 400,
            n_test: 100,
            hidden: 16,
            epochs: 120,
            warmup_epochs: 40,
            batch_size: 50,
            learning_rate: 0.5,
            copies: 4,
            sigma0,
            train_opt: opt,
            cert_opt: SigmaOptConfig {
                iters_k: 100,
                n_samples: 256,
                ..opt
            },
            cert: GaussianCertConfig {
                sigma: sigma0,
                n0: 100,
                n_cert: 10_000,
                seed,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub seed: u64,
    /// Fixed-scale training, certified at the fixed scale.
    pub baseline: MetricsSummary,
    /// Per-input-scale training, certified with per-input scales and memory.
    pub data_dependent: MetricsSummary,
    /// Carried scales stayed inside the optimizer bounds at every epoch.
    pub sigmas_within_bounds: bool,
}

/// Trains a perceptron on `train`. With `data_dependent` off the optimizer
/// runs with `K = 0`, i.e. plain fixed-scale augmentation.
pub fn train_model(cfg: &DemoConfig, train: &LabeledDataset, data_dependent: bool) -> Result<(Mlp, bool)> {
    let dim = train.dim().ok_or_else(|| Error::Empty("training set".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x7a1));
    let model = Mlp::new_random(dim, cfg.hidden, 2, &mut rng)?;
    let mut spec = ClassifierSpec::Mlp(model);
    let mut trainer = GaussianAugmentation::new(cfg.learning_rate, cfg.copies, mix_seed(cfg.seed, 0x7a2));
    let mut sigmas = vec![cfg.sigma0; train.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut within = true;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let active = data_dependent && epoch >= cfg.warmup_epochs;
        let opt = SigmaOptConfig {
            iters_k: if active { cfg.train_opt.iters_k } else { 0 },
            ..cfg.train_opt
        };
        for (b, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let batch: Vec<(Point, usize)> = chunk.iter().map(|&i| train.rows()[i].clone()).collect();
            let carried: Vec<f64> = chunk.iter().map(|&i| sigmas[i]).collect();
            let stream = (epoch as u64) << 32 | b as u64;
            let out = train_batch(&mut spec, &batch, &carried, &opt, &mut trainer, stream)?;
            for (&i, s) in chunk.iter().zip(out.sigmas) {
                within &= (opt.sigma_min..=opt.sigma_max).contains(&s);
                sigmas[i] = s;
            }
        }
    }
    let ClassifierSpec::Mlp(model) = spec else {
        unreachable!("spec stays a perceptron")
    };
    Ok((model, within))
}

/// Fixed-scale baseline against per-input-scale training and certification on
/// the concentric-annuli data.
pub fn run_train_demo(cfg: &DemoConfig) -> Result<DemoReport> {
    let train = concentric_annuli(cfg.n_train, mix_seed(cfg.seed, 1));
    let test = concentric_annuli(cfg.n_test, mix_seed(cfg.seed, 2));

    let (baseline_model, _) = train_model(cfg, &train, false)?;
    let (ds_model, within) = train_model(cfg, &train, true)?;

    let campaign = |mode| CampaignConfig {
        mode,
        cert: cfg.cert,
        opt: cfg.cert_opt,
        radii: default_radii(),
        scan: ScanStrategy::Linear,
    };
    let baseline = run_campaign(
        &ClassifierHandle::new(baseline_model),
        &test,
        &campaign(CampaignMode::FixedSigma),
        None,
    )?;
    let ds = run_campaign(&ClassifierHandle::new(ds_model), &test, &campaign(CampaignMode::Ds), None)?;
    info!(
        seed = cfg.seed,
        baseline_acr = baseline.metrics.acr,
        ds_acr = ds.metrics.acr,
        "training demo finished"
    );
    Ok(DemoReport {
        seed: cfg.seed,
        baseline: baseline.metrics,
        data_dependent: ds.metrics,
        sigmas_within_bounds: within,
    })
}
