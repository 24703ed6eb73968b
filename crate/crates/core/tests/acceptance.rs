//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; the process exits non-zero if
//! any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;

use certsmooth::classifiers::{halfspace_smoothed_prob, nested_ball_smoothed_prob};
use certsmooth::classifiers::{ClassifierHandle, ClassifierSpec, HardHalfspace, Mlp, NestedBall, Point, ProbitHalfspace};
use certsmooth::memory::{largest_in_subset, largest_out_subset, CertifiedRegion, MemoryStore};
use certsmooth::numeric::{binom_lower_confidence, clamped_quantile, P_CLAMP};
use certsmooth::pipeline::synthetic::two_gaussian_clusters;
use certsmooth::pipeline::{run_train_demo, DemoConfig};
use certsmooth::sigma_opt::{draw_noise, optimize_sigma, optimize_sigma_with_noise, GradMode, ReturnMode, SigmaOptConfig};
use certsmooth::smoothing::{
    certify_l1, certify_l2, mix_seed, proxy_radius, sample_counts, GaussianCertConfig, NoiseKind, Norm, Prediction,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn pt(v: Vec<f64>) -> Point {
    Point::new(v).expect("finite coordinates")
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn criterion_1() -> Verdict {
    const N: u64 = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let configs: Vec<_> = (0..50)
        .map(|i| {
            let d = rng.random_range(1..=5);
            let w = gaussian_vec(&mut rng, d);
            let x = gaussian_vec(&mut rng, d);
            let b = rng.random_range(-1.0..1.0);
            let sigma = rng.random_range(0.1..2.0);
            (i as u64, w, b, x, sigma)
        })
        .collect();
    let z: Vec<f64> = configs
        .par_iter()
        .map(|(i, w, b, x, sigma)| {
            let c = ClassifierHandle::new(HardHalfspace::new(w.clone(), *b).unwrap());
            let (w, x) = (pt(w.clone()), pt(x.clone()));
            let exact = halfspace_smoothed_prob(&w, *b, &x, *sigma).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(1, *i));
            let counts = sample_counts(&c, &x, *sigma, NoiseKind::Gaussian, N, &mut rng).unwrap();
            let estimate = counts[1] as f64 / N as f64;
            let se = (exact * (1.0 - exact) / N as f64).sqrt();
            let err = (estimate - exact).abs();
            // A zero standard error only allows an exact match.
            if se == 0.0 {
                if err == 0.0 { 0.0 } else { f64::INFINITY }
            } else {
                err / se
            }
        })
        .collect();
    let worst = z.iter().copied().fold(0.0, f64::max);
    let beyond = z.iter().filter(|v| **v > 3.0).count();
    let mean_sq = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
    verdict(
        worst <= 3.0,
        format!(
            "worst deviation {worst:.2} standard errors, {beyond}/50 beyond 3, mean squared deviation {mean_sq:.2}"
        ),
    )
}

fn criterion_2() -> Verdict {
    let c = ClassifierHandle::new(ProbitHalfspace::new(vec![1.0, 0.0], 0.0, 0.5).unwrap());
    let x = pt(vec![1.0, 0.0]);
    let cfg = SigmaOptConfig {
        n_samples: 100_000,
        seed: 2,
        ..Default::default()
    };
    let noise = draw_noise(&cfg, 2);
    let mut worst: f64 = 0.0;
    for sigma in [0.1f64, 0.25, 0.5, 1.0, 2.0] {
        let exact = sigma / (0.25 + sigma * sigma).sqrt();
        let got = proxy_radius(&c, &x, sigma, &noise, P_CLAMP).unwrap().radius;
        worst = worst.max((got - exact).abs() / exact);
    }
    verdict(worst <= 0.02, format!("worst relative error {:.3}%", 100.0 * worst))
}

/// Plug-in radius of the nested ball (rho = 1, d = 2) at the origin.
fn nested_ball_radius(sigma: f64) -> f64 {
    let p = nested_ball_smoothed_prob(1.0, &pt(vec![0.0, 0.0]), sigma).unwrap();
    0.5 * sigma * (clamped_quantile(p, P_CLAMP) - clamped_quantile(1.0 - p, P_CLAMP)).abs()
}

fn grid_max(lo: f64, hi: f64) -> f64 {
    (1..=4000)
        .map(|i| nested_ball_radius(lo + (hi - lo) * i as f64 / 4000.0))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn criterion_3() -> Verdict {
    let c = ClassifierHandle::new(NestedBall::new(1.0, 2).unwrap());
    let x = pt(vec![0.0, 0.0]);
    let base = SigmaOptConfig {
        sigma_min: 0.05,
        sigma_max: 2.0,
        step_alpha: 5e-3,
        iters_k: 500,
        n_samples: 10_000,
        grad_mode: GradMode::ScalarFd,
        fd_step: 0.02,
        seed: 3,
        ..Default::default()
    };
    // The global maximum lies on the outside-class branch at the upper bound;
    // the inside class has its own peak below sigma = 0.8.
    let basins = [("global", 1.0, 2.0), ("inside-class", 0.25, 0.8)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, sigma0, hi) in basins {
        let target = grid_max(base.sigma_min, hi);
        for (mode, tol) in [(ReturnMode::BestIterate, 0.10), (ReturnMode::Faithful, 0.15)] {
            let cfg = SigmaOptConfig {
                sigma0,
                sigma_max: hi,
                return_mode: mode,
                ..base
            };
            let out = optimize_sigma(&c, &x, &cfg).unwrap();
            let attained = nested_ball_radius(out.sigma_star);
            let rel = (target - attained).abs() / target;
            pass &= rel <= tol;
            parts.push(format!("{name}/{mode:?} {:.1}%", 100.0 * rel));
        }
    }
    verdict(pass, format!("gap to grid maximum: {}", parts.join(", ")))
}

fn random_classifier(rng: &mut ChaCha8Rng, d: usize) -> (ClassifierHandle, GradMode) {
    match rng.random_range(0..4) {
        0 => {
            let w = gaussian_vec(rng, d);
            let s = rng.random_range(0.1..2.0);
            let spec = ClassifierSpec::ProbitHalfspace {
                w,
                b: rng.random_range(-1.0..1.0),
                s,
            };
            (spec.build().unwrap(), GradMode::Analytic)
        }
        1 => {
            let k = rng.random_range(2..=4);
            let weights = (0..k).map(|_| gaussian_vec(rng, d)).collect();
            let bias = gaussian_vec(rng, k);
            let spec = ClassifierSpec::AffineSoftmax { weights, bias };
            (spec.build().unwrap(), GradMode::Analytic)
        }
        2 => {
            let hidden = rng.random_range(1..=8);
            let spec = ClassifierSpec::Mlp(Mlp::new_random(d, hidden, 3, rng).unwrap());
            (spec.build().unwrap(), GradMode::Analytic)
        }
        _ => {
            let rho = rng.random_range(0.2..2.0);
            let c = ClassifierHandle::new(NestedBall::new(rho, d).unwrap());
            (c, GradMode::ScalarFd)
        }
    }
}

fn criterion_4() -> Verdict {
    let violations: usize = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(4, i));
            let d = rng.random_range(1..=5);
            let (c, grad_mode) = random_classifier(&mut rng, d);
            let x = pt(gaussian_vec(&mut rng, d));
            let sigma_min = rng.random_range(0.01..0.2);
            let sigma_max = rng.random_range(0.5..2.5);
            let cfg = SigmaOptConfig {
                sigma0: rng.random_range(sigma_min..sigma_max),
                sigma_min,
                sigma_max,
                step_alpha: 10f64.powf(rng.random_range(-4.0..0.0)),
                iters_k: rng.random_range(0..30),
                n_samples: rng.random_range(1..=64),
                grad_mode,
                return_mode: ReturnMode::BestIterate,
                seed: i,
                ..Default::default()
            };
            let noise = draw_noise(&cfg, d);
            let out = optimize_sigma_with_noise(&c, &x, &cfg, &noise).unwrap();
            let r_star = proxy_radius(&c, &x, out.sigma_star, &noise, cfg.p_clamp).unwrap().radius;
            let r0 = proxy_radius(&c, &x, cfg.sigma0, &noise, cfg.p_clamp).unwrap().radius;
            usize::from(r_star < r0)
        })
        .sum();
    verdict(violations == 0, format!("{violations} violations in 1000 configurations"))
}

fn criterion_5() -> Verdict {
    let c = ClassifierHandle::new(HardHalfspace::new(vec![1.0, 0.0], 0.0).unwrap());
    let x = pt(vec![1.0, 0.0]);
    let outcomes: Vec<(bool, f64)> = (0..1000u64)
        .into_par_iter()
        .map(|run| {
            let cfg = GaussianCertConfig {
                sigma: 0.25,
                n0: 100,
                n_cert: 100_000,
                seed: mix_seed(5, run),
                ..Default::default()
            };
            let out = certify_l2(&c, &x, &cfg).unwrap();
            // A certificate for the wrong class would be unsound at any radius.
            let sound = match out.prediction {
                Prediction::Class(1) => out.radius <= 1.0,
                Prediction::Class(_) => false,
                Prediction::Abstain => true,
            };
            (sound, out.radius)
        })
        .collect();
    let sound = outcomes.iter().filter(|(ok, _)| *ok).count();
    let max_radius = outcomes.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    verdict(sound >= 999, format!("{sound}/1000 sound, largest radius {max_radius:.4}"))
}

fn criterion_6() -> Verdict {
    let mut worst: f64 = 0.0;
    for alpha in [0.05, 0.001] {
        for n in 1..=1000u64 {
            let got = binom_lower_confidence(n, n, alpha).unwrap();
            worst = worst.max((got - alpha.powf(1.0 / n as f64)).abs());
        }
    }
    let closed_form = worst <= 1e-12;

    const TRIALS: u64 = 100_000;
    let (n, p) = (100u64, 0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let binomial = Binomial::new(n, p).unwrap();
    let mut coverage_ok = true;
    let mut parts = Vec::new();
    for alpha in [0.05, 0.001] {
        let lower: Vec<f64> = (0..=n).map(|k| binom_lower_confidence(k, n, alpha).unwrap()).collect();
        let covered = (0..TRIALS).filter(|_| lower[binomial.sample(&mut rng) as usize] <= p).count();
        let coverage = covered as f64 / TRIALS as f64;
        let target = 1.0 - alpha;
        let se = (alpha * (1.0 - alpha) / TRIALS as f64).sqrt();
        // The bound is exact, so coverage may only err on the conservative side.
        let ok = coverage >= target - 3.0 * se;
        coverage_ok &= ok;
        parts.push(format!("alpha {alpha}: coverage {coverage:.5} (target {target})"));
    }
    verdict(
        closed_form && coverage_ok,
        format!("closed-form error {worst:.1e}; {}", parts.join("; ")),
    )
}

fn random_region(rng: &mut ChaCha8Rng, d: usize, spread: f64, max_radius: f64, norm: Norm, classes: usize) -> CertifiedRegion {
    let center = (0..d).map(|_| rng.random_range(-spread..spread)).collect();
    let radius = rng.random_range(0.0..=max_radius);
    CertifiedRegion::new(pt(center), radius, norm, rng.random_range(0..classes), 0.25).unwrap()
}

fn distance(norm: Norm, a: &[f64], b: &[f64]) -> f64 {
    let diffs = a.iter().zip(b).map(|(x, y)| x - y);
    match norm {
        Norm::L2 => diffs.map(|v| v * v).sum::<f64>().sqrt(),
        Norm::L1 => diffs.map(f64::abs).sum(),
    }
}

fn cross_prediction_violations(store: &MemoryStore) -> usize {
    let regions = store.regions();
    let mut bad = 0;
    for (i, a) in regions.iter().enumerate() {
        for b in &regions[i + 1..] {
            if a.prediction != b.prediction
                && distance(a.norm, a.center.as_slice(), b.center.as_slice()) < a.radius + b.radius
            {
                bad += 1;
            }
        }
    }
    bad
}

/// Uniform point in the ℓ2 ball, or on its boundary sphere when `on_sphere`.
fn ball_point(rng: &mut ChaCha8Rng, center: &[f64], radius: f64, on_sphere: bool) -> Vec<f64> {
    let dir = gaussian_vec(rng, center.len());
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = if on_sphere {
        radius
    } else {
        radius * rng.random::<f64>().powf(1.0 / center.len() as f64)
    };
    center.iter().zip(&dir).map(|(c, v)| c + scale * v / len).collect()
}

/// Checks a fitted radius against sampled points and a just-too-large witness.
fn containment_oracle(rng: &mut ChaCha8Rng, d: usize) -> bool {
    let a = random_region(rng, d, 1.5, 2.0, Norm::L2, 1);
    let b = random_region(rng, d, 1.5, 2.0, Norm::L2, 1);
    let (ca, cb) = (a.center.as_slice(), b.center.as_slice());
    let dist = distance(Norm::L2, ca, cb);
    let inside = dist <= a.radius;
    let r = if inside {
        largest_in_subset(&a, &b).unwrap()
    } else {
        largest_out_subset(&a, &b).unwrap()
    };
    if !(0.0..=b.radius).contains(&r) {
        return false;
    }
    let tol = 1e-12 * (1.0 + dist + a.radius);
    for i in 0..10_000 {
        let p = ball_point(rng, cb, r, i % 2 == 0);
        let to_a = distance(Norm::L2, &p, ca);
        let ok = if inside { to_a <= a.radius + tol } else { to_a >= a.radius - tol };
        if !ok {
            return false;
        }
    }
    if r >= b.radius {
        return true;
    }
    // Growing the ball slightly must break containment (or disjointness).
    let eps = 1e-9 * (1.0 + dist + a.radius);
    let dir: Vec<f64> = if dist > 0.0 {
        cb.iter().zip(ca).map(|(q, c)| (q - c) / dist).collect()
    } else {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    };
    let sign = if inside { 1.0 } else { -1.0 };
    let witness: Vec<f64> = cb.iter().zip(&dir).map(|(q, u)| q + sign * (r + eps) * u).collect();
    let to_a = distance(Norm::L2, &witness, ca);
    if inside {
        to_a > a.radius
    } else {
        to_a < a.radius
    }
}

fn criterion_7() -> Verdict {
    let (violations, errors): (usize, usize) = (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(7, i));
            let d = [1, 2, 5][rng.random_range(0..3)];
            let norm = if rng.random_bool(0.2) { Norm::L1 } else { Norm::L2 };
            let len = rng.random_range(2..=40);
            let mut store = MemoryStore::new();
            for _ in 0..len {
                if store.insert(random_region(&mut rng, d, 2.0, 2.0, norm, 3)).is_err() {
                    return (0, 1);
                }
            }
            (cross_prediction_violations(&store), 0)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let geometry_failures: usize = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(77, i));
            let d = [1, 2, 5][rng.random_range(0..3)];
            usize::from(!containment_oracle(&mut rng, d))
        })
        .sum();
    verdict(
        violations == 0 && errors == 0 && geometry_failures == 0,
        format!(
            "{violations} invariant violations and {errors} insert errors in 10000 sequences; \
             {geometry_failures}/1000 ball pairs disagree with the sampling oracle"
        ),
    )
}

type RegionKey = (Vec<u64>, u64, usize);

fn multiset(store: &MemoryStore) -> Vec<RegionKey> {
    let mut keys: Vec<RegionKey> = store
        .regions()
        .iter()
        .map(|r| {
            (
                r.center.as_slice().iter().map(|v| v.to_bits()).collect(),
                r.radius.to_bits(),
                r.prediction,
            )
        })
        .collect();
    keys.sort();
    keys
}

fn build(regions: &[CertifiedRegion]) -> MemoryStore {
    let mut store = MemoryStore::new();
    for r in regions {
        store.insert(r.clone()).unwrap();
    }
    store
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut sequences = Vec::new();
    let mut drawn = 0;
    while sequences.len() < 100 {
        drawn += 1;
        let seq: Vec<CertifiedRegion> = (0..20).map(|_| random_region(&mut rng, 2, 10.0, 1.0, Norm::L2, 3)).collect();
        if build(&seq).overlap_events() == 0 {
            sequences.push(seq);
        }
    }
    let mismatches: usize = sequences
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let reference = multiset(&build(seq));
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(88, i as u64));
            (0..20)
                .filter(|_| {
                    let mut perm = seq.clone();
                    perm.shuffle(&mut rng);
                    let store = build(&perm);
                    store.overlap_events() != 0 || multiset(&store) != reference
                })
                .count()
        })
        .sum();
    verdict(
        mismatches == 0,
        format!("{mismatches} differing permutations out of 2000 ({drawn} sequences drawn for 100 overlap-free)"),
    )
}

fn criterion_9() -> Verdict {
    const N: u64 = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let configs: Vec<_> = (0..50u64)
        .map(|i| {
            let d = rng.random_range(1..=5);
            let lambda = rng.random_range(0.1..2.0);
            let mut x = gaussian_vec(&mut rng, d);
            // Keep the top class well clear of abstention.
            x[0] = lambda * rng.random_range(0.2..0.9);
            (i, d, lambda, x)
        })
        .collect();
    let (worst_se, exact_radius) = configs
        .par_iter()
        .map(|(i, d, lambda, x)| {
            let c = ClassifierHandle::new(HardHalfspace::axis_threshold(*d, 0, 0.0).unwrap());
            let closed = (x[0] + lambda) / (2.0 * lambda);
            let x = pt(x.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(99, *i));
            let counts = sample_counts(&c, &x, *lambda, NoiseKind::Uniform, N, &mut rng).unwrap();
            let estimate = counts[1] as f64 / N as f64;
            let se = (closed * (1.0 - closed) / N as f64).sqrt();
            let cfg = GaussianCertConfig {
                n0: 100,
                n_cert: N,
                seed: mix_seed(9, *i),
                ..Default::default()
            };
            let out = certify_l1(&c, &x, *lambda, &cfg).unwrap();
            let exact = out.prediction == Prediction::Class(1)
                && out.norm == Norm::L1
                && out.radius == lambda * (2.0 * out.p_lower - 1.0);
            ((estimate - closed).abs() / se, exact)
        })
        .reduce(|| (0.0, true), |a, b| (a.0.max(b.0), a.1 && b.1));
    verdict(
        worst_se <= 3.0 && exact_radius,
        format!(
            "worst deviation {worst_se:.2} standard errors; radius identity {}",
            if exact_radius { "exact in all 50" } else { "broken" }
        ),
    )
}

fn criterion_10() -> Verdict {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..10 {
        let report = run_train_demo(&DemoConfig::with_seed(seed)).unwrap();
        let (base, ds) = (report.baseline.acr, report.data_dependent.acr);
        if ds > base {
            wins += 1;
        }
        parts.push(format!("{base:.3}->{ds:.3}"));
    }
    verdict(wins >= 8, format!("data-dependent ACR higher in {wins}/10 seeds [{}]", parts.join(" ")))
}

fn run_certify(dir: &Path, out: &str) -> Result<Vec<u8>, String> {
    let output = Command::new(env!("CARGO_BIN_EXE_certsmooth"))
        .current_dir(dir)
        .args([
            "certify",
            "--sigma0",
            "0.25",
            "--alpha-step",
            "1e-4",
            "--iters",
            "100",
            "--n",
            "1",
            "--n0",
            "100",
            "--n-cert",
            "100000",
            "--alpha-fail",
            "0.001",
            "--dataset",
            "data.csv",
            "--classifier",
            "model.json",
            "--seed",
            "11",
            "--out",
            out,
        ])
        .output()
        .map_err(|e| e.to_string())?;
    if !output.status.success() {
        return Err(format!("certify exited with {}", output.status));
    }
    std::fs::read(dir.join(out)).map_err(|e| e.to_string())
}

fn criterion_11() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    two_gaussian_clusters(20, 11).save(dir.path().join("data.csv")).unwrap();
    ClassifierSpec::AffineSoftmax {
        weights: vec![vec![-2.0, 0.0], vec![2.0, 0.0]],
        bias: vec![0.0, 0.0],
    }
    .save(dir.path().join("model.json"))
    .unwrap();
    match (run_certify(dir.path(), "first.csv"), run_certify(dir.path(), "second.csv")) {
        (Ok(a), Ok(b)) => verdict(
            a == b && !a.is_empty(),
            format!("two runs wrote {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
        ),
        (Err(e), _) | (_, Err(e)) => verdict(false, e),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict, Option<Duration>); 11] = [
        ("smoothed-probability oracle", criterion_1, Some(Duration::from_secs(30))),
        ("plug-in radius closed form", criterion_2, Some(Duration::from_secs(30))),
        ("optimizer vs grid oracle", criterion_3, Some(Duration::from_secs(120))),
        ("best iterate never loses to sigma0", criterion_4, None),
        ("certification soundness", criterion_5, Some(Duration::from_secs(300))),
        ("Clopper-Pearson bound", criterion_6, None),
        ("memory invariant and geometry", criterion_7, None),
        ("order invariance", criterion_8, None),
        ("l1 certificate", criterion_9, None),
        ("training demo", criterion_10, Some(Duration::from_secs(600))),
        ("deterministic reports", criterion_11, None),
    ];
    let mut failures = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let mut v = run();
        let elapsed = start.elapsed();
        if let Some(limit) = budget {
            if elapsed > limit {
                v.pass = false;
                v.detail.push_str(&format!("; over the {}s budget", limit.as_secs()));
            }
        }
        if !v.pass {
            failures += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {} ({:.1}s)",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failures} failed", 11 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
