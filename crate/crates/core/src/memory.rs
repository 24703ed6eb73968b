//! Memory of issued certificates for data-dependent smoothing.
//!
//! Each input is certified with its own smoothing scale, so two certificates
//! with different predictions can overlap. The store keeps every issued region
//! and, on insertion, shrinks or overrides the new region until no two
//! differently predicted regions intersect. Balls are closed: tangent regions
//! are allowed.
//!
//! The shrinking formulas only use the triangle inequality, so they apply to
//! ℓ1 balls as well as ℓ2 balls. A store never mixes norms.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::classifiers::Point;
use crate::error::{Error, Result};
use crate::smoothing::Norm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedRegion {
    pub center: Point,
    pub radius: f64,
    pub prediction: usize,
    #[serde(rename = "sigma")]
    pub sigma_used: f64,
    pub norm: Norm,
}

impl CertifiedRegion {
    pub fn new(center: Point, radius: f64, norm: Norm, prediction: usize, sigma_used: f64) -> Result<Self> {
        let region = Self {
            center,
            radius,
            prediction,
            sigma_used,
            norm,
        };
        region.validate()?;
        Ok(region)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::Domain(format!("radius must be finite and >= 0, got {}", self.radius)));
        }
        if !(self.sigma_used >= 0.0 && self.sigma_used.is_finite()) {
            return Err(Error::Domain(format!("sigma must be finite and >= 0, got {}", self.sigma_used)));
        }
        Ok(())
    }

    /// Distance between centers in the regions' norm.
    pub fn center_distance(&self, other: &CertifiedRegion) -> Result<f64> {
        if self.norm != other.norm {
            return Err(Error::NormMismatch(format!("{} region against {} region", self.norm, other.norm)));
        }
        if self.center.dim() != other.center.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.center.dim(),
                got: other.center.dim(),
            });
        }
        Ok(distance(self.norm, self.center.as_slice(), other.center.as_slice()))
    }
}

fn distance(norm: Norm, a: &[f64], b: &[f64]) -> f64 {
    let diffs = a.iter().zip(b).map(|(x, y)| x - y);
    match norm {
        Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        Norm::L1 => diffs.map(f64::abs).sum(),
    }
}

/// Largest `r <= limit` with `r + other <= dist` in floating point.
fn fit_outside(dist: f64, other: f64, limit: f64) -> f64 {
    let mut r = (dist - other).min(limit).max(0.0);
    while r > 0.0 && r + other > dist {
        r = r.next_down().max(0.0);
    }
    r
}

/// Largest `r <= limit` with `r + dist <= outer` in floating point.
fn fit_inside(dist: f64, outer: f64, limit: f64) -> f64 {
    let mut r = (outer - dist).min(limit).max(0.0);
    while r > 0.0 && r + dist > outer {
        r = r.next_down().max(0.0);
    }
    r
}

/// True iff the balls share interior points; tangent balls do not intersect.
pub fn intersect(a: &CertifiedRegion, b: &CertifiedRegion) -> Result<bool> {
    Ok(a.center_distance(b)? < a.radius + b.radius)
}

/// Radius of the largest ball centered at `cand.center` inside both `outer`
/// and `cand`. Requires `cand.center` to lie in `outer`.
pub fn largest_in_subset(outer: &CertifiedRegion, cand: &CertifiedRegion) -> Result<f64> {
    let dist = outer.center_distance(cand)?;
    if dist > outer.radius {
        return Err(Error::Precondition(format!(
            "candidate center lies outside the outer region ({dist} > {})",
            outer.radius
        )));
    }
    Ok(fit_inside(dist, outer.radius, cand.radius))
}

/// Radius of the largest ball centered at `cand.center` inside `cand` that
/// does not intersect `obstacle`. Requires `cand.center` outside `obstacle`.
pub fn largest_out_subset(obstacle: &CertifiedRegion, cand: &CertifiedRegion) -> Result<f64> {
    let dist = obstacle.center_distance(cand)?;
    if dist <= obstacle.radius {
        return Err(Error::Precondition(format!(
            "candidate center lies inside the obstacle ({dist} <= {})",
            obstacle.radius
        )));
    }
    Ok(fit_outside(dist, obstacle.radius, cand.radius))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanStrategy {
    /// Compare against every stored region.
    #[default]
    Linear,
    /// Prefilter stored regions by their first coordinate. Same results as
    /// [`ScanStrategy::Linear`] with fewer comparisons.
    Indexed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsertOutcome {
    pub prediction: usize,
    pub region: CertifiedRegion,
    pub adjusted: bool,
    /// The new center fell inside a differently predicted region.
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub inserts: u64,
    pub overlap_events: u64,
    pub containment_events: u64,
    pub comparisons: u64,
    /// Fraction of inserts that hit a differently predicted region.
    pub overlap_frequency: f64,
    /// `N p + (1 - p)(2N + n)` at the observed frequency, with `N` the store
    /// size and `n` the certification sample count.
    pub predicted_cost: f64,
}

/// Expected per-query cost with `n_stored` regions, `n_cert` Monte Carlo
/// samples and overlap frequency `p`.
pub fn predicted_cost(n_stored: usize, n_cert: u64, p: f64) -> f64 {
    let n = n_stored as f64;
    n * p + (1.0 - p) * (2.0 * n + n_cert as f64)
}

/// Stored regions sorted by first coordinate.
#[derive(Debug, Clone, Default)]
struct FirstAxisIndex {
    keys: Vec<(f64, usize)>,
    max_radius: f64,
}

impl FirstAxisIndex {
    fn insert(&mut self, key: f64, idx: usize, radius: f64) {
        let pos = self.keys.partition_point(|(k, _)| *k < key);
        self.keys.insert(pos, (key, idx));
        self.max_radius = self.max_radius.max(radius);
    }

    /// Indices, in insertion order, of every region that can touch a ball of
    /// `radius` around a center with first coordinate `key`.
    fn candidates(&self, key: f64, radius: f64) -> Vec<usize> {
        let reach = radius + self.max_radius;
        let reach = reach + 1e-9 * (1.0 + key.abs() + reach);
        let lo = self.keys.partition_point(|(k, _)| *k < key - reach);
        let hi = self.keys.partition_point(|(k, _)| *k <= key + reach);
        let mut out: Vec<usize> = self.keys[lo..hi].iter().map(|(_, i)| *i).collect();
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    regions: Vec<CertifiedRegion>,
    strategy: ScanStrategy,
    index: FirstAxisIndex,
    inserts: u64,
    comparisons: u64,
    overlap_events: u64,
    containment_events: u64,
}

impl PartialEq for MemoryStore {
    fn eq(&self, other: &Self) -> bool {
        self.regions == other.regions
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_strategy(strategy: ScanStrategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn strategy(&self) -> ScanStrategy {
        self.strategy
    }

    pub fn regions(&self) -> &[CertifiedRegion] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn comparisons(&self) -> u64 {
        self.comparisons
    }

    pub fn overlap_events(&self) -> u64 {
        self.overlap_events
    }

    fn check_compatible(&self, region: &CertifiedRegion) -> Result<()> {
        region.validate()?;
        if let Some(first) = self.regions.first() {
            if first.norm != region.norm {
                return Err(Error::NormMismatch(format!(
                    "store holds {} regions, got {}",
                    first.norm, region.norm
                )));
            }
            if first.center.dim() != region.center.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.center.dim(),
                    got: region.center.dim(),
                });
            }
        }
        Ok(())
    }

    fn scan_order(&self, region: &CertifiedRegion) -> Vec<usize> {
        match self.strategy {
            ScanStrategy::Linear => (0..self.regions.len()).collect(),
            ScanStrategy::Indexed => self.index.candidates(region.center.as_slice()[0], region.radius),
        }
    }

    /// Inserts a freshly certified region, shrinking it or overriding its
    /// prediction against differently predicted stored regions, scanned in
    /// insertion order.
    pub fn insert(&mut self, region: CertifiedRegion) -> Result<InsertOutcome> {
        self.check_compatible(&region)?;
        let order = self.scan_order(&region);
        let mut current = region;
        let mut adjusted = false;
        let mut overridden = false;
        for &i in &order {
            self.comparisons += 1;
            let stored = &self.regions[i];
            if stored.prediction == current.prediction {
                continue;
            }
            let dist = stored.center_distance(&current)?;
            if dist <= stored.radius {
                let shrunk = largest_in_subset(stored, &current)?;
                debug_assert!(
                    !overridden || shrunk >= current.radius - 1e-9,
                    "region already inside a stored ball had to shrink again"
                );
                current.radius = shrunk;
                current.prediction = stored.prediction;
                adjusted = true;
                overridden = true;
            } else if dist < stored.radius + current.radius {
                let shrunk = largest_out_subset(stored, &current)?;
                debug_assert!(
                    !overridden || shrunk >= current.radius - 1e-9,
                    "region already inside a stored ball had to shrink again"
                );
                current.radius = shrunk;
                adjusted = true;
            }
        }
        if overridden {
            // A prediction override can turn regions skipped earlier in the
            // scan into differently predicted ones. They are disjoint from the
            // containing region, so this only absorbs rounding.
            for &i in &order {
                let stored = &self.regions[i];
                if stored.prediction != current.prediction {
                    let dist = stored.center_distance(&current)?;
                    if dist < stored.radius + current.radius {
                        current.radius = fit_outside(dist, stored.radius, current.radius);
                    }
                }
            }
        }
        self.inserts += 1;
        if adjusted {
            self.overlap_events += 1;
            debug!(index = self.regions.len(), radius = current.radius, "memory adjusted a certificate");
        }
        if overridden {
            self.containment_events += 1;
        }
        let idx = self.regions.len();
        self.index.insert(current.center.as_slice()[0], idx, current.radius);
        self.regions.push(current.clone());
        Ok(InsertOutcome {
            prediction: current.prediction,
            region: current,
            adjusted,
            overridden,
        })
    }

    /// First pair of differently predicted regions that intersect, if any.
    pub fn find_violation(&self) -> Option<(usize, usize)> {
        for (i, a) in self.regions.iter().enumerate() {
            for (j, b) in self.regions.iter().enumerate().skip(i + 1) {
                if a.prediction != b.prediction
                    && distance(a.norm, a.center.as_slice(), b.center.as_slice()) < a.radius + b.radius
                {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub fn audit(&self, n_cert: u64) -> AuditReport {
        let p = if self.inserts == 0 {
            0.0
        } else {
            self.overlap_events as f64 / self.inserts as f64
        };
        AuditReport {
            inserts: self.inserts,
            overlap_events: self.overlap_events,
            containment_events: self.containment_events,
            comparisons: self.comparisons,
            overlap_frequency: p,
            predicted_cost: predicted_cost(self.regions.len(), n_cert, p),
        }
    }

    /// One JSON object per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for region in &self.regions {
            serde_json::to_writer(&mut out, region)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a store written by [`MemoryStore::save`], rejecting malformed
    /// lines and stores whose regions break the no-overlap invariant.
    pub fn load(path: impl AsRef<Path>, strategy: ScanStrategy) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut store = Self::with_strategy(strategy);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let region: CertifiedRegion =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            store.check_compatible(&region).map_err(|e| parse_err(e.to_string()))?;
            let idx = store.regions.len();
            store.index.insert(region.center.as_slice()[0], idx, region.radius);
            store.regions.push(region);
        }
        if let Some((first, second)) = store.find_violation() {
            warn!(first, second, "rejecting memory file with overlapping regions");
            return Err(Error::InvariantViolation { first, second });
        }
        Ok(store)
    }
}
