//! Monte Carlo simulation of Wiener and Brownian-bridge paths on a fine grid,
//! and one-sided boundary non-crossing probabilities for parametric boundary
//! families.
//!
//! Paths are built from i.i.d. Gaussian increments with step 1/m and checked
//! against the boundary at the grid points t = j/m only; the discretization
//! bias is one-sided (grid checking can only overestimate the non-crossing
//! probability) and is kept below Monte Carlo noise by the default m.
//!
//! Every trial gets its own generator keyed by (seed, stream, trial index), so
//! path i is identical regardless of execution order or worker count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TRIALS: usize = 10_000;
pub const DEFAULT_GRID_POINTS: usize = 10_000;
pub const MIN_TRIALS: usize = 100;
pub const MIN_GRID_POINTS: usize = 100;

/// Engine settings: Monte Carlo trial count, time grid resolution, seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub trials: usize,
    pub grid_points: usize,
    pub seed: u64,
}

impl EngineConfig {
    pub fn new(trials: usize, grid_points: usize, seed: u64) -> Result<Self> {
        let cfg = Self { trials, grid_points, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self { trials: DEFAULT_TRIALS, grid_points: DEFAULT_GRID_POINTS, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < MIN_TRIALS {
            return Err(Error::InvalidConfig(format!(
                "trials must be >= {MIN_TRIALS}, got {}",
                self.trials
            )));
        }
        if self.grid_points < MIN_GRID_POINTS {
            return Err(Error::InvalidConfig(format!(
                "grid_points must be >= {MIN_GRID_POINTS}, got {}",
                self.grid_points
            )));
        }
        Ok(())
    }
}

/// Which process the paths follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Process {
    Wiener,
    /// Standard Brownian bridge B(t) = W(t) - t W(1).
    Bridge,
}

/// One-sided boundary shapes the calibrator optimizes over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    /// beta0 + beta1 sqrt(t), checked against a Wiener path.
    AffineSqrt { beta0: f64, beta1: f64 },
    /// gamma t^k with 0 <= k < 1/2, checked against a Wiener path.
    Power { gamma: f64, k: f64 },
    /// delta0 + delta1 sqrt(t(1-t)), checked against a bridge path.
    BridgeAffine { delta0: f64, delta1: f64 },
}

fn coefficient(name: &'static str, value: f64) -> Result<f64> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::InvalidCoefficient { name, value });
    }
    Ok(value)
}

impl Boundary {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Boundary::AffineSqrt { beta0, beta1 } => {
                coefficient("beta0", beta0)?;
                coefficient("beta1", beta1)?;
            }
            Boundary::Power { gamma, k } => {
                coefficient("gamma", gamma)?;
                if !(0.0..0.5).contains(&k) {
                    return Err(Error::InvalidPowerExponent(k));
                }
            }
            Boundary::BridgeAffine { delta0, delta1 } => {
                coefficient("delta0", delta0)?;
                coefficient("delta1", delta1)?;
            }
        }
        Ok(())
    }

    /// Process this boundary is defined for.
    pub fn process(&self) -> Process {
        match self {
            Boundary::BridgeAffine { .. } => Process::Bridge,
            _ => Process::Wiener,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Boundary::AffineSqrt { beta0, beta1 } => beta0 + beta1 * t.sqrt(),
            Boundary::Power { gamma, k } => gamma * t.powf(k),
            Boundary::BridgeAffine { delta0, delta1 } => delta0 + delta1 * (t * (1.0 - t)).sqrt(),
        }
    }

    fn table(&self, m: usize) -> Vec<f64> {
        (1..=m).map(|j| self.value(j as f64 / m as f64)).collect()
    }
}

/// Monte Carlo probability estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub trials: usize,
}

impl CrossingEstimate {
    fn from_count(ok: usize, trials: usize) -> Self {
        let p = ok as f64 / trials as f64;
        Self { probability: p, std_error: (p * (1.0 - p) / trials as f64).sqrt(), trials }
    }
}

pub(crate) const STREAM_PATHS: u64 = 0;
pub(crate) const STREAM_VALIDATION: u64 = 1;

fn trial_rng(seed: u64, stream: u64, trial: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&trial.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Deterministic child seed for replication `index` of purpose `tag`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    trial_rng(seed, tag, index).next_u64()
}

/// Fills `out[j] = W((j+1)/m)` from the trial's own generator.
fn fill_wiener(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let sd = (1.0 / out.len() as f64).sqrt();
    let mut w = 0.0;
    for slot in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        w += sd * z;
        *slot = w;
    }
}

/// Streaming Wiener check against a precomputed boundary table.
fn wiener_stays_below(rng: &mut ChaCha8Rng, bound: &[f64]) -> bool {
    let sd = (1.0 / bound.len() as f64).sqrt();
    let mut w = 0.0;
    for b in bound {
        let z: f64 = StandardNormal.sample(rng);
        w += sd * z;
        if w > *b {
            return false;
        }
    }
    true
}

/// Bridge check; `path` holds the underlying Wiener path.
fn bridge_stays_below(path: &[f64], bound: &[f64]) -> bool {
    let m = path.len();
    let wm = path[m - 1];
    for j in 0..m {
        let t = (j + 1) as f64 / m as f64;
        if path[j] - t * wm > bound[j] {
            return false;
        }
    }
    true
}

pub(crate) fn noncrossing_probability_stream(
    b: &Boundary,
    cfg: &EngineConfig,
    stream: u64,
) -> Result<CrossingEstimate> {
    b.validate()?;
    cfg.validate()?;
    let bound = b.table(cfg.grid_points);
    let m = cfg.grid_points;
    let seed = cfg.seed;
    let ok = match b.process() {
        Process::Wiener => (0..cfg.trials as u64)
            .into_par_iter()
            .filter(|&trial| {
                let mut rng = trial_rng(seed, stream, trial);
                wiener_stays_below(&mut rng, &bound)
            })
            .count(),
        Process::Bridge => (0..cfg.trials as u64)
            .into_par_iter()
            .map_init(
                || vec![0.0; m],
                |scratch, trial| {
                    let mut rng = trial_rng(seed, stream, trial);
                    fill_wiener(&mut rng, scratch);
                    bridge_stays_below(scratch, &bound)
                },
            )
            .filter(|&ok| ok)
            .count(),
    };
    Ok(CrossingEstimate::from_count(ok, cfg.trials))
}

/// Estimates P(process(t) <= boundary(t) for all grid t).
pub fn noncrossing_probability(b: &Boundary, cfg: &EngineConfig) -> Result<CrossingEstimate> {
    noncrossing_probability_stream(b, cfg, STREAM_PATHS)
}

/// Upper convex hull of points with non-decreasing x. Keeps every point that
/// can maximize y - s*x for some slope s, which is all the later evaluations
/// need: the maximizer of a linear functional increasing in y lies on the
/// upper hull.
fn upper_hull(points: impl Iterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in points {
        if let Some(last) = hull.last() {
            if last.0 == p.0 {
                if p.1 <= last.1 {
                    continue;
                }
                hull.pop();
            }
        }
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            if (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

fn hull_max_dev(hull: &[(f64, f64)], slope: f64) -> f64 {
    hull.iter().map(|&(x, y)| y - slope * x).fold(f64::NEG_INFINITY, f64::max)
}

fn wiener_hull(path: &[f64]) -> Vec<(f64, f64)> {
    let m = path.len();
    upper_hull((0..m).map(|j| {
        let t = (j + 1) as f64 / m as f64;
        (t.sqrt(), path[j])
    }))
}

/// Bridge points sorted by x = sqrt(t(1-t)): the halves t <= 1/2 and t > 1/2
/// are each monotone in x, so an O(m) two-pointer merge suffices.
fn bridge_hull(path: &[f64]) -> Vec<(f64, f64)> {
    let m = path.len();
    let wm = path[m - 1];
    let point = |j: usize| {
        let t = (j + 1) as f64 / m as f64;
        ((t * (1.0 - t)).sqrt(), path[j] - t * wm)
    };
    let half = m / 2;
    let mut left = 0usize;
    let mut right = m;
    let merged = std::iter::from_fn(move || {
        let l = (left < half).then(|| point(left));
        let r = (right > half).then(|| point(right - 1));
        match (l, r) {
            (Some(a), Some(b)) => {
                if a.0 <= b.0 {
                    left += 1;
                    Some(a)
                } else {
                    right -= 1;
                    Some(b)
                }
            }
            (Some(a), None) => {
                left += 1;
                Some(a)
            }
            (None, Some(b)) => {
                right -= 1;
                Some(b)
            }
            (None, None) => None,
        }
    });
    upper_hull(merged)
}

/// A frozen batch of simulated paths, summarized per path by the upper convex
/// hull of (basis(t), path(t)). Feasibility counts evaluated on the batch are
/// exactly monotone in the boundary coefficients, which the calibration
/// searches rely on.
pub struct PathBatch {
    cfg: EngineConfig,
    process: Process,
    hulls: Vec<Vec<(f64, f64)>>,
    terminal: Vec<f64>,
}

/// Materializes a batch of trial paths for repeated boundary evaluation.
pub fn simulate_paths(cfg: &EngineConfig, process: Process) -> Result<PathBatch> {
    cfg.validate()?;
    let m = cfg.grid_points;
    let seed = cfg.seed;
    let (hulls, terminal): (Vec<_>, Vec<_>) = (0..cfg.trials as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; m],
            |scratch, trial| {
                let mut rng = trial_rng(seed, STREAM_PATHS, trial);
                fill_wiener(&mut rng, scratch);
                match process {
                    Process::Wiener => (wiener_hull(scratch), scratch[m - 1]),
                    Process::Bridge => {
                        let wm = scratch[m - 1];
                        (bridge_hull(scratch), scratch[m - 1] - 1.0 * wm)
                    }
                }
            },
        )
        .unzip();
    Ok(PathBatch { cfg: *cfg, process, hulls, terminal })
}

impl PathBatch {
    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn process(&self) -> Process {
        self.process
    }

    pub fn trials(&self) -> usize {
        self.hulls.len()
    }

    /// Terminal value of each path: W(1), or exactly 0 for bridge paths.
    pub fn terminal_values(&self) -> &[f64] {
        &self.terminal
    }

    /// Per-path maximum of the path itself (slope-0 deviation).
    pub fn path_maxima(&self) -> Vec<f64> {
        self.hulls.iter().map(|h| hull_max_dev(h, 0.0)).collect()
    }

    /// Number of paths staying weakly below intercept + slope * basis(t) at
    /// every grid point, where basis is sqrt(t) for Wiener batches and
    /// sqrt(t(1-t)) for bridge batches.
    pub fn affine_noncross_count(&self, intercept: f64, slope: f64) -> usize {
        self.hulls.iter().filter(|h| hull_max_dev(h, slope) <= intercept).count()
    }

    /// Per-path maximum of W(t) / t^k, regenerated from the batch seeds; a
    /// power boundary gamma t^k holds for a path iff gamma >= its maximum.
    pub fn power_maxima(&self, k: f64) -> Result<Vec<f64>> {
        if self.process != Process::Wiener {
            return Err(Error::ProcessMismatch { expected: Process::Wiener, got: self.process });
        }
        Boundary::Power { gamma: 0.0, k }.validate()?;
        let m = self.cfg.grid_points;
        let inv_tk: Vec<f64> = (1..=m).map(|j| (j as f64 / m as f64).powf(-k)).collect();
        let seed = self.cfg.seed;
        Ok((0..self.trials() as u64)
            .into_par_iter()
            .map_init(
                || vec![0.0; m],
                |scratch, trial| {
                    let mut rng = trial_rng(seed, STREAM_PATHS, trial);
                    fill_wiener(&mut rng, scratch);
                    scratch
                        .iter()
                        .zip(&inv_tk)
                        .map(|(w, inv)| w * inv)
                        .fold(f64::NEG_INFINITY, f64::max)
                },
            )
            .collect())
    }

    /// Non-crossing count for a boundary matching this batch's process.
    pub fn noncrossing_count(&self, b: &Boundary) -> Result<usize> {
        b.validate()?;
        let got = self.process;
        match *b {
            Boundary::AffineSqrt { beta0, beta1 } => {
                if got != Process::Wiener {
                    return Err(Error::ProcessMismatch { expected: Process::Wiener, got });
                }
                Ok(self.affine_noncross_count(beta0, beta1))
            }
            Boundary::BridgeAffine { delta0, delta1 } => {
                if got != Process::Bridge {
                    return Err(Error::ProcessMismatch { expected: Process::Bridge, got });
                }
                Ok(self.affine_noncross_count(delta0, delta1))
            }
            Boundary::Power { gamma, k } => {
                let maxima = self.power_maxima(k)?;
                Ok(maxima.iter().filter(|&&g| g <= gamma).count())
            }
        }
    }

    pub fn noncrossing_probability(&self, b: &Boundary) -> Result<CrossingEstimate> {
        Ok(CrossingEstimate::from_count(self.noncrossing_count(b)?, self.trials()))
    }
}

/// Writes the first `count` paths of the batch keyed by `cfg` as CSV with
/// columns t, path_0, ..; paths are regenerated from the per-trial seeds, so
/// the dump matches the batch exactly.
pub fn write_paths_csv<W: std::io::Write>(
    cfg: &EngineConfig,
    process: Process,
    count: usize,
    mut w: W,
) -> Result<()> {
    cfg.validate()?;
    let m = cfg.grid_points;
    let count = count.min(cfg.trials);
    let mut paths: Vec<Vec<f64>> = Vec::with_capacity(count);
    for trial in 0..count as u64 {
        let mut path = vec![0.0; m];
        let mut rng = trial_rng(cfg.seed, STREAM_PATHS, trial);
        fill_wiener(&mut rng, &mut path);
        if process == Process::Bridge {
            let wm = path[m - 1];
            for (j, v) in path.iter_mut().enumerate() {
                let t = (j + 1) as f64 / m as f64;
                *v -= t * wm;
            }
        }
        paths.push(path);
    }
    let header: Vec<String> =
        std::iter::once("t".to_string()).chain((0..count).map(|i| format!("path_{i}"))).collect();
    writeln!(w, "{}", header.join(","))?;
    let zeros = vec!["0".to_string(); count + 1];
    writeln!(w, "{}", zeros.join(","))?;
    for j in 0..m {
        let t = (j + 1) as f64 / m as f64;
        let row: Vec<String> = std::iter::once(t.to_string())
            .chain(paths.iter().map(|p| p[j].to_string()))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
