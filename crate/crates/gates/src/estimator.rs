//! Effect curve estimation on the grid p = i/n.
//!
//! The curve value at p averages a per-unit statistic over the top `floor(np)`
//! units by score. On the grid p = i/n the floor is exact, so the prefactor
//! 1/floor(np) and 1/(np) coincide; off-grid queries evaluate at the largest
//! grid point <= p.
//!
//! The plug-in variance at p is
//!
//! ```text
//! V(p) = (1/p^2) { S2_p1/n1 + S2_p0/n0 - p(1-p)/(n-1) * value(p)^2 }
//! ```
//!
//! where `S2_pt` is the sample variance (divisor n_t - 1) of the per-unit
//! statistic `1{rank <= np} * y` taken over every unit observed in arm t, and
//! `value(p)` is the curve value itself. The adjusted families substitute the
//! per-unit variable that makes `p * value(p)` the difference of the two arm
//! means of that variable:
//!
//! * plain: `1{sel} y`
//! * cost-adjusted: `1{sel}(y - (n1/n) c_p(x))` in arm 1,
//!   `1{sel}(y + (n0/n) c_p(x))` in arm 0
//! * mean-adjusted: `(1{sel} - p^2) y`, which makes the variance at p = 1
//!   exactly zero
//!
//! Covariate curves treat the covariate as an auxiliary outcome with no arm
//! structure; their variance is the within-selected-group sample variance over
//! the selected count, so a constant covariate gets exactly zero width.
//!
//! Each variance is clamped below at `1e-12 * scale^2`, with `scale^2` the
//! family's own unclamped variance at p = 1, because the subtraction term can
//! marginally dominate at tiny p.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde_json::json;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::SortedDataset;
use crate::error::{Error, Result};

/// Per-unit cost of treatment as a function of (covariates, p).
pub type CostFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Which per-unit statistic the curve averages.
#[derive(Clone)]
pub enum StatisticFamily {
    /// Inverse-probability-weighted effect proxy.
    Plain,
    /// Effect proxy minus a known treatment cost c_p(x).
    CostAdjusted(CostFn),
    /// Effect proxy centered so the curve is exactly 0 at p = 1.
    MeanAdjusted,
    /// Covariate j treated as an auxiliary outcome.
    Covariate(usize),
}

impl StatisticFamily {
    pub fn label(&self) -> String {
        match self {
            StatisticFamily::Plain => "plain".into(),
            StatisticFamily::CostAdjusted(_) => "cost_adjusted".into(),
            StatisticFamily::MeanAdjusted => "mean_adjusted".into(),
            StatisticFamily::Covariate(j) => format!("covariate({j})"),
        }
    }

    pub fn is_mean_adjusted(&self) -> bool {
        matches!(self, StatisticFamily::MeanAdjusted)
    }
}

impl fmt::Debug for StatisticFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Curve estimates and plug-in variances on the grid p_i = i/n, i = 1..n.
#[derive(Debug, Clone)]
pub struct GatesCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub variances: Vec<f64>,
    pub family: StatisticFamily,
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    /// Plain-curve variance at p = 1, kept for band construction: the
    /// mean-adjusted curve's own variance vanishes there by construction.
    pub vref_plain: f64,
}

impl GatesCurve {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Index of the largest grid point <= p, if any.
    pub fn index_at(&self, p: f64) -> Option<usize> {
        let k = self.grid.partition_point(|&g| g <= p);
        k.checked_sub(1)
    }

    pub fn value_at(&self, p: f64) -> Option<f64> {
        self.index_at(p).map(|i| self.values[i])
    }

    pub fn variance_at(&self, p: f64) -> Option<f64> {
        self.index_at(p).map(|i| self.variances[i])
    }
}

/// Per-unit effect proxies in sorted-score order:
/// `T y / (n1/n) - (1 - T) y / (n0/n)`.
pub fn ite_estimates(s: &SortedDataset) -> Vec<f64> {
    let n = s.n() as f64;
    let n1 = s.n1() as f64;
    let n0 = s.n0() as f64;
    (0..s.n())
        .map(|r| {
            let u = s.unit(r);
            if u.treatment == 1 {
                u.outcome * n / n1
            } else {
                -u.outcome * n / n0
            }
        })
        .collect()
}

struct ArmPrefixes {
    /// s1y[i] = sum of outcomes over treated units among the top i ranks.
    s1y: Vec<f64>,
    s0y: Vec<f64>,
    s1y2: Vec<f64>,
    s0y2: Vec<f64>,
}

fn arm_prefixes(s: &SortedDataset) -> ArmPrefixes {
    let n = s.n();
    let mut p = ArmPrefixes {
        s1y: vec![0.0; n + 1],
        s0y: vec![0.0; n + 1],
        s1y2: vec![0.0; n + 1],
        s0y2: vec![0.0; n + 1],
    };
    for r in 0..n {
        let u = s.unit(r);
        let (dy1, dy0) = if u.treatment == 1 { (u.outcome, 0.0) } else { (0.0, u.outcome) };
        p.s1y[r + 1] = p.s1y[r] + dy1;
        p.s0y[r + 1] = p.s0y[r] + dy0;
        p.s1y2[r + 1] = p.s1y2[r] + dy1 * dy1;
        p.s0y2[r + 1] = p.s0y2[r] + dy0 * dy0;
    }
    p
}

/// Sample variance from a sum and sum of squares over `count` entries.
fn sample_var(sum: f64, sum_sq: f64, count: usize) -> f64 {
    if count < 2 {
        return 0.0;
    }
    let c = count as f64;
    (sum_sq - sum * sum / c) / (c - 1.0)
}

fn plain_values(s: &SortedDataset) -> Vec<f64> {
    let psi = ite_estimates(s);
    let mut acc = 0.0;
    psi.iter()
        .enumerate()
        .map(|(i, v)| {
            acc += v;
            acc / (i + 1) as f64
        })
        .collect()
}

/// Plain-curve unclamped variance at p = 1.
fn plain_vref(s: &SortedDataset, pre: &ArmPrefixes) -> f64 {
    let n = s.n();
    sample_var(pre.s1y[n], pre.s1y2[n], n) / s.n1() as f64
        + sample_var(pre.s0y[n], pre.s0y2[n], n) / s.n0() as f64
}

/// Raw variance from the two arm variances and the finite-population term.
fn assemble(p: f64, n: usize, n1: usize, n0: usize, s2_1: f64, s2_0: f64, value: f64) -> f64 {
    let third = p * (1.0 - p) / (n as f64 - 1.0) * value * value;
    (s2_1 / n1 as f64 + s2_0 / n0 as f64 - third) / (p * p)
}

fn curve_impl(s: &SortedDataset, family: &StatisticFamily) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = s.n();
    let (n1, n0) = (s.n1(), s.n0());
    let nf = n as f64;
    let pre = arm_prefixes(s);

    let (values, mut raw): (Vec<f64>, Vec<f64>) = match family {
        StatisticFamily::Plain => {
            let values = plain_values(s);
            let raw = (1..=n)
                .map(|i| {
                    let p = i as f64 / nf;
                    let s2_1 = sample_var(pre.s1y[i], pre.s1y2[i], n);
                    let s2_0 = sample_var(pre.s0y[i], pre.s0y2[i], n);
                    assemble(p, n, n1, n0, s2_1, s2_0, values[i - 1])
                })
                .collect();
            (values, raw)
        }
        StatisticFamily::MeanAdjusted => {
            let plain = plain_values(s);
            let last = plain[n - 1];
            let values: Vec<f64> =
                (1..=n).map(|i| plain[i - 1] - (i as f64 / nf) * last).collect();
            let t1y = pre.s1y[n];
            let t0y = pre.s0y[n];
            let t1y2 = pre.s1y2[n];
            let t0y2 = pre.s0y2[n];
            let raw = (1..=n)
                .map(|i| {
                    let p = i as f64 / nf;
                    let p2 = p * p;
                    // phi = (1{sel} - p^2) y, so phi^2 = 1{sel}(1 - 2p^2) y^2 + p^4 y^2.
                    let sum1 = pre.s1y[i] - p2 * t1y;
                    let sq1 = (1.0 - 2.0 * p2) * pre.s1y2[i] + p2 * p2 * t1y2;
                    let sum0 = pre.s0y[i] - p2 * t0y;
                    let sq0 = (1.0 - 2.0 * p2) * pre.s0y2[i] + p2 * p2 * t0y2;
                    let s2_1 = sample_var(sum1, sq1, n);
                    let s2_0 = sample_var(sum0, sq0, n);
                    assemble(p, n, n1, n0, s2_1, s2_0, values[i - 1])
                })
                .collect();
            (values, raw)
        }
        StatisticFamily::CostAdjusted(cost) => {
            let psi = ite_estimates(s);
            let mut values = Vec::with_capacity(n);
            let mut raw = Vec::with_capacity(n);
            let w1 = n1 as f64 / nf;
            let w0 = n0 as f64 / nf;
            for i in 1..=n {
                let p = i as f64 / nf;
                let mut value_sum = 0.0;
                let (mut sum1, mut sq1, mut sum0, mut sq0) = (0.0, 0.0, 0.0, 0.0);
                for r in 0..i {
                    let u = s.unit(r);
                    let c = cost(&u.covariates, p);
                    if !c.is_finite() {
                        return Err(Error::CostFnNonFinite { p, id: u.id.clone() });
                    }
                    value_sum += psi[r] - c;
                    if u.treatment == 1 {
                        let phi = u.outcome - w1 * c;
                        sum1 += phi;
                        sq1 += phi * phi;
                    } else {
                        let phi = u.outcome + w0 * c;
                        sum0 += phi;
                        sq0 += phi * phi;
                    }
                }
                let value = value_sum / i as f64;
                let s2_1 = sample_var(sum1, sq1, n);
                let s2_0 = sample_var(sum0, sq0, n);
                values.push(value);
                raw.push(assemble(p, n, n1, n0, s2_1, s2_0, value));
            }
            (values, raw)
        }
        StatisticFamily::Covariate(j) => {
            let d = s.base.covariate_dim();
            if *j >= d {
                return Err(Error::CovariateIndexOutOfRange { j: *j, d });
            }
            let mut values = Vec::with_capacity(n);
            let mut raw = Vec::with_capacity(n);
            let (mut sx, mut sx2) = (0.0, 0.0);
            for i in 1..=n {
                let x = s.unit(i - 1).covariates[*j];
                sx += x;
                sx2 += x * x;
                values.push(sx / i as f64);
                raw.push(sample_var(sx, sx2, i) / i as f64);
            }
            (values, raw)
        }
    };

    let scale2 = raw[n - 1].max(0.0);
    let floor = 1e-12 * scale2;
    for v in &mut raw {
        *v = v.max(floor);
    }
    Ok((values, raw))
}

/// Curve values and plug-in variances for the chosen family.
pub fn gates_curve(s: &SortedDataset, family: &StatisticFamily) -> Result<GatesCurve> {
    let n = s.n();
    let (values, variances) = curve_impl(s, family)?;
    let pre = arm_prefixes(s);
    Ok(GatesCurve {
        grid: (1..=n).map(|i| i as f64 / n as f64).collect(),
        values,
        variances,
        family: family.clone(),
        n,
        n1: s.n1(),
        n0: s.n0(),
        vref_plain: plain_vref(s, &pre),
    })
}

/// Grid-aligned plug-in variances only.
pub fn gates_variance(s: &SortedDataset, family: &StatisticFamily) -> Result<Vec<f64>> {
    curve_impl(s, family).map(|(_, v)| v)
}

/// Pointwise one-sided lower bounds: value - z_{1-alpha} sqrt(variance).
pub fn pointwise_band(curve: &GatesCurve, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - alpha);
    Ok(curve
        .values
        .iter()
        .zip(&curve.variances)
        .map(|(v, var)| v - z * var.sqrt())
        .collect())
}

/// CSV export: columns p, estimate, variance, pointwise_lower.
pub fn write_curve_csv<W: Write>(
    curve: &GatesCurve,
    pointwise_lower: &[f64],
    mut w: W,
) -> Result<()> {
    writeln!(w, "p,estimate,variance,pointwise_lower")?;
    for i in 0..curve.len() {
        writeln!(
            w,
            "{},{},{},{}",
            curve.grid[i], curve.values[i], curve.variances[i], pointwise_lower[i]
        )?;
    }
    Ok(())
}

/// JSON mirror of the CSV export, with curve metadata.
pub fn curve_json(curve: &GatesCurve, pointwise_lower: &[f64], alpha: f64) -> serde_json::Value {
    json!({
        "family": curve.family.label(),
        "n": curve.n,
        "n1": curve.n1,
        "n0": curve.n0,
        "alpha": alpha,
        "p": curve.grid,
        "estimate": curve.values,
        "variance": curve.variances,
        "pointwise_lower": pointwise_lower,
    })
}
