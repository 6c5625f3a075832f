//! Experimental data ingestion, validation, and canonical score ordering.
//!
//! A dataset holds one row per experimental unit: observed outcome, binary
//! treatment arm, a prioritization score produced by some fixed scoring rule,
//! and optional covariates. Analysis always runs on a [`SortedDataset`], where
//! units are arranged by descending score and exact score ties have been
//! broken deterministically from the dataset's tie seed.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One experimental unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub id: String,
    pub outcome: f64,
    /// Arm indicator: 1 = treated, 0 = control.
    pub treatment: u8,
    /// Prioritization score from a fixed scoring rule; higher = higher priority.
    pub score: f64,
    pub covariates: Vec<f64>,
}

/// A validated experiment: units plus arm counts and the tie-breaking seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDataset {
    pub units: Vec<UnitRecord>,
    pub n1: usize,
    pub n0: usize,
    pub tie_seed: u64,
}

impl EvaluationDataset {
    /// Validates units and counts arms. Requires at least 2 units per arm
    /// (the plug-in variance divides by n1, n0 and uses n-1 sample variances)
    /// and a common covariate length.
    pub fn new(units: Vec<UnitRecord>, tie_seed: u64) -> Result<Self> {
        let d = units.first().map_or(0, |u| u.covariates.len());
        let mut n1 = 0;
        let mut n0 = 0;
        for (row, u) in units.iter().enumerate() {
            let row = row + 1;
            if !u.outcome.is_finite() {
                return Err(Error::NonFiniteField { row, field: "outcome".into() });
            }
            if !u.score.is_finite() {
                return Err(Error::NonFiniteField { row, field: "score".into() });
            }
            match u.treatment {
                1 => n1 += 1,
                0 => n0 += 1,
                t => {
                    return Err(Error::NonBinaryTreatment { row, value: t.to_string() });
                }
            }
            if u.covariates.len() != d {
                return Err(Error::CovariateLengthMismatch {
                    row,
                    got: u.covariates.len(),
                    expected: d,
                });
            }
            if let Some(j) = u.covariates.iter().position(|c| !c.is_finite()) {
                return Err(Error::NonFiniteField { row, field: format!("covariate {j}") });
            }
        }
        if n1 < 2 || n0 < 2 {
            return Err(Error::ArmTooSmall { n1, n0 });
        }
        Ok(Self { units, n1, n0, tie_seed })
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    /// Covariate vector length shared by every unit.
    pub fn covariate_dim(&self) -> usize {
        self.units.first().map_or(0, |u| u.covariates.len())
    }
}

/// Which CSV header names hold each field.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap {
    /// Optional id column; absent ids fall back to the 1-based data row number.
    pub id: Option<String>,
    pub outcome: String,
    pub treatment: String,
    pub score: String,
    pub covariates: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            id: None,
            outcome: "outcome".into(),
            treatment: "treatment".into(),
            score: "score".into(),
            covariates: Vec::new(),
        }
    }
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_finite(raw: &str, row: usize, field: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::NonFiniteField { row, field: field.to_string() })?;
    if !v.is_finite() {
        return Err(Error::NonFiniteField { row, field: field.to_string() });
    }
    Ok(v)
}

/// Loads a header-required, UTF-8, '.'-decimal CSV into a validated dataset.
pub fn load_csv(path: &Path, map: &ColumnMap, tie_seed: u64) -> Result<EvaluationDataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let id_idx = map.id.as_deref().map(|c| header_index(&headers, c)).transpose()?;
    let outcome_idx = header_index(&headers, &map.outcome)?;
    let treatment_idx = header_index(&headers, &map.treatment)?;
    let score_idx = header_index(&headers, &map.score)?;
    let cov_idx: Vec<usize> = map
        .covariates
        .iter()
        .map(|c| header_index(&headers, c))
        .collect::<Result<_>>()?;

    let mut units = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |idx: usize, name: &str| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let treatment_raw = field(treatment_idx, &map.treatment)?;
        let treatment = match treatment_raw.trim().parse::<f64>() {
            Ok(t) if t == 0.0 => 0,
            Ok(t) if t == 1.0 => 1,
            _ => {
                return Err(Error::NonBinaryTreatment {
                    row,
                    value: treatment_raw.to_string(),
                })
            }
        };
        let id = match id_idx {
            Some(idx) => field(idx, map.id.as_deref().unwrap_or("id"))?.to_string(),
            None => row.to_string(),
        };
        let outcome = parse_finite(field(outcome_idx, &map.outcome)?, row, &map.outcome)?;
        let score = parse_finite(field(score_idx, &map.score)?, row, &map.score)?;
        let covariates = cov_idx
            .iter()
            .zip(&map.covariates)
            .map(|(&idx, name)| parse_finite(field(idx, name)?, row, name))
            .collect::<Result<Vec<f64>>>()?;
        units.push(UnitRecord { id, outcome, treatment, score, covariates });
    }
    EvaluationDataset::new(units, tie_seed)
}

/// Writes the dataset back out under the same column mapping, so that
/// `load_csv` of the result reproduces the dataset exactly.
pub fn write_csv<W: Write>(d: &EvaluationDataset, map: &ColumnMap, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = Vec::new();
    if let Some(id) = &map.id {
        header.push(id);
    }
    header.push(&map.outcome);
    header.push(&map.treatment);
    header.push(&map.score);
    header.extend(map.covariates.iter().map(String::as_str));
    w.write_record(&header)?;
    for u in &d.units {
        let mut rec: Vec<String> = Vec::new();
        if map.id.is_some() {
            rec.push(u.id.clone());
        }
        rec.push(u.outcome.to_string());
        rec.push(u.treatment.to_string());
        rec.push(u.score.to_string());
        rec.extend(u.covariates.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// A dataset arranged by strictly decreasing effective score.
///
/// `order[rank]` is the index into `base.units` of the unit at that rank
/// (rank 0 = highest score). Exact score ties are broken by adding a
/// deterministic per-unit jitter drawn from `base.tie_seed` with magnitude
/// `1e-9 * (max score - min score + 1)`; the comparison is lexicographic on
/// (score, jitter) so the jitter can never reorder units whose scores differ.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedDataset {
    pub base: EvaluationDataset,
    pub order: Vec<usize>,
    pub jitter_applied: bool,
    jitter: Vec<f64>,
}

/// Sorts by descending score, breaking exact ties with seeded jitter.
pub fn sort_by_score(d: EvaluationDataset) -> SortedDataset {
    let n = d.n();
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for u in &d.units {
        max = max.max(u.score);
        min = min.min(u.score);
    }
    let magnitude = 1e-9 * (max - min + 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(d.tie_seed);
    let jitter: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * magnitude).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let s = d.units[b].score.partial_cmp(&d.units[a].score).unwrap();
        s.then_with(|| jitter[b].partial_cmp(&jitter[a]).unwrap())
            .then_with(|| a.cmp(&b))
    });
    let jitter_applied = order.windows(2).any(|w| {
        d.units[w[0]].score == d.units[w[1]].score
    });
    SortedDataset { base: d, order, jitter_applied, jitter }
}

impl SortedDataset {
    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn n1(&self) -> usize {
        self.base.n1
    }

    pub fn n0(&self) -> usize {
        self.base.n0
    }

    /// Unit at the given rank (0 = highest score).
    pub fn unit(&self, rank: usize) -> &UnitRecord {
        &self.base.units[self.order[rank]]
    }

    /// Score plus tie-breaking jitter at the given rank.
    pub fn effective_score(&self, rank: usize) -> f64 {
        let idx = self.order[rank];
        self.base.units[idx].score + self.jitter[idx]
    }

    /// Tie-breaking jitter for the unit at the given rank.
    pub fn jitter(&self, rank: usize) -> f64 {
        self.jitter[self.order[rank]]
    }

    /// Ids of the top `count` units by score.
    pub fn top_ids(&self, count: usize) -> Vec<String> {
        self.order[..count].iter().map(|&i| self.base.units[i].id.clone()).collect()
    }
}
