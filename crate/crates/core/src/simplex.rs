//! Probability-simplex and logit-space primitives.
//!
//! Classes are 0-based internally (`0..K`); the record file format is 1-based
//! and converts at the boundary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest probability kept when ingesting classifier outputs, so that the
/// additive logistic transform stays finite on saturated predictions.
pub const PROB_FLOOR: f64 = 1e-12;

const SUM_TOL: f64 = 1e-9;

/// A point in the interior of the K-simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVec(Vec<f64>);

impl ProbVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::domain(format!(
                "probability vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::domain(format!(
                "probability entries must be finite and > 0, got {bad}"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::domain(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbVec(values))
    }

    /// Clamp entries to [`PROB_FLOOR`] and renormalize if anything changed.
    ///
    /// Returns the vector and whether a correction was applied. Inputs whose
    /// sum is further than `sum_tol` from 1 are rejected.
    pub fn floored(values: &[f64], sum_tol: f64) -> Result<(Self, bool)> {
        if values.len() < 2 || values.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain(format!("invalid probability vector {values:?}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > sum_tol {
            return Err(Error::domain(format!("probabilities sum to {sum}, not 1")));
        }
        let needs_floor = values.iter().any(|&p| p < PROB_FLOOR);
        if !needs_floor && (sum - 1.0).abs() <= SUM_TOL {
            return Ok((ProbVec(values.to_vec()), false));
        }
        let clamped: Vec<f64> = values.iter().map(|&p| p.max(PROB_FLOOR)).collect();
        let total: f64 = clamped.iter().sum();
        Ok((ProbVec(clamped.into_iter().map(|p| p / total).collect()), true))
    }

    pub fn uniform(k: usize) -> Self {
        ProbVec(vec![1.0 / k as f64; k])
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        entropy(&self.0)
    }
}

impl TryFrom<Vec<f64>> for ProbVec {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbVec::new(v)
    }
}

impl From<ProbVec> for Vec<f64> {
    fn from(p: ProbVec) -> Self {
        p.0
    }
}

/// Log-odds of classes `0..K-1` against the last class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVec(Vec<f64>);

impl LogitVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("logit vector must have at least one entry"));
        }
        if values.iter().any(|z| !z.is_finite()) {
            return Err(Error::domain(format!("non-finite logit in {values:?}")));
        }
        Ok(LogitVec(values))
    }

    /// Number of classes, one more than the logit dimension.
    pub fn classes(&self) -> usize {
        self.0.len() + 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Additive logistic transform.
pub fn to_logits(theta: &ProbVec) -> Result<LogitVec> {
    let p = theta.as_slice();
    let last = p[p.len() - 1];
    if p.iter().any(|&x| x <= 0.0) {
        return Err(Error::domain("additive logistic transform undefined at the boundary"));
    }
    LogitVec::new(p[..p.len() - 1].iter().map(|&x| (x / last).ln()).collect())
}

pub fn from_logits(z: &LogitVec) -> Result<ProbVec> {
    temper(z, 1.0)
}

/// Softmax of the extended logit vector `(z, 0)` divided by `tau`.
pub fn temper(z: &LogitVec, tau: f64) -> Result<ProbVec> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::domain(format!("temperature must be positive, got {tau}")));
    }
    let mut out = vec![0.0; z.classes()];
    log_temper_into(z.as_slice(), tau, &mut out);
    for v in out.iter_mut() {
        *v = v.exp();
    }
    // Saturated logits can underflow an entry to zero; keep the invariant.
    if out.iter().any(|&p| p <= 0.0) {
        let clamped: Vec<f64> = out.iter().map(|&p| p.max(f64::MIN_POSITIVE)).collect();
        let total: f64 = clamped.iter().sum();
        out = clamped.into_iter().map(|p| p / total).collect();
    }
    Ok(ProbVec(out))
}

/// Log-probabilities of the tempered categorical, written into `out` (length
/// `z.len() + 1`). Never produces `-inf` for finite inputs.
pub fn log_temper_into(z: &[f64], tau: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), z.len() + 1);
    let last = out.len() - 1;
    let mut max = 0.0f64;
    for (o, &zi) in out.iter_mut().zip(z) {
        *o = zi / tau;
        max = max.max(*o);
    }
    out[last] = 0.0;
    let lse = max + out.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for o in out.iter_mut() {
        *o -= lse;
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum::<f64>()
        .max(0.0)
}

/// How expert votes are reduced to the panel's aggregate label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AggregationFn {
    /// Most frequent vote, ties broken uniformly at random.
    Consensus,
    /// `positive` iff at least one expert votes for it (binary tasks only).
    AnyPositive { positive: usize },
    /// `positive` iff every expert votes for it (binary tasks only).
    UnanimousPositive { positive: usize },
}

impl AggregationFn {
    pub fn validate(&self, classes: usize) -> Result<()> {
        match *self {
            AggregationFn::Consensus => Ok(()),
            AggregationFn::AnyPositive { positive } | AggregationFn::UnanimousPositive { positive } => {
                if classes != 2 {
                    return Err(Error::domain(format!(
                        "any/unanimous aggregation needs K = 2, got K = {classes}"
                    )));
                }
                if positive > 1 {
                    return Err(Error::domain(format!("positive class {positive} out of range")));
                }
                Ok(())
            }
        }
    }

    /// Reduce a full set of votes to a class.
    pub fn aggregate<R: Rng + ?Sized>(&self, votes: &[usize], rng: &mut R) -> Result<usize> {
        if votes.is_empty() {
            return Err(Error::domain("cannot aggregate an empty vote set"));
        }
        Ok(match *self {
            AggregationFn::Consensus => {
                let mut counts = [0usize; 16];
                let modes = if votes.iter().all(|&v| v < counts.len()) {
                    for &v in votes {
                        counts[v] += 1;
                    }
                    tied_modes(&counts)
                } else {
                    let k = votes.iter().max().copied().unwrap_or(0) + 1;
                    let mut counts = vec![0usize; k];
                    for &v in votes {
                        counts[v] += 1;
                    }
                    tied_modes(&counts)
                };
                if modes.len() == 1 {
                    modes[0]
                } else {
                    modes[rng.random_range(0..modes.len())]
                }
            }
            AggregationFn::AnyPositive { positive } => {
                if votes.contains(&positive) {
                    positive
                } else {
                    1 - positive
                }
            }
            AggregationFn::UnanimousPositive { positive } => {
                if votes.iter().all(|&v| v == positive) {
                    positive
                } else {
                    1 - positive
                }
            }
        })
    }

    /// The aggregate if it is already fixed by `observed` regardless of the
    /// `unobserved` remaining votes; `None` while undetermined or tied.
    pub fn determined(&self, observed: &[usize], unobserved: usize) -> Option<usize> {
        match *self {
            AggregationFn::Consensus => {
                if observed.is_empty() {
                    return None;
                }
                let k = observed.iter().max().copied().unwrap_or(0) + 1;
                let mut counts = vec![0usize; k];
                for &v in observed {
                    counts[v] += 1;
                }
                let modes = tied_modes(&counts);
                if modes.len() != 1 {
                    return None;
                }
                let leader = modes[0];
                let runner_up = counts
                    .iter()
                    .enumerate()
                    .filter(|&(c, _)| c != leader)
                    .map(|(_, &n)| n)
                    .max()
                    .unwrap_or(0);
                (counts[leader] > runner_up + unobserved).then_some(leader)
            }
            AggregationFn::AnyPositive { positive } => {
                if observed.contains(&positive) {
                    Some(positive)
                } else {
                    (unobserved == 0).then_some(1 - positive)
                }
            }
            AggregationFn::UnanimousPositive { positive } => {
                if observed.iter().any(|&v| v != positive) {
                    Some(1 - positive)
                } else {
                    (unobserved == 0 && !observed.is_empty()).then_some(positive)
                }
            }
        }
    }
}

fn tied_modes(counts: &[usize]) -> Vec<usize> {
    let best = counts.iter().copied().max().unwrap_or(0);
    counts
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n == best && n > 0)
        .map(|(c, _)| c)
        .collect()
}
