//! The hierarchical logistic-normal panel model: priors, the joint
//! log-density of an observed history, and MCMC posterior sampling.
//!
//! Coordinates of the latent Gaussian are ordered classifiers first, then the
//! latent expert blocks, each block holding `K − 1` logits. With that order
//! the classifier block of the covariance factor is the leading block of the
//! full factor, which both the sampler and the conditional simulation use.

pub mod diagnostics;
pub mod lkj;
pub mod nuts;
pub mod target;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{cholesky, solve_lower};
use crate::simplex::log_temper_into;

pub use diagnostics::rhat;
pub use nuts::{sample_posterior, ChainConfig, SamplerKind};
pub use target::PosteriorTarget;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Prior scale of the logit means.
    pub sigma_mu: f64,
    /// Half-normal scale of the per-coordinate standard deviations.
    pub sigma_sigma: f64,
    /// LKJ concentration of the correlation matrix.
    pub eta: f64,
    /// Half-normal scale of the vote temperature.
    pub sigma_tau: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams { sigma_mu: 0.1, sigma_sigma: 1.0, eta: 0.75, sigma_tau: 0.4 }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_mu, self.sigma_sigma, self.eta, self.sigma_tau];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::domain(format!("hyperparameters must be positive: {self:?}")))
        }
    }
}

/// How agents map onto blocks of the latent Gaussian.
///
/// The full model gives each expert its own block. The exchangeable variant
/// shares a single latent block across all experts, so experts have no
/// identity and their votes are i.i.d. given that block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelLayout {
    classes: usize,
    classifiers: usize,
    experts: usize,
    expert_block: Vec<usize>,
    blocks: usize,
}

impl PanelLayout {
    pub fn full(classes: usize, classifiers: usize, experts: usize) -> Result<Self> {
        Self::check(classes, classifiers, experts)?;
        Ok(PanelLayout { classes, classifiers, experts, expert_block: (0..experts).collect(), blocks: experts })
    }

    pub fn exchangeable(classes: usize, classifiers: usize, experts: usize) -> Result<Self> {
        Self::check(classes, classifiers, experts)?;
        Ok(PanelLayout { classes, classifiers, experts, expert_block: vec![0; experts], blocks: 1 })
    }

    fn check(classes: usize, classifiers: usize, experts: usize) -> Result<()> {
        if classes < 2 || experts == 0 {
            return Err(Error::domain(format!(
                "need K >= 2 and H >= 1, got K={classes}, H={experts}"
            )));
        }
        let _ = classifiers;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
    pub fn classifiers(&self) -> usize {
        self.classifiers
    }
    pub fn experts(&self) -> usize {
        self.experts
    }
    pub fn blocks(&self) -> usize {
        self.blocks
    }
    pub fn logit_dim(&self) -> usize {
        self.classes - 1
    }
    /// Dimension of the joint Gaussian, `(K − 1)(M + blocks)`.
    pub fn dim(&self) -> usize {
        self.logit_dim() * (self.classifiers + self.blocks)
    }
    /// Number of leading classifier coordinates.
    pub fn model_dim(&self) -> usize {
        self.logit_dim() * self.classifiers
    }
    pub fn latent_dim(&self) -> usize {
        self.logit_dim() * self.blocks
    }
    /// Latent block used by expert `i`.
    pub fn block_of(&self, expert: usize) -> usize {
        self.expert_block[expert]
    }
    /// Offset of expert `i`'s logits within the latent sub-vector.
    pub fn latent_offset(&self, expert: usize) -> usize {
        self.expert_block[expert] * self.logit_dim()
    }
}

/// One draw of the global parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Lower Cholesky factor of the correlation matrix Ω, row-major `d × d`.
    pub omega_chol: Vec<f64>,
    pub tau: f64,
}

impl PanelParams {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn omega(&self) -> DMatrix<f64> {
        let d = self.dim();
        let l = DMatrix::from_row_slice(d, d, &self.omega_chol);
        &l * l.transpose()
    }

    /// `Σ = diag(σ) Ω diag(σ)`.
    pub fn cov(&self) -> DMatrix<f64> {
        let d = self.dim();
        let omega = self.omega();
        DMatrix::from_fn(d, d, |i, j| self.sigma[i] * omega[(i, j)] * self.sigma[j])
    }

    /// Lower Cholesky factor of Σ, `diag(σ) L_Ω`.
    pub fn cov_chol(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| if j <= i { self.sigma[i] * self.omega_chol[i * d + j] } else { 0.0 })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.sigma.len() != d || self.omega_chol.len() != d * d {
            return Err(Error::domain("parameter dimensions disagree"));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite mean"));
        }
        if self.sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::domain("standard deviations must be positive"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::domain("temperature must be positive"));
        }
        for i in 0..d {
            if !(self.omega_chol[i * d + i] > 0.0) {
                return Err(Error::domain("correlation factor has a non-positive diagonal"));
            }
            for j in (i + 1)..d {
                if self.omega_chol[i * d + j] != 0.0 {
                    return Err(Error::domain("correlation factor is not lower triangular"));
                }
            }
            let norm: f64 = (0..=i).map(|j| self.omega_chol[i * d + j].powi(2)).sum();
            if (norm - 1.0).abs() > 1e-8 {
                return Err(Error::domain("correlation matrix lacks a unit diagonal"));
            }
        }
        Ok(())
    }
}

/// One processed example as seen by the learner: classifier logits and the
/// expert votes that were actually revealed.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    /// Concatenated classifier logits, length `(K − 1)·M`.
    pub model_logits: Vec<f64>,
    /// `(expert, class)` pairs, 0-based.
    pub votes: Vec<(usize, usize)>,
}

/// The growing dataset of revealed predictions, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    classes: usize,
    classifiers: usize,
    experts: usize,
    records: Vec<HistoryRecord>,
}

impl History {
    pub fn new(classes: usize, classifiers: usize, experts: usize) -> Self {
        History { classes, classifiers, experts, records: Vec::new() }
    }

    pub fn push(&mut self, record: HistoryRecord) -> Result<()> {
        if record.model_logits.len() != (self.classes - 1) * self.classifiers {
            return Err(Error::domain("record has the wrong number of classifier logits"));
        }
        let mut seen = vec![false; self.experts];
        for &(e, c) in &record.votes {
            if e >= self.experts || c >= self.classes {
                return Err(Error::domain(format!("vote ({e}, {c}) out of range")));
            }
            if std::mem::replace(&mut seen[e], true) {
                return Err(Error::domain(format!("expert {e} voted twice in one record")));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[HistoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of revealed votes per expert.
    pub fn vote_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.experts];
        for r in &self.records {
            for &(e, _) in &r.votes {
                counts[e] += 1;
            }
        }
        counts
    }

    /// The most recent `n` records (all of them when `n >= len`).
    pub fn window(&self, n: usize) -> History {
        let start = self.records.len().saturating_sub(n);
        History { records: self.records[start..].to_vec(), ..self.clone_empty() }
    }

    fn clone_empty(&self) -> History {
        History::new(self.classes, self.classifiers, self.experts)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
    pub fn classifiers(&self) -> usize {
        self.classifiers
    }
    pub fn experts(&self) -> usize {
        self.experts
    }
}

/// Log joint density of the global parameters, the per-record latent expert
/// logits and the observed history, dropping additive constants (the `2π`
/// factors, the half-normal normalizers and the LKJ normalizer).
///
/// `latents[t]` holds the latent-block logits of record `t` (length
/// `layout.latent_dim()`) and must be empty for records without votes: their
/// latent logits integrate out exactly and only the classifier marginal
/// remains.
pub fn log_joint(
    layout: &PanelLayout,
    params: &PanelParams,
    latents: &[Vec<f64>],
    history: &History,
    hp: &HyperParams,
) -> Result<f64> {
    params.validate()?;
    hp.validate()?;
    let d = layout.dim();
    if params.dim() != d {
        return Err(Error::domain(format!("parameters have dim {}, layout needs {d}", params.dim())));
    }
    if latents.len() != history.len() {
        return Err(Error::domain("one latent vector per record is required"));
    }

    let mut lp = 0.0;
    lp -= 0.5 * params.mu.iter().map(|m| m * m).sum::<f64>() / (hp.sigma_mu * hp.sigma_mu);
    lp -= 0.5 * params.sigma.iter().map(|s| s * s).sum::<f64>() / (hp.sigma_sigma * hp.sigma_sigma);
    lp += lkj::lkj_log_density(&params.omega_chol, d, hp.eta);
    lp -= 0.5 * params.tau * params.tau / (hp.sigma_tau * hp.sigma_tau);

    let cov = params.cov();
    let md = layout.model_dim();
    let km1 = layout.logit_dim();
    let full_chol = cholesky(&cov)?;
    let model_chol = cholesky(&cov.view((0, 0), (md, md)).into_owned())?;
    let mu = DVector::from_column_slice(&params.mu);
    let mut logp = vec![0.0; layout.classes()];

    for (rec, latent) in history.records().iter().zip(latents) {
        if rec.votes.is_empty() {
            if !latent.is_empty() {
                return Err(Error::domain("records without votes carry no latent logits"));
            }
            if md > 0 {
                let r = DVector::from_column_slice(&rec.model_logits) - mu.rows(0, md);
                lp += gaussian_log_kernel(&model_chol, &r);
            }
            continue;
        }
        if latent.len() != layout.latent_dim() {
            return Err(Error::domain("latent vector has the wrong length"));
        }
        let z = DVector::from_iterator(d, rec.model_logits.iter().chain(latent.iter()).copied());
        lp += gaussian_log_kernel(&full_chol, &(z - &mu));
        for &(expert, class) in &rec.votes {
            let off = layout.latent_offset(expert);
            log_temper_into(&latent[off..off + km1], params.tau, &mut logp);
            lp += logp[class];
        }
    }
    if !lp.is_finite() {
        return Err(Error::domain("log joint is not finite"));
    }
    Ok(lp)
}

/// `−½ rᵀ Σ⁻¹ r − ½ log det Σ` given the Cholesky factor of Σ.
fn gaussian_log_kernel(chol: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let u = solve_lower(chol, r);
    -0.5 * u.norm_squared() - (0..chol.nrows()).map(|i| chol[(i, i)].ln()).sum::<f64>()
}

/// Whether the posterior is refit after processing example `t` (1-based).
///
/// Every example for the first 20, every 10th up to 100, then every 50th.
/// With a sliding window the model is refit after every example.
pub fn should_refit(t: usize, window: Option<usize>) -> bool {
    if window.is_some() {
        return true;
    }
    t <= 20 || (t <= 100 && t % 10 == 0) || t % 50 == 0
}

/// Draws from the posterior over the global parameters.
#[derive(Debug, Clone)]
pub struct PosteriorSampleSet {
    pub samples: Vec<PanelParams>,
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    /// Split-R̂ per named scalar parameter.
    pub rhat: Vec<(String, f64)>,
    pub divergences: usize,
    /// Final unconstrained position of each chain, for warm starts.
    pub final_positions: Vec<Vec<f64>>,
    /// Adapted step size and inverse metric per chain.
    pub adaptation: Vec<(f64, Vec<f64>)>,
}

impl PosteriorSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_rhat_deviation(&self) -> f64 {
        self.rhat.iter().map(|(_, r)| (r - 1.0).abs()).fold(0.0, f64::max)
    }

    /// A set holding exactly the given parameter draws.
    pub fn pinned(samples: Vec<PanelParams>) -> Self {
        PosteriorSampleSet {
            samples,
            chains: 1,
            warmup: 0,
            draws: 0,
            rhat: Vec::new(),
            divergences: 0,
            final_positions: Vec::new(),
            adaptation: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_params(d: usize, tau: f64) -> PanelParams {
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            l[i * d + i] = 1.0;
        }
        PanelParams { mu: vec![0.0; d], sigma: vec![1.0; d], omega_chol: l, tau }
    }

    #[test]
    fn schedule_examples() {
        assert!(should_refit(7, None));
        assert!(should_refit(20, None));
        assert!(!should_refit(21, None));
        assert!(!should_refit(95, None));
        assert!(should_refit(100, None));
        assert!(!should_refit(120, None));
        assert!(should_refit(150, None));
        assert!(should_refit(137, Some(50)));
    }

    #[test]
    fn empty_history_is_prior_only() {
        let layout = PanelLayout::full(2, 1, 1).unwrap();
        let hp = HyperParams::default();
        let h = History::new(2, 1, 1);
        let mut p = identity_params(2, 0.5);
        let base = log_joint(&layout, &p, &[], &h, &hp).unwrap();
        p.mu[0] = 0.3;
        let moved = log_joint(&layout, &p, &[], &h, &hp).unwrap();
        p.mu[0] = 0.6;
        let further = log_joint(&layout, &p, &[], &h, &hp).unwrap();
        assert!(base > moved && moved > further);
    }

    #[test]
    fn single_vote_adds_its_log_probability() {
        let layout = PanelLayout::full(2, 1, 1).unwrap();
        let hp = HyperParams::default();
        let p = identity_params(2, 0.7);
        let latent = vec![vec![0.9]];
        let mut with_vote = History::new(2, 1, 1);
        with_vote.push(HistoryRecord { model_logits: vec![0.2], votes: vec![(0, 0)] }).unwrap();
        let a = log_joint(&layout, &p, &latent, &with_vote, &hp).unwrap();
        // Same latent, no likelihood factor: evaluate the Gaussian part directly.
        let gauss = -0.5 * (0.2f64 * 0.2 + 0.9 * 0.9);
        let prior = log_joint(&layout, &p, &[], &History::new(2, 1, 1), &hp).unwrap();
        let p_vote = 1.0 / (1.0 + (-0.9f64 / 0.7).exp());
        assert!((a - prior - gauss - p_vote.ln()).abs() < 1e-12);
    }

    #[test]
    fn record_order_does_not_matter() {
        let layout = PanelLayout::full(3, 1, 2).unwrap();
        let hp = HyperParams::default();
        let mut p = identity_params(layout.dim(), 0.4);
        p.mu = vec![0.05, -0.02, 0.1, 0.0, -0.1, 0.03];
        let recs = [
            (HistoryRecord { model_logits: vec![0.3, -1.0], votes: vec![(0, 1)] }, vec![0.1, 0.2, -0.3, 0.4]),
            (HistoryRecord { model_logits: vec![1.3, 0.5], votes: vec![] }, vec![]),
            (HistoryRecord { model_logits: vec![-0.4, 0.0], votes: vec![(1, 2), (0, 0)] }, vec![1.0, -1.0, 0.5, 0.5]),
        ];
        let build = |order: &[usize]| {
            let mut h = History::new(3, 1, 2);
            let mut lat = Vec::new();
            for &i in order {
                h.push(recs[i].0.clone()).unwrap();
                lat.push(recs[i].1.clone());
            }
            log_joint(&layout, &p, &lat, &h, &hp).unwrap()
        };
        let a = build(&[0, 1, 2]);
        let b = build(&[2, 0, 1]);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn invalid_params_rejected() {
        let layout = PanelLayout::full(2, 1, 1).unwrap();
        let mut p = identity_params(2, 0.5);
        p.tau = -1.0;
        let err = log_joint(&layout, &p, &[], &History::new(2, 1, 1), &HyperParams::default());
        assert!(matches!(err, Err(Error::Domain(_))));
    }
}
