//! Consensus prediction from partial votes: importance-weighted simulation of
//! unobserved votes, per-expert vote posteriors, expected-entropy query
//! selection and the per-example query loop.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gaussian::{cholesky, solve_lower};
use crate::posterior::{PanelLayout, PanelParams, PosteriorSampleSet};
use crate::rng::{self, StreamRng};
use crate::simplex::{argmax, entropy, log_temper_into, AggregationFn};

/// What is known about one example while querying it.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryState {
    model_logits: Vec<f64>,
    votes: Vec<Option<usize>>,
    order: Vec<usize>,
    tie_seed: u64,
}

impl QueryState {
    /// `tie_seed` resolves a tied full panel once every vote is known; use the
    /// same seed that defines the example's true aggregate.
    pub fn new(model_logits: Vec<f64>, experts: usize, tie_seed: u64) -> Self {
        QueryState { model_logits, votes: vec![None; experts], order: Vec::new(), tie_seed }
    }

    pub fn observe(&mut self, expert: usize, class: usize) -> Result<()> {
        match self.votes.get(expert) {
            None => Err(Error::domain(format!("expert {expert} out of range"))),
            Some(Some(_)) => Err(Error::domain(format!("expert {expert} already observed"))),
            Some(None) => {
                self.votes[expert] = Some(class);
                self.order.push(expert);
                Ok(())
            }
        }
    }

    pub fn model_logits(&self) -> &[f64] {
        &self.model_logits
    }

    pub fn experts(&self) -> usize {
        self.votes.len()
    }

    pub fn vote(&self, expert: usize) -> Option<usize> {
        self.votes[expert]
    }

    pub fn votes(&self) -> &[Option<usize>] {
        &self.votes
    }

    /// Observed experts in query order.
    pub fn observed(&self) -> &[usize] {
        &self.order
    }

    pub fn unobserved(&self) -> Vec<usize> {
        (0..self.votes.len()).filter(|&i| self.votes[i].is_none()).collect()
    }

    pub fn observed_classes(&self) -> Vec<usize> {
        self.votes.iter().flatten().copied().collect()
    }

    /// The aggregate if the observed votes already fix it.
    pub fn determined(&self, f: &AggregationFn) -> Option<usize> {
        f.determined(&self.observed_classes(), self.votes.len() - self.order.len())
    }

    /// Aggregate of the complete panel, `None` while votes are missing.
    pub fn full_aggregate(&self, f: &AggregationFn) -> Result<Option<usize>> {
        if self.order.len() < self.votes.len() {
            return Ok(None);
        }
        let all: Vec<usize> = self.votes.iter().flatten().copied().collect();
        let mut tie = rng::from_seed(self.tie_seed);
        f.aggregate(&all, &mut tie).map(Some)
    }
}

/// Estimated distribution of the panel aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusDistribution {
    pub probs: Vec<f64>,
    pub entropy: f64,
    pub est_error: f64,
}

impl ConsensusDistribution {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let entropy = entropy(&probs);
        // Mass outside the argmax rather than 1 − max: stays positive when a
        // dominant class rounds to 1.
        let top = argmax(&probs);
        let est_error = probs.iter().enumerate().filter(|&(k, _)| k != top).map(|(_, p)| p).sum::<f64>().min(1.0);
        ConsensusDistribution { est_error, entropy, probs }
    }

    pub fn point_mass(classes: usize, class: usize) -> Self {
        let mut probs = vec![0.0; classes];
        probs[class] = 1.0;
        ConsensusDistribution { probs, entropy: 0.0, est_error: 0.0 }
    }

    pub fn prediction(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn confidence(&self) -> f64 {
        1.0 - self.est_error
    }
}

/// A predictive model of the panel used to drive querying.
pub trait ConsensusModel {
    fn classes(&self) -> usize;
    fn experts(&self) -> usize;

    fn consensus(&self, q: &QueryState, f: &AggregationFn, rng: &mut StreamRng) -> Result<ConsensusDistribution>;

    /// Predictive distribution of expert `j`'s vote given what is observed.
    fn vote_posterior(&self, q: &QueryState, j: usize, rng: &mut StreamRng) -> Result<Vec<f64>>;

    /// Expected consensus entropy after observing each unobserved expert,
    /// as `(expert, expected entropy)` in increasing expert order.
    fn expected_entropies(&self, q: &QueryState, f: &AggregationFn, rng: &mut StreamRng) -> Result<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        for j in q.unobserved() {
            let pj = self.vote_posterior(q, j, rng)?;
            let mut total = 0.0;
            for (k, &w) in pj.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                let mut branch = q.clone();
                branch.observe(j, k)?;
                total += w * self.consensus(&branch, f, rng)?.entropy;
            }
            out.push((j, total));
        }
        Ok(out)
    }
}

/// Per-sample conditional distribution of the latent expert logits given the
/// classifier logits of one example.
struct Conditional {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    tau: f64,
}

/// Consensus model backed by posterior draws of the panel parameters.
///
/// Works for both the full layout (one latent block per expert) and the
/// exchangeable layout (all experts share one block and vote i.i.d.).
pub struct SampledPanelModel<'a> {
    layout: PanelLayout,
    samples: &'a PosteriorSampleSet,
    repeats: usize,
}

impl<'a> SampledPanelModel<'a> {
    pub fn new(layout: PanelLayout, samples: &'a PosteriorSampleSet) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Inference("posterior sample set is empty".into()));
        }
        if let Some(bad) = samples.samples.iter().find(|p| p.dim() != layout.dim()) {
            return Err(Error::domain(format!("sample dimension {} does not match layout {}", bad.dim(), layout.dim())));
        }
        Ok(SampledPanelModel { layout, samples, repeats: 1 })
    }

    /// Conditional draws per posterior sample (1 by default).
    pub fn with_repeats(mut self, repeats: usize) -> Self {
        self.repeats = repeats.max(1);
        self
    }

    pub fn layout(&self) -> &PanelLayout {
        &self.layout
    }

    fn conditionals(&self, model_logits: &[f64]) -> Result<Vec<Conditional>> {
        let md = self.layout.model_dim();
        if model_logits.len() != md {
            return Err(Error::domain("classifier logits have the wrong length"));
        }
        self.samples.samples.iter().map(|p| conditional(p, md, model_logits)).collect()
    }

    /// One simulation pass: per draw, log-weight of the observed votes, the
    /// tempered log-probabilities of every expert and simulated votes for
    /// the unobserved ones.
    fn simulate(&self, q: &QueryState, rng: &mut StreamRng) -> Result<Pass> {
        let conds = self.conditionals(q.model_logits())?;
        let k = self.layout.classes();
        let h = self.layout.experts();
        let km1 = self.layout.logit_dim();
        let n = conds.len() * self.repeats;
        let mut pass = Pass {
            classes: k,
            experts: h,
            log_w: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n * h * k),
            votes: Vec::with_capacity(n * h),
        };
        let mut eps = DVector::zeros(self.layout.latent_dim());
        let mut lp = vec![0.0; k];
        for c in &conds {
            for _ in 0..self.repeats {
                for e in eps.iter_mut() {
                    *e = StandardNormal.sample(rng);
                }
                let z = &c.mean + &c.chol * &eps;
                let mut log_w = 0.0;
                for i in 0..h {
                    let off = self.layout.latent_offset(i);
                    log_temper_into(&z.as_slice()[off..off + km1], c.tau, &mut lp);
                    pass.log_probs.extend_from_slice(&lp);
                    let v = match q.vote(i) {
                        Some(y) => {
                            log_w += lp[y];
                            y
                        }
                        None => sample_log_categorical(&lp, rng),
                    };
                    pass.votes.push(v);
                }
                pass.log_w.push(log_w);
            }
        }
        Ok(pass)
    }

    /// Consensus and expected entropies for every unobserved expert from a
    /// single shared simulation pass.
    pub fn query_scores(
        &self,
        q: &QueryState,
        f: &AggregationFn,
        rng: &mut StreamRng,
    ) -> Result<(ConsensusDistribution, Vec<(usize, f64)>)> {
        if let Some(d) = self.exact(q, f)? {
            return Ok((d, Vec::new()));
        }
        let pass = self.simulate(q, rng)?;
        let weights = pass.weights()?;
        let consensus = ConsensusDistribution::from_probs(pass.aggregate_probs(&weights, f, None, rng)?);
        let mut scores = Vec::new();
        for j in q.unobserved() {
            scores.push((j, pass.expected_entropy(&weights, j, f, rng)?));
        }
        Ok((consensus, scores))
    }

    /// Point mass when no votes remain unobserved.
    fn exact(&self, q: &QueryState, f: &AggregationFn) -> Result<Option<ConsensusDistribution>> {
        Ok(q.full_aggregate(f)?.map(|c| ConsensusDistribution::point_mass(self.layout.classes(), c)))
    }
}

fn conditional(p: &PanelParams, md: usize, model_logits: &[f64]) -> Result<Conditional> {
    let cov = p.cov();
    let d = cov.nrows();
    let hd = d - md;
    let mu = DVector::from_column_slice(&p.mu);
    if md == 0 {
        return Ok(Conditional { mean: mu, chol: cholesky(&cov)?, tau: p.tau });
    }
    // Σ_HM Σ_MM⁻¹ via the factor of Σ_MM.
    let l_mm = cholesky(&cov.view((0, 0), (md, md)).into_owned())?;
    let resid = DVector::from_column_slice(model_logits) - mu.rows(0, md);
    let white = solve_lower(&l_mm, &resid);
    let s_hm = cov.view((md, 0), (hd, md)).into_owned();
    // B = L_MM⁻¹ Σ_MH, so Σ_HM Σ_MM⁻¹ r = Bᵀ (L_MM⁻¹ r) and Σ_HM Σ_MM⁻¹ Σ_MH = BᵀB.
    let mut b = DMatrix::zeros(md, hd);
    for col in 0..hd {
        let x = solve_lower(&l_mm, &s_hm.row(col).transpose());
        b.set_column(col, &x);
    }
    let mean = mu.rows(md, hd) + b.transpose() * white;
    let mut ccov = cov.view((md, md), (hd, hd)) - b.transpose() * &b;
    ccov = (&ccov + ccov.transpose()) * 0.5;
    Ok(Conditional { mean, chol: cholesky(&ccov)?, tau: p.tau })
}

fn sample_log_categorical(log_probs: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return k;
        }
    }
    log_probs.len() - 1
}

struct Pass {
    classes: usize,
    experts: usize,
    log_w: Vec<f64>,
    /// `[draw][expert][class]` tempered log-probabilities.
    log_probs: Vec<f64>,
    /// `[draw][expert]` observed or simulated votes.
    votes: Vec<usize>,
}

impl Pass {
    fn draws(&self) -> usize {
        self.log_w.len()
    }

    /// Self-normalized importance weights via a max shift.
    fn weights(&self) -> Result<Vec<f64>> {
        let max = self.log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Inference("every importance weight vanished; check the observed votes".into()));
        }
        let w: Vec<f64> = self.log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| x / total).collect())
    }

    fn prob(&self, s: usize, expert: usize, class: usize) -> f64 {
        self.log_probs[(s * self.experts + expert) * self.classes + class].exp()
    }

    /// Weighted distribution of the aggregate, optionally with expert
    /// `fixed.0`'s vote set to `fixed.1` in every draw.
    fn aggregate_probs(
        &self,
        weights: &[f64],
        f: &AggregationFn,
        fixed: Option<(usize, usize)>,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>> {
        let mut probs = vec![0.0; self.classes];
        let mut votes = vec![0; self.experts];
        for (s, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            votes.copy_from_slice(&self.votes[s * self.experts..(s + 1) * self.experts]);
            if let Some((j, k)) = fixed {
                votes[j] = k;
            }
            probs[f.aggregate(&votes, rng)?] += w;
        }
        let total: f64 = probs.iter().sum();
        Ok(probs.into_iter().map(|p| p / total).collect())
    }

    /// Predictive vote distribution of expert `j`, averaging the tempered
    /// probabilities rather than the simulated votes.
    fn vote_probs(&self, weights: &[f64], j: usize) -> Vec<f64> {
        let mut probs = vec![0.0; self.classes];
        for (s, &w) in weights.iter().enumerate() {
            for (k, p) in probs.iter_mut().enumerate() {
                *p += w * self.prob(s, j, k);
            }
        }
        let total: f64 = probs.iter().sum();
        probs.into_iter().map(|p| p / total).collect()
    }

    fn expected_entropy(&self, weights: &[f64], j: usize, f: &AggregationFn, rng: &mut StreamRng) -> Result<f64> {
        let pj = self.vote_probs(weights, j);
        let mut total = 0.0;
        let mut branch = vec![0.0; self.draws()];
        for (k, &pk) in pj.iter().enumerate() {
            if pk <= 0.0 {
                continue;
            }
            let mut mass = 0.0;
            for (s, b) in branch.iter_mut().enumerate() {
                *b = weights[s] * self.prob(s, j, k);
                mass += *b;
            }
            if !(mass > 0.0) {
                continue;
            }
            let probs = self.aggregate_probs(&branch, f, Some((j, k)), rng)?;
            total += pk * entropy(&probs);
        }
        Ok(total)
    }
}

impl ConsensusModel for SampledPanelModel<'_> {
    fn classes(&self) -> usize {
        self.layout.classes()
    }

    fn experts(&self) -> usize {
        self.layout.experts()
    }

    fn consensus(&self, q: &QueryState, f: &AggregationFn, rng: &mut StreamRng) -> Result<ConsensusDistribution> {
        if let Some(d) = self.exact(q, f)? {
            return Ok(d);
        }
        let pass = self.simulate(q, rng)?;
        let w = pass.weights()?;
        Ok(ConsensusDistribution::from_probs(pass.aggregate_probs(&w, f, None, rng)?))
    }

    fn vote_posterior(&self, q: &QueryState, j: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        if q.vote(j).is_some() {
            return Err(Error::domain(format!("expert {j} is already observed")));
        }
        let pass = self.simulate(q, rng)?;
        let w = pass.weights()?;
        Ok(pass.vote_probs(&w, j))
    }

    fn expected_entropies(&self, q: &QueryState, f: &AggregationFn, rng: &mut StreamRng) -> Result<Vec<(usize, f64)>> {
        Ok(self.query_scores(q, f, rng)?.1)
    }
}

/// Expected consensus entropy after observing expert `j`.
pub fn expected_entropy_after<M: ConsensusModel + ?Sized>(
    model: &M,
    q: &QueryState,
    j: usize,
    f: &AggregationFn,
    rng: &mut StreamRng,
) -> Result<f64> {
    if q.vote(j).is_some() {
        return Err(Error::domain(format!("expert {j} is already observed")));
    }
    model
        .expected_entropies(q, f, rng)?
        .into_iter()
        .find(|&(e, _)| e == j)
        .map(|(_, h)| h)
        .ok_or_else(|| Error::domain(format!("expert {j} is not queryable")))
}

/// Expert minimizing expected consensus entropy, lowest index on ties;
/// `None` when every expert is observed.
pub fn select_next_expert<M: ConsensusModel + ?Sized>(
    model: &M,
    q: &QueryState,
    f: &AggregationFn,
    rng: &mut StreamRng,
) -> Result<Option<usize>> {
    Ok(argmin_score(&model.expected_entropies(q, f, rng)?))
}

fn argmin_score(scores: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(j, h) in scores {
        match best {
            Some((_, b)) if h >= b => {}
            _ => best = Some((j, h)),
        }
    }
    best.map(|(j, _)| j)
}

/// How the next expert is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryPolicy {
    /// Minimize expected consensus entropy under the model.
    ExpectedEntropy,
    /// Uniformly at random among unobserved experts.
    Random,
    /// Follow a precomputed order.
    FixedOrder(Vec<usize>),
}

/// Result of querying one example.
#[derive(Debug, Clone, PartialEq)]
pub struct PerExampleOutcome {
    pub prediction: usize,
    pub probs: Vec<f64>,
    pub queries: usize,
    pub est_error: f64,
    pub confidence: f64,
    /// Experts queried, in order.
    pub order: Vec<usize>,
    /// `(expert, vote)` pairs revealed.
    pub revealed: Vec<(usize, usize)>,
    /// The aggregate if the revealed votes logically fix it.
    pub determined: Option<usize>,
}

/// Query experts for one example until the estimated error is at most
/// `threshold` or every expert has been asked.
///
/// With `threshold == 0` querying continues until the revealed votes fix the
/// aggregate, so the prediction is exact.
pub fn run_example<M: ConsensusModel + ?Sized>(
    model: &M,
    q: QueryState,
    true_votes: &[usize],
    f: &AggregationFn,
    threshold: f64,
    policy: &QueryPolicy,
    rng: &mut StreamRng,
) -> Result<PerExampleOutcome> {
    if true_votes.len() != q.experts() {
        return Err(Error::domain("one true vote per expert is required"));
    }
    run_example_with(model, q, &mut |e| Ok(true_votes[e]), f, threshold, policy, rng)
}

/// [`run_example`] with votes fetched on demand, for panels that answer live.
pub fn run_example_with<M: ConsensusModel + ?Sized>(
    model: &M,
    mut q: QueryState,
    ask: &mut dyn FnMut(usize) -> Result<usize>,
    f: &AggregationFn,
    threshold: f64,
    policy: &QueryPolicy,
    rng: &mut StreamRng,
) -> Result<PerExampleOutcome> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::domain(format!("threshold {threshold} outside [0, 1)")));
    }
    loop {
        let unobserved = q.unobserved();
        let want_scores = matches!(policy, QueryPolicy::ExpectedEntropy) && !unobserved.is_empty();
        let (dist, scores) = if want_scores {
            consensus_and_scores(model, &q, f, rng)?
        } else {
            (model.consensus(&q, f, rng)?, Vec::new())
        };
        let determined = q.determined(f);
        let satisfied = dist.est_error <= threshold && (threshold > 0.0 || determined.is_some());
        if satisfied || unobserved.is_empty() {
            return Ok(PerExampleOutcome {
                prediction: dist.prediction(),
                queries: q.observed().len(),
                est_error: dist.est_error,
                confidence: dist.confidence(),
                order: q.observed().to_vec(),
                revealed: q.observed().iter().map(|&e| (e, q.vote(e).expect("observed"))).collect(),
                determined,
                probs: dist.probs,
            });
        }
        let next = match policy {
            QueryPolicy::ExpectedEntropy => argmin_score(&scores),
            QueryPolicy::Random => Some(random_choice(&unobserved, rng)?),
            QueryPolicy::FixedOrder(order) => order.iter().copied().find(|e| q.vote(*e).is_none()),
        }
        .ok_or_else(|| Error::Inference("policy returned no expert".into()))?;
        let vote = ask(next)?;
        q.observe(next, vote)?;
    }
}

fn consensus_and_scores<M: ConsensusModel + ?Sized>(
    model: &M,
    q: &QueryState,
    f: &AggregationFn,
    rng: &mut StreamRng,
) -> Result<(ConsensusDistribution, Vec<(usize, f64)>)> {
    let dist = model.consensus(q, f, rng)?;
    let scores = model.expected_entropies(q, f, rng)?;
    Ok((dist, scores))
}

/// Uniform choice among `candidates`.
pub fn random_choice(candidates: &[usize], rng: &mut StreamRng) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::domain("no unobserved experts to choose from"));
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::PanelParams;

    fn pinned(mu: Vec<f64>, sigma: Vec<f64>, omega_chol: Vec<f64>, tau: f64, n: usize) -> PosteriorSampleSet {
        PosteriorSampleSet::pinned(vec![PanelParams { mu, sigma, omega_chol, tau }; n])
    }

    fn identity(d: usize) -> Vec<f64> {
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            l[i * d + i] = 1.0;
        }
        l
    }

    #[test]
    fn tiny_minority_mass_keeps_error_positive() {
        let d = ConsensusDistribution::from_probs(vec![1.0, 1e-18, 3e-19]);
        assert_eq!(1.0 - d.probs[0], 0.0);
        assert!(d.est_error > 0.0);
        assert!((d.est_error - 1.3e-18).abs() < 1e-30);
    }

    #[test]
    fn full_panel_is_point_mass() {
        let layout = PanelLayout::full(2, 1, 3).unwrap();
        let s = pinned(vec![0.0; 4], vec![1.0; 4], identity(4), 1.0, 10);
        let m = SampledPanelModel::new(layout, &s).unwrap();
        let mut q = QueryState::new(vec![0.3], 3, 1);
        for (e, v) in [(0, 1), (1, 0), (2, 1)] {
            q.observe(e, v).unwrap();
        }
        let d = m.consensus(&q, &AggregationFn::Consensus, &mut rng::from_seed(0)).unwrap();
        assert_eq!(d.probs, vec![0.0, 1.0]);
        assert_eq!(d.est_error, 0.0);
    }

    #[test]
    fn decided_majority_is_point_mass() {
        let layout = PanelLayout::full(2, 1, 3).unwrap();
        let s = pinned(vec![0.0; 4], vec![1.0; 4], identity(4), 1.0, 200);
        let m = SampledPanelModel::new(layout, &s).unwrap();
        let mut q = QueryState::new(vec![0.3], 3, 1);
        q.observe(0, 0).unwrap();
        q.observe(2, 0).unwrap();
        let d = m.consensus(&q, &AggregationFn::Consensus, &mut rng::from_seed(0)).unwrap();
        assert_eq!(d.probs, vec![1.0, 0.0]);
        let h = expected_entropy_after(&m, &q, 1, &AggregationFn::Consensus, &mut rng::from_seed(1)).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn saturated_logit_vote_posterior() {
        let layout = PanelLayout::full(2, 1, 1).unwrap();
        let s = pinned(vec![0.0, 10.0], vec![1.0, 1e-4], identity(2), 0.05, 50);
        let m = SampledPanelModel::new(layout, &s).unwrap();
        let q = QueryState::new(vec![0.0], 1, 0);
        let p = m.vote_posterior(&q, 0, &mut rng::from_seed(3)).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn unit_weights_give_empirical_distribution() {
        let layout = PanelLayout::full(3, 1, 2).unwrap();
        let s = pinned(vec![0.1, -0.2, 0.3, 0.0, 0.2, -0.1], vec![1.0; 6], identity(6), 0.8, 300);
        let m = SampledPanelModel::new(layout, &s).unwrap();
        let q = QueryState::new(vec![0.5, -0.5], 2, 0);
        let f = AggregationFn::Consensus;
        let mut r1 = rng::from_seed(9);
        let pass = m.simulate(&q, &mut r1).unwrap();
        assert!(pass.log_w.iter().all(|&l| l == 0.0));
        let w = pass.weights().unwrap();
        let mut r2 = rng::from_seed(10);
        let probs = pass.aggregate_probs(&w, &f, None, &mut r2).unwrap();
        let mut r3 = rng::from_seed(10);
        let mut counts = vec![0.0; 3];
        for s in 0..pass.draws() {
            let v = &pass.votes[s * 2..s * 2 + 2];
            counts[f.aggregate(v, &mut r3).unwrap()] += 1.0;
        }
        for (p, c) in probs.iter().zip(&counts) {
            assert!((p - c / pass.draws() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_vote_rules_out_unanimous_positive() {
        let layout = PanelLayout::full(2, 1, 3).unwrap();
        let s = pinned(vec![0.0; 4], vec![1.0; 4], identity(4), 1.0, 100);
        let m = SampledPanelModel::new(layout, &s).unwrap();
        let f = AggregationFn::UnanimousPositive { positive: 1 };
        let mut q = QueryState::new(vec![0.0], 3, 0);
        q.observe(1, 0).unwrap();
        let d = m.consensus(&q, &f, &mut rng::from_seed(2)).unwrap();
        assert_eq!(d.probs[1], 0.0);
    }

    #[test]
    fn singleton_and_empty_selection() {
        let layout = PanelLayout::full(2, 1, 2).unwrap();
        let s = pinned(vec![0.0; 3], vec![1.0; 3], identity(3), 1.0, 20);
        let m = SampledPanelModel::new(layout, &s).unwrap();
        let f = AggregationFn::Consensus;
        let mut q = QueryState::new(vec![0.0], 2, 0);
        q.observe(0, 1).unwrap();
        assert_eq!(select_next_expert(&m, &q, &f, &mut rng::from_seed(0)).unwrap(), Some(1));
        q.observe(1, 1).unwrap();
        assert_eq!(select_next_expert(&m, &q, &f, &mut rng::from_seed(0)).unwrap(), None);
    }

    #[test]
    fn decisive_expert_beats_uninformative_one() {
        // Expert 0: logit pinned at 0 with τ=1, so its vote is a coin flip
        // independent of everything; expert 1's vote is saturated and equal to
        // the consensus of the two under the unanimous-positive rule.
        let layout = PanelLayout::full(2, 1, 2).unwrap();
        let s = pinned(vec![0.0, 0.0, 0.0], vec![1.0, 1e-6, 3.0], identity(3), 1.0, 400);
        let m = SampledPanelModel::new(layout, &s).unwrap();
        let f = AggregationFn::UnanimousPositive { positive: 1 };
        let q = QueryState::new(vec![0.0], 2, 0);
        let scores = m.expected_entropies(&q, &f, &mut rng::from_seed(4)).unwrap();
        assert_eq!(argmin_score(&scores), Some(1), "{scores:?}");
    }

    #[test]
    fn threshold_validation_and_immediate_stop() {
        let layout = PanelLayout::full(2, 1, 2).unwrap();
        let s = pinned(vec![0.0, 3.0, 3.0], vec![1e-3; 3], identity(3), 0.2, 50);
        let m = SampledPanelModel::new(layout, &s).unwrap();
        let f = AggregationFn::Consensus;
        let q = QueryState::new(vec![3.0], 2, 0);
        let err = run_example(&m, q.clone(), &[0, 0], &f, 1.0, &QueryPolicy::ExpectedEntropy, &mut rng::from_seed(0));
        assert!(matches!(err, Err(Error::Domain(_))));
        let out = run_example(&m, q, &[0, 0], &f, 0.5, &QueryPolicy::ExpectedEntropy, &mut rng::from_seed(0)).unwrap();
        assert_eq!(out.queries, 0);
        assert_eq!(out.prediction, 0);
    }

    #[test]
    fn zero_threshold_is_exact_and_short_circuits() {
        let layout = PanelLayout::full(2, 1, 3).unwrap();
        let s = pinned(vec![0.0; 4], vec![1.0; 4], identity(4), 1.0, 100);
        let m = SampledPanelModel::new(layout, &s).unwrap();
        let f = AggregationFn::Consensus;
        for votes in [[0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 0]] {
            let q = QueryState::new(vec![0.0], 3, 5);
            let out = run_example(&m, q, &votes, &f, 0.0, &QueryPolicy::FixedOrder(vec![0, 1, 2]), &mut rng::from_seed(1)).unwrap();
            let truth = f.aggregate(&votes, &mut rng::from_seed(5)).unwrap();
            assert_eq!(out.prediction, truth);
            if votes[0] == votes[1] {
                assert_eq!(out.queries, 2);
            }
        }
    }
}
