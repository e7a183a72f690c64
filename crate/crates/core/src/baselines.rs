//! Comparison methods: an exchangeable-expert model queried in ε-greedy
//! accuracy order, and per-expert confusion matrices with a temperature
//! calibrated classifier.

use rand::Rng;

use crate::error::{Error, Result};
use crate::inference::{random_choice, ConsensusDistribution, ConsensusModel, QueryState, SampledPanelModel};
use crate::posterior::{PanelLayout, PosteriorSampleSet};
use crate::rng::StreamRng;
use crate::simplex::{AggregationFn, LogitVec, from_logits};

/// Per-expert agreement with the determined consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertStats {
    agree: Vec<f64>,
    seen: Vec<f64>,
}

impl ExpertStats {
    /// Every expert starts at accuracy 0.5 with a pseudo-count of 2.
    pub fn new(experts: usize) -> Self {
        ExpertStats { agree: vec![1.0; experts], seen: vec![2.0; experts] }
    }

    pub fn accuracy(&self, expert: usize) -> f64 {
        self.agree[expert] / self.seen[expert]
    }

    pub fn accuracies(&self) -> Vec<f64> {
        (0..self.agree.len()).map(|i| self.accuracy(i)).collect()
    }

    /// Record the revealed votes of an example; skipped unless the consensus was determined.
    pub fn update(&mut self, revealed: &[(usize, usize)], consensus: Option<usize>) {
        let Some(c) = consensus else { return };
        for &(e, v) in revealed {
            self.seen[e] += 1.0;
            if v == c {
                self.agree[e] += 1.0;
            }
        }
    }
}

/// Query order: each slot is a uniform pick among the remaining experts with
/// probability `epsilon`, otherwise the most accurate remaining (lowest index on ties).
pub fn eps_greedy_order(stats: &ExpertStats, epsilon: f64, rng: &mut StreamRng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::domain(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let mut remaining: Vec<usize> = (0..stats.agree.len()).collect();
    let mut order = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let pick = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            rng.random_range(0..remaining.len())
        } else {
            let mut best = 0;
            for (i, &e) in remaining.iter().enumerate() {
                if stats.accuracy(e) > stats.accuracy(remaining[best]) {
                    best = i;
                }
            }
            best
        };
        order.push(remaining.remove(pick));
    }
    Ok(order)
}

/// Layout of the exchangeable-expert model: every expert shares one latent block.
pub fn infexp_layout(classes: usize, classifiers: usize, experts: usize) -> Result<PanelLayout> {
    PanelLayout::exchangeable(classes, classifiers, experts)
}

/// Consensus posterior of the exchangeable-expert model for one example.
pub fn infexp_consensus_posterior(
    samples: &PosteriorSampleSet,
    classes: usize,
    q: &QueryState,
    f: &AggregationFn,
    rng: &mut StreamRng,
) -> Result<ConsensusDistribution> {
    let classifiers = q.model_logits().len() / (classes - 1);
    let layout = infexp_layout(classes, classifiers, q.experts())?;
    SampledPanelModel::new(layout, samples)?.consensus(q, f, rng)
}

/// Per-expert confusion counts against the consensus, plus a calibration
/// temperature for the (first) classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionModel {
    classes: usize,
    /// `counts[i][k][v]`: expert i voted v when the consensus was k.
    counts: Vec<Vec<Vec<f64>>>,
    smoothing: f64,
    pub temperature: f64,
}

impl ConfusionModel {
    /// Counts start at the smoothing constant; temperature starts at 1.
    pub fn new(classes: usize, experts: usize, smoothing: f64) -> Result<Self> {
        if classes < 2 || experts == 0 {
            return Err(Error::domain("confusion model needs K ≥ 2 and H ≥ 1"));
        }
        if !(smoothing > 0.0) {
            return Err(Error::domain("smoothing constant must be positive"));
        }
        Ok(ConfusionModel { classes, counts: vec![vec![vec![smoothing; classes]; classes]; experts], smoothing, temperature: 1.0 })
    }

    pub fn counts(&self, expert: usize) -> &[Vec<f64>] {
        &self.counts[expert]
    }

    pub fn total_count(&self) -> f64 {
        self.counts.iter().flatten().flatten().sum()
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Row-normalized p̂_i(vote | consensus).
    pub fn confusion(&self, expert: usize, consensus: usize, vote: usize) -> f64 {
        let row = &self.counts[expert][consensus];
        row[vote] / row.iter().sum::<f64>()
    }

    /// Classifier probabilities after temperature scaling.
    pub fn calibrated(&self, model_logits: &[f64]) -> Result<Vec<f64>> {
        calibrate(&model_logits[..self.classes - 1], self.temperature)
    }

    /// Refit the temperature by maximum likelihood of the determined consensus
    /// labels, searching log T on [ln 0.05, ln 20] by golden section.
    pub fn fit_temperature(&mut self, examples: &[(Vec<f64>, usize)]) -> Result<()> {
        if examples.is_empty() {
            return Ok(());
        }
        let k = self.classes;
        let nll = |log_t: f64| -> f64 {
            let t = log_t.exp();
            examples
                .iter()
                .map(|(z, y)| {
                    let z = &z[..k - 1];
                    let scaled = |c: usize| if c < k - 1 { z[c] / t } else { 0.0 };
                    let m = (0..k).map(scaled).fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + (0..k).map(|c| (scaled(c) - m).exp()).sum::<f64>().ln();
                    lse - scaled(*y)
                })
                .sum()
        };
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (0.05f64.ln(), 20f64.ln());
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut fc, mut fd) = (nll(c), nll(d));
        while b - a > 1e-6 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = nll(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = nll(d);
            }
        }
        self.temperature = (0.5 * (a + b)).exp();
        Ok(())
    }
}

fn calibrate(z: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
    Ok(from_logits(&LogitVec::new(scaled)?)?.into())
}

/// p(consensus = k) ∝ calibrated classifier[k] · Π over observed experts of p̂_i(y_i | k).
pub fn confusion_posterior(cm: &ConfusionModel, model_logits: &[f64], observed: &[(usize, usize)]) -> Result<ConsensusDistribution> {
    let prior = cm.calibrated(model_logits)?;
    let mut log_p: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
    for &(i, v) in observed {
        if i >= cm.counts.len() || v >= cm.classes {
            return Err(Error::domain(format!("vote ({i}, {v}) out of range")));
        }
        for (k, lp) in log_p.iter_mut().enumerate() {
            *lp += cm.confusion(i, k, v).ln();
        }
    }
    let m = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_p.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(ConsensusDistribution::from_probs(w.into_iter().map(|x| x / total).collect()))
}

/// Add one count per observed vote against the determined consensus; no-op otherwise.
pub fn update_confusion(cm: &mut ConfusionModel, observed: &[(usize, usize)], consensus: Option<usize>) {
    let Some(c) = consensus else { return };
    for &(i, v) in observed {
        cm.counts[i][c][v] += 1.0;
    }
}

/// Uniform choice among the unobserved experts.
pub fn random_policy(q: &QueryState, rng: &mut StreamRng) -> Result<usize> {
    random_choice(&q.unobserved(), rng)
}

fn observed_pairs(q: &QueryState) -> Vec<(usize, usize)> {
    q.observed().iter().map(|&e| (e, q.vote(e).expect("observed expert has a vote"))).collect()
}

impl ConsensusModel for ConfusionModel {
    fn classes(&self) -> usize {
        self.classes
    }

    fn experts(&self) -> usize {
        self.counts.len()
    }

    /// Always the model's own posterior, even with every vote revealed.
    fn consensus(&self, q: &QueryState, f: &AggregationFn, _rng: &mut StreamRng) -> Result<ConsensusDistribution> {
        if *f != AggregationFn::Consensus {
            return Err(Error::domain("the confusion baseline models the consensus aggregate only"));
        }
        confusion_posterior(self, q.model_logits(), &observed_pairs(q))
    }

    fn vote_posterior(&self, q: &QueryState, j: usize, _rng: &mut StreamRng) -> Result<Vec<f64>> {
        let post = confusion_posterior(self, q.model_logits(), &observed_pairs(q))?;
        Ok((0..self.classes)
            .map(|v| post.probs.iter().enumerate().map(|(k, p)| p * self.confusion(j, k, v)).sum())
            .collect())
    }
}

/// Consensus model that knows nothing beyond the revealed votes: a point
/// mass once they fix the aggregate, uniform otherwise. Enough to drive
/// exhaustive (threshold 0) querying without fitting anything.
#[derive(Debug, Clone, Copy)]
pub struct VoteOnlyModel {
    pub classes: usize,
    pub experts: usize,
}

impl ConsensusModel for VoteOnlyModel {
    fn classes(&self) -> usize {
        self.classes
    }

    fn experts(&self) -> usize {
        self.experts
    }

    fn consensus(&self, q: &QueryState, f: &AggregationFn, _rng: &mut StreamRng) -> Result<ConsensusDistribution> {
        if let Some(c) = q.full_aggregate(f)?.or_else(|| q.determined(f)) {
            return Ok(ConsensusDistribution::point_mass(self.classes, c));
        }
        Ok(ConsensusDistribution::from_probs(vec![1.0 / self.classes as f64; self.classes]))
    }

    fn vote_posterior(&self, _q: &QueryState, _j: usize, _rng: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.classes as f64; self.classes])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn greedy_order_sorts_by_accuracy() {
        let mut stats = ExpertStats::new(3);
        assert_eq!(eps_greedy_order(&stats, 0.0, &mut rng::from_seed(0)).unwrap(), vec![0, 1, 2]);
        // Accuracies 0.9, 0.7, 0.8 from pseudo-counts plus observed agreement.
        stats.agree = vec![9.0, 7.0, 8.0];
        stats.seen = vec![10.0; 3];
        assert_eq!(eps_greedy_order(&stats, 0.0, &mut rng::from_seed(0)).unwrap(), vec![0, 2, 1]);
        assert!(eps_greedy_order(&stats, 1.5, &mut rng::from_seed(0)).is_err());
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut stats = ExpertStats::new(3);
        stats.update(&[(0, 1), (1, 1)], Some(1));
        let mut r = rng::from_seed(1);
        let mut first = [0usize; 3];
        for _ in 0..10_000 {
            first[eps_greedy_order(&stats, 1.0, &mut r).unwrap()[0]] += 1;
        }
        for c in first {
            assert!((c as f64 / 1e4 - 1.0 / 3.0).abs() < 0.02, "{first:?}");
        }
    }

    #[test]
    fn stats_skip_undetermined() {
        let mut stats = ExpertStats::new(2);
        stats.update(&[(0, 1)], None);
        assert_eq!(stats.accuracies(), vec![0.5, 0.5]);
        stats.update(&[(0, 1), (1, 0)], Some(1));
        assert_eq!(stats.accuracies(), vec![2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn confusion_posterior_cases() {
        let mut cm = ConfusionModel::new(2, 2, 1.0).unwrap();
        let z = vec![(0.7f64 / 0.3).ln()];
        let d = confusion_posterior(&cm, &z, &[]).unwrap();
        assert!((d.probs[0] - 0.7).abs() < 1e-12);
        // Uniform rows: the vote is uninformative.
        let d = confusion_posterior(&cm, &z, &[(0, 1)]).unwrap();
        assert!((d.probs[0] - 0.7).abs() < 1e-12);
        // Rows 0.9/0.1 with an even classifier: one vote for class 0 gives (0.9, 0.1).
        cm.counts[1] = vec![vec![9.0, 1.0], vec![1.0, 9.0]];
        let d = confusion_posterior(&cm, &[0.0], &[(1, 0)]).unwrap();
        assert!((d.probs[0] - 0.9).abs() < 1e-12 && (d.probs[1] - 0.1).abs() < 1e-12);
        // Smoothing keeps every class strictly inside (0, 1).
        let d = confusion_posterior(&cm, &[30.0], &[(1, 0), (1, 0), (0, 0)]).unwrap();
        assert!(d.probs.iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(d.est_error > 0.0);
    }

    #[test]
    fn confusion_updates_match_a_tally() {
        let mut cm = ConfusionModel::new(3, 3, 1.0).unwrap();
        let before = cm.clone();
        update_confusion(&mut cm, &[(0, 1)], None);
        assert_eq!(cm, before);
        update_confusion(&mut cm, &[(2, 1)], Some(1));
        assert_eq!(cm.counts(2)[1][1], 2.0);
        assert_eq!(cm.total_count(), before.total_count() + 1.0);

        let mut r = rng::from_seed(7);
        let mut tally = vec![[[0usize; 3]; 3]; 3];
        let mut pairs = 0;
        let mut cm = ConfusionModel::new(3, 3, 1.0).unwrap();
        for _ in 0..20 {
            let votes: Vec<usize> = (0..3).map(|_| r.random_range(0..3)).collect();
            let revealed: Vec<(usize, usize)> = (0..r.random_range(1..=3)).map(|e| (e, votes[e])).collect();
            let consensus = if r.random::<f64>() < 0.7 { Some(votes[0]) } else { None };
            if let Some(c) = consensus {
                for &(e, v) in &revealed {
                    tally[e][c][v] += 1;
                    pairs += 1;
                }
            }
            update_confusion(&mut cm, &revealed, consensus);
        }
        for (e, t) in tally.iter().enumerate() {
            for k in 0..3 {
                for v in 0..3 {
                    assert_eq!(cm.counts(e)[k][v], 1.0 + t[k][v] as f64);
                }
            }
        }
        assert_eq!(cm.total_count(), 27.0 + pairs as f64);
    }

    #[test]
    fn temperature_fit_recovers_overconfidence() {
        // Labels drawn from softmax(z / 2) should pull the fitted temperature near 2.
        let mut r = rng::from_seed(3);
        let mut data = Vec::new();
        for _ in 0..4000 {
            let z: f64 = r.random_range(-6.0..6.0);
            let p0 = 1.0 / (1.0 + (-z / 2.0).exp());
            data.push((vec![z], usize::from(r.random::<f64>() >= p0)));
        }
        let mut cm = ConfusionModel::new(2, 1, 1.0).unwrap();
        cm.fit_temperature(&data).unwrap();
        assert!((cm.temperature - 2.0).abs() < 0.25, "{}", cm.temperature);
    }

    #[test]
    fn random_policy_is_uniform_over_unobserved() {
        let mut q = QueryState::new(vec![0.0], 3, 0);
        q.observe(0, 1).unwrap();
        q.observe(2, 1).unwrap();
        assert_eq!(random_policy(&q, &mut rng::from_seed(0)).unwrap(), 1);
        let q = QueryState::new(vec![0.0], 3, 0);
        let mut r = rng::from_seed(5);
        let mut hits = [0usize; 3];
        for _ in 0..30_000 {
            hits[random_policy(&q, &mut r).unwrap()] += 1;
        }
        assert!(hits.iter().all(|&h| (h as f64 / 3e4 - 1.0 / 3.0).abs() < 0.02));
        let a: Vec<usize> = (0..10).map(|_| random_policy(&q, &mut rng::from_seed(9)).unwrap()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let mut full = QueryState::new(vec![0.0], 1, 0);
        full.observe(0, 0).unwrap();
        assert!(random_policy(&full, &mut r).is_err());
    }

    #[test]
    fn vote_only_model_is_exact_when_determined() {
        let m = VoteOnlyModel { classes: 2, experts: 3 };
        let mut q = QueryState::new(vec![0.0], 3, 4);
        let f = AggregationFn::Consensus;
        let mut r = rng::from_seed(0);
        assert_eq!(m.consensus(&q, &f, &mut r).unwrap().est_error, 0.5);
        q.observe(0, 1).unwrap();
        q.observe(1, 1).unwrap();
        assert_eq!(m.consensus(&q, &f, &mut r).unwrap().probs, vec![0.0, 1.0]);
    }
}
