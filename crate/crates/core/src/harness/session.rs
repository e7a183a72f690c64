//! Per-example online state: the current posterior, baseline statistics and
//! the revealed history.

use super::experiment::{ExperimentConfig, PolicyKind};
use crate::baselines::{eps_greedy_order, infexp_layout, update_confusion, ConfusionModel, ExpertStats, VoteOnlyModel};
use crate::error::{Error, Result};
use crate::inference::{run_example_with, PerExampleOutcome, QueryPolicy, QueryState, SampledPanelModel};
use crate::posterior::{
    sample_posterior, should_refit, ChainConfig, History, HistoryRecord, PanelLayout, PosteriorSampleSet,
};
use crate::rng;

struct Fitter {
    layout: PanelLayout,
    current: PosteriorSampleSet,
    fits: u64,
    worst_rhat: f64,
}

impl Fitter {
    fn new(layout: PanelLayout, cfg: &ExperimentConfig, history: &History) -> Result<Self> {
        let chain = ChainConfig { seed: rng::derive_seed(cfg.seed, "mcmc", 0), ..cfg.chain.clone() };
        let current = sample_posterior(&layout, history, &cfg.hyper, &chain, None)?;
        Ok(Fitter { layout, current, fits: 1, worst_rhat: 0.0 })
    }

    fn refit(&mut self, cfg: &ExperimentConfig, history: &History) -> Result<()> {
        let mut chain = ChainConfig { seed: rng::derive_seed(cfg.seed, "mcmc", self.fits), ..cfg.chain.clone() };
        let next = if cfg.warm_start {
            chain.warmup = cfg.refit_warmup;
            sample_posterior(&self.layout, history, &cfg.hyper, &chain, Some(&self.current))?
        } else {
            sample_posterior(&self.layout, history, &cfg.hyper, &chain, None)?
        };
        self.fits += 1;
        let dev = next.max_rhat_deviation();
        if dev.is_finite() {
            self.worst_rhat = self.worst_rhat.max(dev);
        }
        self.current = next;
        Ok(())
    }

    fn model(&self) -> Result<SampledPanelModel<'_>> {
        SampledPanelModel::new(self.layout.clone(), &self.current)
    }
}

/// One policy processing examples as they arrive.
///
/// Refits scheduled after example `t` run lazily at the start of example
/// `t + 1`, so a session that stops after its last example never pays for an
/// unused fit.
pub struct OnlineSession {
    cfg: ExperimentConfig,
    classes: usize,
    experts: usize,
    history: History,
    fitter: Option<Fitter>,
    stats: ExpertStats,
    confusion: ConfusionModel,
    calibration: Vec<(Vec<f64>, usize)>,
    seen: usize,
    refit_pending: bool,
}

impl OnlineSession {
    pub fn new(classes: usize, classifiers: usize, experts: usize, cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate(classes)?;
        let history = History::new(classes, classifiers, experts);
        let needs_fit = match cfg.policy {
            PolicyKind::Bayes | PolicyKind::Infexp => true,
            PolicyKind::Random => cfg.threshold > 0.0,
            PolicyKind::Confusion => false,
        };
        let fitter = if needs_fit {
            let layout = match cfg.policy {
                PolicyKind::Infexp => infexp_layout(classes, classifiers, experts)?,
                _ => PanelLayout::full(classes, classifiers, experts)?,
            };
            Some(Fitter::new(layout, &cfg, &history)?)
        } else {
            None
        };
        Ok(OnlineSession {
            classes,
            experts,
            history,
            fitter,
            stats: ExpertStats::new(experts),
            confusion: ConfusionModel::new(classes, experts, 1.0)?,
            calibration: Vec::new(),
            seen: 0,
            refit_pending: false,
            cfg,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn examples_seen(&self) -> usize {
        self.seen
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    /// Posterior fits so far, including the initial one.
    pub fn refits(&self) -> usize {
        self.fitter.as_ref().map_or(0, |f| f.fits as usize)
    }

    /// Worst split-R̂ deviation over the refits (the initial prior fit excluded).
    pub fn worst_rhat(&self) -> f64 {
        self.fitter.as_ref().map_or(0.0, |f| f.worst_rhat)
    }

    /// Tie-break seed of example `t` (1-based); ties in the full panel resolve
    /// the same way for every policy run under the same seed.
    pub fn tie_seed(&self, t: usize) -> u64 {
        rng::derive_seed(self.cfg.seed, "truth", t as u64)
    }

    /// Query experts through `ask` for one example until the stop rule holds,
    /// then fold the revealed votes into the session.
    pub fn process(&mut self, model_logits: Vec<f64>, ask: &mut dyn FnMut(usize) -> Result<usize>) -> Result<PerExampleOutcome> {
        if model_logits.len() != self.history.classifiers() * (self.classes - 1) {
            return Err(Error::domain(format!(
                "expected {} classifier logits, got {}",
                self.history.classifiers() * (self.classes - 1),
                model_logits.len()
            )));
        }
        if self.refit_pending {
            self.refit()?;
        }
        let t = self.seen + 1;
        let tie_seed = self.tie_seed(t);
        let (f, e, h, k) = (self.cfg.aggregation, self.cfg.threshold, self.experts, self.classes);
        let q = QueryState::new(model_logits.clone(), h, tie_seed);
        let mut prng = rng::stream(self.cfg.seed, "policy", t as u64);
        let mut checked = |j: usize| -> Result<usize> {
            let v = ask(j)?;
            if v >= k {
                return Err(Error::domain(format!("expert {j} voted class {v}, outside 0..{k}")));
            }
            Ok(v)
        };

        let outcome = match self.cfg.policy {
            PolicyKind::Bayes => {
                let model = self.fitter.as_ref().expect("fitted").model()?;
                run_example_with(&model, q, &mut checked, &f, e, &QueryPolicy::ExpectedEntropy, &mut prng)?
            }
            PolicyKind::Random => match &self.fitter {
                Some(fit) => run_example_with(&fit.model()?, q, &mut checked, &f, e, &QueryPolicy::Random, &mut prng)?,
                None => {
                    let model = VoteOnlyModel { classes: k, experts: h };
                    run_example_with(&model, q, &mut checked, &f, e, &QueryPolicy::Random, &mut prng)?
                }
            },
            PolicyKind::Infexp => {
                let order = eps_greedy_order(&self.stats, self.cfg.epsilon, &mut prng)?;
                let model = self.fitter.as_ref().expect("fitted").model()?;
                run_example_with(&model, q, &mut checked, &f, e, &QueryPolicy::FixedOrder(order), &mut prng)?
            }
            PolicyKind::Confusion => {
                run_example_with(&self.confusion, q, &mut checked, &f, e, &QueryPolicy::ExpectedEntropy, &mut prng)?
            }
        };

        // The aggregate counts as observed only when the revealed votes fix it.
        let observed = if outcome.revealed.len() == h {
            let mut votes = vec![0; h];
            for &(j, v) in &outcome.revealed {
                votes[j] = v;
            }
            Some(f.aggregate(&votes, &mut rng::from_seed(tie_seed))?)
        } else {
            outcome.determined
        };
        self.stats.update(&outcome.revealed, observed);
        update_confusion(&mut self.confusion, &outcome.revealed, observed);
        if let Some(c) = observed {
            self.calibration.push((model_logits.clone(), c));
        }
        self.history.push(HistoryRecord { model_logits, votes: outcome.revealed.clone() })?;
        self.seen = t;
        self.refit_pending = should_refit(t, self.cfg.window);
        Ok(outcome)
    }

    fn refit(&mut self) -> Result<()> {
        if let Some(fit) = self.fitter.as_mut() {
            match self.cfg.window {
                Some(w) => fit.refit(&self.cfg, &self.history.window(w))?,
                None => fit.refit(&self.cfg, &self.history)?,
            }
        }
        if self.cfg.policy == PolicyKind::Confusion {
            self.confusion.fit_temperature(&self.calibration)?;
        }
        self.refit_pending = false;
        Ok(())
    }
}
