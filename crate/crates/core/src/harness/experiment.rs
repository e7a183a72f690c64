//! Online execution of a policy over a dataset, and threshold sweeps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{ece, first_last_50};
use crate::data::Dataset;
use crate::error::{Error, Result};
use super::session::OnlineSession;
use crate::posterior::{ChainConfig, HyperParams};
use crate::rng;
use crate::simplex::AggregationFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Full correlated model, expected-entropy querying.
    Bayes,
    /// Exchangeable-expert model, ε-greedy accuracy ordering.
    Infexp,
    /// Confusion matrices plus a calibrated classifier, expected-entropy querying.
    Confusion,
    /// Uniform random querying, stopping on the full model's estimate.
    Random,
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bayes" => Ok(PolicyKind::Bayes),
            "infexp" => Ok(PolicyKind::Infexp),
            "confusion" => Ok(PolicyKind::Confusion),
            "random" => Ok(PolicyKind::Random),
            _ => Err(Error::domain(format!("unknown policy {s:?} (bayes|infexp|confusion|random)"))),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PolicyKind::Bayes => "bayes",
            PolicyKind::Infexp => "infexp",
            PolicyKind::Confusion => "confusion",
            PolicyKind::Random => "random",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub policy: PolicyKind,
    pub threshold: f64,
    pub aggregation: AggregationFn,
    /// Run seed; every random stream of the run derives from it.
    pub seed: u64,
    /// Refit after every example on only the most recent `window` records.
    pub window: Option<usize>,
    /// Chains for the first (cold) fit. The seed field is ignored.
    pub chain: ChainConfig,
    /// Warmup iterations for fits that warm-start from the previous posterior.
    pub refit_warmup: usize,
    pub warm_start: bool,
    pub hyper: HyperParams,
    /// Exploration rate of the ε-greedy ordering.
    pub epsilon: f64,
}

impl ExperimentConfig {
    /// Short chains sized so a 250-example run refits in seconds on one core.
    pub fn desk(policy: PolicyKind, threshold: f64, seed: u64) -> Self {
        ExperimentConfig {
            policy,
            threshold,
            aggregation: AggregationFn::Consensus,
            seed,
            window: None,
            chain: ChainConfig { chains: 2, warmup: 150, draws: 150, max_depth: 5, ..ChainConfig::default() },
            refit_warmup: 75,
            warm_start: true,
            hyper: HyperParams::default(),
            epsilon: 0.1,
        }
    }

    pub(super) fn validate(&self, classes: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::domain(format!("threshold {} outside [0, 1)", self.threshold)));
        }
        if self.window == Some(0) {
            return Err(Error::domain("window must be positive"));
        }
        self.aggregation.validate(classes)?;
        self.chain.validate()?;
        self.hyper.validate()
    }
}

/// One processed example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRow {
    /// 1-based arrival index.
    pub t: usize,
    pub prediction: usize,
    pub truth: usize,
    pub queries: usize,
    pub confidence: f64,
    /// Estimated probability that the prediction misses the aggregate, at stop time.
    pub est_error: f64,
    pub order: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub examples: usize,
    pub error_rate: f64,
    pub mean_queries: f64,
    pub ece: f64,
    pub first50: Option<f64>,
    pub last50: Option<f64>,
}

impl Summary {
    pub fn from_rows(rows: &[ExampleRow]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::domain("no examples to summarize"));
        }
        let errors = rows.iter().filter(|r| r.prediction != r.truth).count();
        let queries: Vec<usize> = rows.iter().map(|r| r.queries).collect();
        let conf: Vec<f64> = rows.iter().map(|r| r.confidence).collect();
        let correct: Vec<bool> = rows.iter().map(|r| r.prediction == r.truth).collect();
        let fl = first_last_50(&queries).ok();
        Ok(Summary {
            examples: n,
            error_rate: errors as f64 / n as f64,
            mean_queries: queries.iter().sum::<usize>() as f64 / n as f64,
            ece: ece(&conf, &correct, 10)?,
            first50: fl.map(|x| x.0),
            last50: fl.map(|x| x.1),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub rows: Vec<ExampleRow>,
    pub summary: Summary,
    /// Posterior refits performed, and the worst split-R̂ deviation seen across them.
    pub refits: usize,
    pub worst_rhat: f64,
}

/// Mean queries over examples `t` in `from..=to` (1-based, inclusive).
pub fn mean_queries_between(result: &ExperimentResult, from: usize, to: usize) -> f64 {
    let sel: Vec<usize> = result.rows.iter().filter(|r| r.t >= from && r.t <= to).map(|r| r.queries).collect();
    sel.iter().sum::<usize>() as f64 / sel.len().max(1) as f64
}

/// (first-50, last-50) mean queries of a run of at least 100 examples.
pub fn explore_exploit_report(result: &ExperimentResult) -> Result<(f64, f64)> {
    first_last_50(&result.rows.iter().map(|r| r.queries).collect::<Vec<_>>())
}

/// Process `ds` in order with one policy, refitting on the schedule.
pub fn run_experiment(ds: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut session = OnlineSession::new(ds.classes(), ds.classifiers(), ds.experts(), cfg.clone())?;
    let mut rows = Vec::with_capacity(ds.len());
    for (idx, rec) in ds.records().iter().enumerate() {
        let t = idx + 1;
        let truth = cfg.aggregation.aggregate(&rec.expert_votes, &mut rng::from_seed(session.tie_seed(t)))?;
        let outcome = session.process(rec.model_logits(), &mut |e| Ok(rec.expert_votes[e]))?;
        rows.push(ExampleRow {
            t,
            prediction: outcome.prediction,
            truth,
            queries: outcome.queries,
            confidence: outcome.confidence,
            est_error: outcome.est_error,
            order: outcome.order,
            segment: rec.segment.clone(),
        });
        log::debug!("t={t} queries={} confidence={:.4}", rows[idx].queries, rows[idx].confidence);
    }
    let summary = Summary::from_rows(&rows)?;
    Ok(ExperimentResult { config: cfg.clone(), rows, summary, refits: session.refits(), worst_rhat: session.worst_rhat() })
}


/// Seed of run `index` under `base`.
pub fn run_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(1000).wrapping_add(index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: usize,
    pub threshold: f64,
    pub error_rate: f64,
    pub mean_queries: f64,
    pub ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub threshold: f64,
    pub error_rate: f64,
    pub mean_queries: f64,
    pub ece: f64,
    /// ECE over all runs' examples pooled together.
    pub pooled_ece: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummaryRow>,
    pub experiments: Vec<ExperimentResult>,
}

/// Default threshold grid.
pub const DEFAULT_THRESHOLDS: [f64; 7] = [0.3, 0.2, 0.1, 0.05, 0.025, 0.01, 0.0];

/// Every threshold on `runs` reshuffles of the dataset. Each run optionally
/// keeps only its first `per_run` shuffled records.
pub fn sweep(ds: &Dataset, base: &ExperimentConfig, thresholds: &[f64], runs: usize, per_run: Option<usize>) -> Result<SweepResult> {
    if runs == 0 || thresholds.is_empty() {
        return Err(Error::domain("sweep needs at least one run and one threshold"));
    }
    let mut rows = Vec::new();
    let mut experiments = Vec::new();
    for run in 0..runs {
        let seed = run_seed(base.seed, run);
        let mut data = ds.shuffled(&mut rng::stream(seed, "shuffle", 0));
        if let Some(n) = per_run {
            data = data.truncated(n);
        }
        for &threshold in thresholds {
            let cfg = ExperimentConfig { threshold, seed, ..base.clone() };
            let res = run_experiment(&data, &cfg)?;
            log::info!(
                "run {run} e={threshold}: error {:.4} queries {:.3}",
                res.summary.error_rate,
                res.summary.mean_queries
            );
            rows.push(SweepRow {
                run,
                threshold,
                error_rate: res.summary.error_rate,
                mean_queries: res.summary.mean_queries,
                ece: res.summary.ece,
            });
            experiments.push(res);
        }
    }
    let summary = thresholds
        .iter()
        .map(|&e| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.threshold == e).collect();
            let n = sel.len() as f64;
            let pooled: Vec<&ExampleRow> =
                experiments.iter().filter(|x| x.config.threshold == e).flat_map(|x| x.rows.iter()).collect();
            let conf: Vec<f64> = pooled.iter().map(|r| r.confidence).collect();
            let ok: Vec<bool> = pooled.iter().map(|r| r.prediction == r.truth).collect();
            Ok(SweepSummaryRow {
                threshold: e,
                error_rate: sel.iter().map(|r| r.error_rate).sum::<f64>() / n,
                mean_queries: sel.iter().map(|r| r.mean_queries).sum::<f64>() / n,
                ece: sel.iter().map(|r| r.ece).sum::<f64>() / n,
                pooled_ece: ece(&conf, &ok, 10)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { rows, summary, experiments })
}
