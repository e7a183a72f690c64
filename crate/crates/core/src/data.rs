//! Example records, the line-delimited file format, and synthetic generators.
//!
//! File layout: a header object on the first line, then one record object per
//! line. Votes are 1-based in files and 0-based in memory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{cholesky_strict, sample_with_factor};
use crate::rng::StreamRng;
use crate::simplex::{from_logits, to_logits, LogitVec, ProbVec};
use crate::theory::VotePopulation;

pub const FORMAT_NAME: &str = "panel-consensus-records";
pub const FORMAT_VERSION: u32 = 1;

/// Sum tolerance accepted for probability vectors read from files.
const FILE_SUM_TOL: f64 = 1e-6;

/// One example: classifier outputs plus the full panel's votes for replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleRecord {
    pub model_probs: Vec<ProbVec>,
    /// 0-based class per expert.
    pub expert_votes: Vec<usize>,
    pub segment: Option<String>,
}

impl ExampleRecord {
    /// Classifier logits concatenated classifier by classifier.
    pub fn model_logits(&self) -> Vec<f64> {
        self.model_probs
            .iter()
            .flat_map(|p| to_logits(p).map(|z| z.as_slice().to_vec()).unwrap_or_default())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    classes: usize,
    classifiers: usize,
    experts: usize,
    records: Vec<ExampleRecord>,
    /// Generator configuration or source description, echoed into the header.
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(rename = "K")]
    classes: usize,
    #[serde(rename = "M")]
    classifiers: usize,
    #[serde(rename = "H")]
    experts: usize,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    model_probs: Vec<Vec<f64>>,
    expert_votes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segment: Option<String>,
}

impl Dataset {
    pub fn new(classes: usize, classifiers: usize, experts: usize) -> Result<Self> {
        if classes < 2 || classifiers == 0 || experts == 0 {
            return Err(Error::Schema(format!("need K ≥ 2, M ≥ 1, H ≥ 1; got K={classes}, M={classifiers}, H={experts}")));
        }
        Ok(Self { classes, classifiers, experts, records: Vec::new(), meta: serde_json::Value::Null })
    }

    pub fn push(&mut self, record: ExampleRecord) -> Result<()> {
        if record.model_probs.len() != self.classifiers {
            return Err(Error::Schema(format!(
                "record has {} classifier outputs, expected {}",
                record.model_probs.len(),
                self.classifiers
            )));
        }
        if let Some(p) = record.model_probs.iter().find(|p| p.classes() != self.classes) {
            return Err(Error::Schema(format!("classifier output has {} classes, expected {}", p.classes(), self.classes)));
        }
        if record.expert_votes.len() != self.experts {
            return Err(Error::Schema(format!(
                "record has {} votes, expected {}",
                record.expert_votes.len(),
                self.experts
            )));
        }
        if let Some(v) = record.expert_votes.iter().find(|&&v| v >= self.classes) {
            return Err(Error::Schema(format!("vote {} outside 1..={}", v + 1, self.classes)));
        }
        self.records.push(record);
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

    pub fn records(&self) -> &[ExampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vote_population(&self) -> Result<VotePopulation> {
        VotePopulation::new(self.records.iter().map(|r| r.expert_votes.clone()).collect())
    }

    /// Same records in a seeded random order.
    pub fn shuffled(&self, rng: &mut StreamRng) -> Dataset {
        let mut out = self.clone();
        out.records.shuffle(rng);
        out
    }

    /// Copy with every record tagged `segment`.
    pub fn with_segment(&self, segment: &str) -> Dataset {
        let mut out = self.clone();
        for r in &mut out.records {
            r.segment = Some(segment.to_string());
        }
        out
    }

    /// The first `n` records.
    pub fn truncated(&self, n: usize) -> Dataset {
        let mut out = self.clone();
        out.records.truncate(n);
        out
    }
}

/// Parse a dataset, returning it with the number of probability vectors
/// that had to be floored.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<(Dataset, usize)> {
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => return Err(Error::Parse { line: 1, message: "missing header line".into() }),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            }
        }
    };
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported format {:?} version {} (expected {FORMAT_NAME:?} version {FORMAT_VERSION})",
            header.format, header.version
        )));
    }
    let mut ds = Dataset::new(header.classes, header.classifiers, header.experts)?;
    ds.meta = header.meta;
    let mut floored = 0;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let mut model_probs = Vec::with_capacity(rec.model_probs.len());
        for p in &rec.model_probs {
            if p.len() != ds.classes {
                return Err(Error::Schema(format!(
                    "line {}: classifier output has {} classes, expected {}",
                    i + 1,
                    p.len(),
                    ds.classes
                )));
            }
            let (pv, fixed) = ProbVec::floored(p, FILE_SUM_TOL).map_err(|e| parse_err(e.to_string()))?;
            if fixed {
                floored += 1;
                log::warn!("line {}: probabilities floored at 1e-12 and renormalized", i + 1);
            }
            model_probs.push(pv);
        }
        let mut expert_votes = Vec::with_capacity(rec.expert_votes.len());
        for &v in &rec.expert_votes {
            if v == 0 || v > ds.classes {
                return Err(Error::Schema(format!("line {}: vote {v} outside 1..={}", i + 1, ds.classes)));
            }
            expert_votes.push(v - 1);
        }
        ds.push(ExampleRecord { model_probs, expert_votes, segment: rec.segment })
            .map_err(|e| Error::Schema(format!("line {}: {e}", i + 1)))?;
    }
    Ok((ds, floored))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Ok(read_dataset(BufReader::new(File::open(path)?))?.0)
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        classes: ds.classes,
        classifiers: ds.classifiers,
        experts: ds.experts,
        meta: ds.meta.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for r in &ds.records {
        let line = RecordLine {
            model_probs: r.model_probs.iter().map(|p| p.as_slice().to_vec()).collect(),
            expert_votes: r.expert_votes.iter().map(|v| v + 1).collect(),
            segment: r.segment.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&line).expect("record serializes"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

/// Binary panel of `h` sign-thresholded equicorrelated voters and one classifier.
///
/// Each example draws an (H+1)-dim zero-mean Gaussian with unit variances,
/// correlation `rho` between experts and `classifier_corr` between the
/// classifier coordinate and each expert. A positive expert coordinate is a
/// vote for class 0, matching the sign of the classifier's log-odds.
pub fn gen_equicorr_voters(h: usize, rho: f64, t: usize, classifier_corr: f64, rng: &mut StreamRng) -> Result<Dataset> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::domain(format!("expert correlation {rho} outside [0, 1)")));
    }
    if !(classifier_corr > -1.0 && classifier_corr < 1.0) {
        return Err(Error::domain(format!("classifier correlation {classifier_corr} outside (−1, 1)")));
    }
    let d = h + 1;
    let cov = DMatrix::from_fn(d, d, |i, j| match (i, j) {
        _ if i == j => 1.0,
        (0, _) | (_, 0) => classifier_corr,
        _ => rho,
    });
    let l = cholesky_strict(&cov).map_err(|e| Error::domain(format!("voter correlation matrix is not SPD: {e}")))?;
    let mean = DVector::zeros(d);
    let mut ds = Dataset::new(2, 1, h)?;
    ds.meta = serde_json::json!({ "generator": "equicorr", "H": h, "rho": rho, "T": t, "classifier_corr": classifier_corr });
    for _ in 0..t {
        let z = sample_with_factor(&mean, &l, rng);
        let probs = from_logits(&LogitVec::new(vec![z[0]])?)?;
        let (probs, _) = ProbVec::floored(probs.as_slice(), 1e-9)?;
        let expert_votes = (1..d).map(|i| usize::from(z[i] <= 0.0)).collect();
        ds.push(ExampleRecord { model_probs: vec![probs], expert_votes, segment: None })?;
    }
    Ok(ds)
}

/// Settings for [`gen_classwise_experts`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseConfig {
    /// `expert_accuracy[i][k]`: probability that expert i is right on class k.
    pub expert_accuracy: Vec<Vec<f64>>,
    /// Probability that the classifier's top class is the true class, per class.
    pub classifier_accuracy: Vec<f64>,
    /// Dirichlet concentration on the classifier's favoured class.
    pub sharpness: f64,
    pub class_prior: Vec<f64>,
}

impl ClasswiseConfig {
    /// Three classes and three experts, each near-perfect on two classes and
    /// weaker on a rotating third, with a classifier that is weakest on class 0.
    /// Accuracies follow the merged three-class CIFAR-10H panel.
    pub fn three_class_preset() -> Self {
        Self {
            expert_accuracy: vec![vec![1.0, 0.789, 0.998], vec![0.997, 0.997, 0.755], vec![0.695, 0.996, 0.999]],
            classifier_accuracy: vec![0.82, 0.956, 0.956],
            sharpness: 4.0,
            class_prior: vec![1.0 / 3.0; 3],
        }
    }

    /// Low-noise half of the shift experiment (ImageNet-16H, noise level 80).
    pub fn low_noise_preset() -> Self {
        Self {
            expert_accuracy: vec![vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 0.86], vec![0.807, 1.0, 1.0]],
            classifier_accuracy: vec![0.853, 1.0, 0.888],
            sharpness: 4.0,
            class_prior: vec![1.0 / 3.0; 3],
        }
    }

    /// High-noise half of the shift experiment (ImageNet-16H, noise level 125):
    /// the classifier flattens and every expert has a weak class.
    pub fn high_noise_preset() -> Self {
        Self {
            expert_accuracy: vec![vec![1.0, 0.444, 1.0], vec![0.995, 1.0, 0.577], vec![0.35, 0.888, 1.0]],
            classifier_accuracy: vec![0.788, 0.444, 0.824],
            sharpness: 2.0,
            class_prior: vec![1.0 / 3.0; 3],
        }
    }

    fn validate(&self) -> Result<()> {
        let k = self.class_prior.len();
        if k < 2 || self.expert_accuracy.is_empty() {
            return Err(Error::domain("classwise generator needs K ≥ 2 and at least one expert"));
        }
        if self.expert_accuracy.iter().any(|row| row.len() != k) || self.classifier_accuracy.len() != k {
            return Err(Error::domain(format!("accuracy tables must have {k} columns")));
        }
        let in_range = |a: &f64| *a > 0.0 && *a <= 1.0;
        if !self.expert_accuracy.iter().flatten().all(in_range) || !self.classifier_accuracy.iter().all(in_range) {
            return Err(Error::domain("accuracies must lie in (0, 1]"));
        }
        if !(self.sharpness > 0.0) {
            return Err(Error::domain("sharpness must be positive"));
        }
        ProbVec::new(self.class_prior.clone()).map(|_| ())
    }
}

fn wrong_class(k: usize, truth: usize, rng: &mut StreamRng) -> usize {
    let c = rng.random_range(0..k - 1);
    if c >= truth {
        c + 1
    } else {
        c
    }
}

fn categorical(p: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Panel with class-dependent expert accuracy and a single classifier.
///
/// Experts err uniformly over the wrong classes. The classifier picks a
/// favoured class (the truth with its class accuracy, else a random wrong
/// class), draws a Dirichlet vector with extra concentration on it, and swaps
/// the largest entry into the favoured slot so its top class is the favoured one.
pub fn gen_classwise_experts(cfg: &ClasswiseConfig, t: usize, rng: &mut StreamRng) -> Result<Dataset> {
    cfg.validate()?;
    let k = cfg.class_prior.len();
    let h = cfg.expert_accuracy.len();
    let mut ds = Dataset::new(k, 1, h)?;
    ds.meta = serde_json::json!({ "generator": "classwise", "T": t, "config": cfg });
    let base = Gamma::new(1.0, 1.0).expect("valid gamma");
    let boosted = Gamma::new(1.0 + cfg.sharpness, 1.0).map_err(|e| Error::domain(e.to_string()))?;
    for _ in 0..t {
        let truth = categorical(&cfg.class_prior, rng);
        let expert_votes = cfg
            .expert_accuracy
            .iter()
            .map(|acc| if rng.random::<f64>() < acc[truth] { truth } else { wrong_class(k, truth, rng) })
            .collect();
        let favoured = if rng.random::<f64>() < cfg.classifier_accuracy[truth] { truth } else { wrong_class(k, truth, rng) };
        let mut g: Vec<f64> =
            (0..k).map(|c| if c == favoured { boosted.sample(rng) } else { base.sample(rng) }).collect();
        let top = crate::simplex::argmax(&g);
        g.swap(top, favoured);
        let total: f64 = g.iter().sum();
        let p: Vec<f64> = g.iter().map(|x| x / total).collect();
        let (probs, _) = ProbVec::floored(&p, 1e-9)?;
        ds.push(ExampleRecord { model_probs: vec![probs], expert_votes, segment: None })?;
    }
    Ok(ds)
}

/// Records of `a` followed by those of `b`, segment tags untouched.
pub fn concat_shift(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    if (a.classes, a.classifiers, a.experts) != (b.classes, b.classifiers, b.experts) {
        return Err(Error::Schema(format!(
            "shape mismatch: (K, M, H) = ({}, {}, {}) vs ({}, {}, {})",
            a.classes, a.classifiers, a.experts, b.classes, b.classifiers, b.experts
        )));
    }
    let mut out = a.clone();
    out.records.extend(b.records.iter().cloned());
    if !b.is_empty() {
        out.meta = serde_json::json!({ "generator": "shift", "first": a.meta, "second": b.meta });
    }
    Ok(out)
}
