//! No-U-turn Hamiltonian Monte Carlo with a metric that is dense over the
//! global parameters and diagonal over the latents, multinomial
//! trajectory sampling, dual-averaging step size and windowed metric
//! adaptation; plus an adaptive random-walk Metropolis sampler for debugging.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::diagnostics::rhat;
use super::target::PosteriorTarget;
use super::{History, HyperParams, PanelLayout, PanelParams, PosteriorSampleSet};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

const MAX_DELTA_H: f64 = 1000.0;
const INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Nuts,
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChainConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
    pub max_depth: usize,
    pub target_accept: f64,
    pub kind: SamplerKind,
    /// Half-width of the uniform box used for random initialization.
    pub init_radius: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            chains: 3,
            warmup: 500,
            draws: 500,
            seed: 0,
            max_depth: 10,
            target_accept: 0.8,
            kind: SamplerKind::Nuts,
            init_radius: 2.0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.draws == 0 {
            return Err(Error::domain("need at least one chain and one draw"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::domain("target acceptance must lie in (0, 1)"));
        }
        if self.max_depth == 0 || self.max_depth > 20 {
            return Err(Error::domain("max tree depth must lie in 1..=20"));
        }
        if !(self.init_radius > 0.0) {
            return Err(Error::domain("init radius must be positive"));
        }
        Ok(())
    }
}

/// Draw from the posterior of the global parameters given a history.
///
/// Chain `c` uses the stream seeded from `cfg.seed + c`. When `warm` is given
/// its final global positions, step sizes and global metric seed the chains;
/// latent coordinates start at zero with unit metric.
pub fn sample_posterior(
    layout: &PanelLayout,
    history: &History,
    hp: &HyperParams,
    cfg: &ChainConfig,
    warm: Option<&PosteriorSampleSet>,
) -> Result<PosteriorSampleSet> {
    cfg.validate()?;
    hp.validate()?;
    if history.classes() != layout.classes() || history.experts() != layout.experts() {
        return Err(Error::domain("history shape does not match the panel layout"));
    }
    let target = PosteriorTarget::new(layout.clone(), history, *hp);
    let gdim = target.global_dim();
    let warm = warm.filter(|w| {
        w.final_positions.len() == cfg.chains
            && w.final_positions.iter().all(|p| p.len() >= gdim)
            && w.adaptation.len() == cfg.chains
    });

    let run_chain = |c: usize| -> Result<ChainOutput> {
        let mut r = rng::from_seed(cfg.seed.wrapping_add(c as u64));
        let start = warm.map(|w| {
            let mut q = w.final_positions[c][..gdim].to_vec();
            q.resize(target.dim(), 0.0);
            let (eps, metric) = &w.adaptation[c];
            (q, *eps, metric.clone())
        });
        match cfg.kind {
            SamplerKind::Nuts => run_nuts(&target, cfg, start, &mut r),
            SamplerKind::RandomWalk => run_random_walk(&target, cfg, start, &mut r),
        }
    };

    let outputs: Vec<Result<ChainOutput>> = if cfg.chains > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.chains).map(|c| s.spawn(move || run_chain(c))).collect();
            handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
        })
    } else {
        vec![run_chain(0)]
    };
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;

    let names = target.global_names();
    let mut traces = vec![vec![Vec::with_capacity(cfg.draws); cfg.chains]; names.len()];
    let mut samples = Vec::with_capacity(cfg.chains * cfg.draws);
    let mut divergences = 0;
    for (c, out) in outputs.iter().enumerate() {
        divergences += out.divergences;
        for p in &out.draws {
            for (k, v) in PosteriorTarget::global_values(p).into_iter().enumerate() {
                traces[k][c].push(v);
            }
        }
        samples.extend(out.draws.iter().cloned());
    }
    let rhat = if cfg.chains >= 2 && cfg.draws >= 4 {
        names
            .into_iter()
            .zip(&traces)
            .map(|(n, t)| rhat(t).map(|v| (n, v)))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    if divergences > 0 {
        log::debug!("{divergences} divergent transitions after warmup");
    }
    Ok(PosteriorSampleSet {
        samples,
        chains: cfg.chains,
        warmup: cfg.warmup,
        draws: cfg.draws,
        rhat,
        divergences,
        final_positions: outputs.iter().map(|o| o.final_position.clone()).collect(),
        adaptation: outputs.into_iter().map(|o| (o.step_size, o.inv_metric)).collect(),
    })
}

struct ChainOutput {
    draws: Vec<PanelParams>,
    divergences: usize,
    final_position: Vec<f64>,
    step_size: f64,
    inv_metric: Vec<f64>,
}

#[derive(Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

fn initial_state(
    target: &PosteriorTarget,
    cfg: &ChainConfig,
    start: Option<Vec<f64>>,
    r: &mut StreamRng,
) -> Result<State> {
    let dim = target.dim();
    let mut grad = vec![0.0; dim];
    if let Some(q) = start {
        let logp = target.log_density_and_grad(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(State { q, p: vec![0.0; dim], grad, logp });
        }
    }
    let mut q = vec![0.0; dim];
    for _ in 0..INIT_ATTEMPTS {
        q.iter_mut().for_each(|v| *v = r.random_range(-cfg.init_radius..cfg.init_radius));
        let logp = target.log_density_and_grad(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(State { q, p: vec![0.0; dim], grad, logp });
        }
    }
    Err(Error::Sampler { message: format!("no finite initial point in {INIT_ATTEMPTS} attempts"), state: q })
}

fn standard_normal(r: &mut StreamRng) -> f64 {
    StandardNormal.sample(r)
}

/// Inverse metric: dense over the leading global coordinates, diagonal over
/// the per-record latent coordinates.
#[derive(Clone)]
struct Metric {
    dense: DMatrix<f64>,
    chol: DMatrix<f64>,
    diag: Vec<f64>,
}

impl Metric {
    fn identity(globals: usize, dim: usize) -> Self {
        Metric { dense: DMatrix::identity(globals, globals), chol: DMatrix::identity(globals, globals), diag: vec![1.0; dim - globals] }
    }

    /// Layout: the dense block row-major, then the diagonal; a shorter
    /// diagonal is padded with ones.
    fn decode(globals: usize, dim: usize, v: &[f64]) -> Option<Self> {
        let g2 = globals * globals;
        if v.len() < g2 {
            return None;
        }
        let dense = DMatrix::from_row_slice(globals, globals, &v[..g2]);
        let chol = dense.clone().cholesky()?.l();
        let mut diag: Vec<f64> = v[g2..].iter().copied().take(dim - globals).collect();
        diag.resize(dim - globals, 1.0);
        Some(Metric { dense, chol, diag })
    }

    fn encode(&self) -> Vec<f64> {
        let g = self.dense.nrows();
        let mut v = Vec::with_capacity(g * g + self.diag.len());
        for i in 0..g {
            for j in 0..g {
                v.push(self.dense[(i, j)]);
            }
        }
        v.extend(&self.diag);
        v
    }

    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        let g = self.dense.nrows();
        let mut out = Vec::with_capacity(p.len());
        for i in 0..g {
            let row = self.dense.row(i);
            out.push((0..g).map(|j| row[j] * p[j]).sum());
        }
        out.extend(p[g..].iter().zip(&self.diag).map(|(p, m)| p * m));
        out
    }

    fn sample(&self, p: &mut [f64], r: &mut StreamRng) {
        let g = self.dense.nrows();
        // p_g = L⁻ᵀ ξ has covariance (L Lᵀ)⁻¹.
        let xi = DVector::from_fn(g, |_, _| standard_normal(r));
        let pg = self.chol.transpose().solve_upper_triangular(&xi).expect("metric factor is nonsingular");
        p[..g].copy_from_slice(pg.as_slice());
        for (p, m) in p[g..].iter_mut().zip(&self.diag) {
            *p = standard_normal(r) / m.sqrt();
        }
    }
}

struct Hamiltonian<'a> {
    target: &'a PosteriorTarget,
    metric: Metric,
}

impl Hamiltonian<'_> {
    fn energy(&self, z: &State) -> f64 {
        let kinetic = 0.5 * dot(&z.p, &self.metric.velocity(&z.p));
        let h = kinetic - z.logp;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn sample_momentum(&self, z: &mut State, r: &mut StreamRng) {
        self.metric.sample(&mut z.p, r);
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        self.metric.velocity(p)
    }

    fn leapfrog(&self, z: &mut State, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        let v = self.metric.velocity(&z.p);
        for (q, v) in z.q.iter_mut().zip(&v) {
            *q += eps * v;
        }
        z.logp = self.target.log_density_and_grad(&z.q, &mut z.grad);
        if !z.logp.is_finite() || z.grad.iter().any(|g| !g.is_finite()) {
            z.logp = f64::NEG_INFINITY;
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_sharp_a: &[f64], p_sharp_b: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_a, rho) > 0.0 && dot(p_sharp_b, rho) > 0.0
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// A subtree, with endpoints ordered along the integration direction.
struct Subtree {
    first_p: Vec<f64>,
    first_sharp: Vec<f64>,
    last_p: Vec<f64>,
    last_sharp: Vec<f64>,
    rho: Vec<f64>,
    log_sum_weight: f64,
    proposal: State,
}

#[derive(Default)]
struct TreeStats {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

fn build_tree(
    ham: &Hamiltonian,
    z: &mut State,
    depth: usize,
    eps: f64,
    h0: f64,
    stats: &mut TreeStats,
    r: &mut StreamRng,
) -> Option<Subtree> {
    if depth == 0 {
        ham.leapfrog(z, eps);
        stats.n_leapfrog += 1;
        let h = ham.energy(z);
        if h - h0 > MAX_DELTA_H {
            stats.divergent = true;
            return None;
        }
        let log_w = h0 - h;
        stats.sum_metro_prob += if log_w > 0.0 { 1.0 } else { log_w.exp() };
        let sharp = ham.p_sharp(&z.p);
        return Some(Subtree {
            first_p: z.p.clone(),
            first_sharp: sharp.clone(),
            last_p: z.p.clone(),
            last_sharp: sharp,
            rho: z.p.clone(),
            log_sum_weight: log_w,
            proposal: z.clone(),
        });
    }
    let inner = build_tree(ham, z, depth - 1, eps, h0, stats, r)?;
    let outer = build_tree(ham, z, depth - 1, eps, h0, stats, r)?;
    let log_sum_weight = log_sum_exp(inner.log_sum_weight, outer.log_sum_weight);
    let take_outer = r.random::<f64>() < (outer.log_sum_weight - log_sum_weight).exp();
    let rho = add(&inner.rho, &outer.rho);
    let persist = no_u_turn(&inner.first_sharp, &outer.last_sharp, &rho)
        && no_u_turn(&inner.first_sharp, &outer.first_sharp, &add(&inner.rho, &outer.first_p))
        && no_u_turn(&inner.last_sharp, &outer.last_sharp, &add(&outer.rho, &inner.last_p));
    if !persist {
        return None;
    }
    Some(Subtree {
        first_p: inner.first_p,
        first_sharp: inner.first_sharp,
        last_p: outer.last_p,
        last_sharp: outer.last_sharp,
        rho,
        log_sum_weight,
        proposal: if take_outer { outer.proposal } else { inner.proposal },
    })
}

/// Trajectory end in one direction.
struct End {
    state: State,
    p_sharp: Vec<f64>,
}

/// One NUTS transition; returns the new state, the mean acceptance
/// statistic and whether the trajectory diverged.
fn transition(
    ham: &Hamiltonian,
    z0: &State,
    eps: f64,
    max_depth: usize,
    r: &mut StreamRng,
) -> (State, f64, bool) {
    let mut z = z0.clone();
    ham.sample_momentum(&mut z, r);
    let h0 = ham.energy(&z);
    let sharp = ham.p_sharp(&z.p);
    let mut ends = [End { state: z.clone(), p_sharp: sharp.clone() }, End { state: z.clone(), p_sharp: sharp }];
    let mut rho = z.p.clone();
    let mut log_sum_weight = 0.0;
    let mut sample = z;
    let mut stats = TreeStats::default();

    for depth in 0..max_depth {
        // 0 = backward end, 1 = forward end.
        let forward = r.random::<f64>() > 0.5;
        let side = usize::from(forward);
        let sign = if forward { 1.0 } else { -1.0 };
        let mut tip = ends[side].state.clone();
        let Some(sub) = build_tree(ham, &mut tip, depth, sign * eps, h0, &mut stats, r) else {
            break;
        };
        if sub.log_sum_weight > log_sum_weight
            || r.random::<f64>() < (sub.log_sum_weight - log_sum_weight).exp()
        {
            sample = sub.proposal.clone();
        }
        log_sum_weight = log_sum_exp(log_sum_weight, sub.log_sum_weight);

        let old_rho = rho;
        rho = add(&old_rho, &sub.rho);
        let far = &ends[1 - side];
        let near = &ends[side];
        let persist = no_u_turn(&far.p_sharp, &sub.last_sharp, &rho)
            && no_u_turn(&far.p_sharp, &sub.first_sharp, &add(&old_rho, &sub.first_p))
            && no_u_turn(&near.p_sharp, &sub.last_sharp, &add(&sub.rho, &near.state.p));
        ends[side] = End { state: tip, p_sharp: sub.last_sharp };
        if !persist {
            break;
        }
    }
    let accept = if stats.n_leapfrog > 0 { stats.sum_metro_prob / stats.n_leapfrog as f64 } else { 0.0 };
    (sample, accept, stats.divergent)
}

/// Heuristic initial step size: double or halve until a single leapfrog
/// step's acceptance crosses 0.8.
fn find_reasonable_step(ham: &Hamiltonian, z0: &State, mut eps: f64, r: &mut StreamRng) -> Result<f64> {
    let threshold = 0.8f64.ln();
    let mut direction = 0.0;
    for _ in 0..100 {
        let mut z = z0.clone();
        ham.sample_momentum(&mut z, r);
        let h0 = ham.energy(&z);
        ham.leapfrog(&mut z, eps);
        let delta = h0 - ham.energy(&z);
        if direction == 0.0 {
            direction = if delta > threshold { 1.0 } else { -1.0 };
        }
        if (direction > 0.0 && !(delta > threshold)) || (direction < 0.0 && !(delta < threshold)) {
            return Ok(eps);
        }
        eps = if direction > 0.0 { 2.0 * eps } else { 0.5 * eps };
        if eps > 1e7 || eps < 1e-12 {
            break;
        }
    }
    if eps > 1e7 {
        return Err(Error::Sampler { message: "posterior appears improper: step size diverged".into(), state: z0.q.clone() });
    }
    Ok(eps.max(1e-12))
}

struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, delta: f64) -> Self {
        DualAveraging { mu: (10.0 * eps).ln(), s_bar: 0.0, x_bar: 0.0, counter: 0.0, delta }
    }

    fn restart(&mut self, eps: f64) {
        *self = DualAveraging::new(eps, self.delta);
    }

    fn learn(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let w = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup schedule: an initial fast buffer, doubling slow windows for the
/// metric, and a terminal fast buffer.
struct Windows {
    warmup: usize,
    init: usize,
    term: usize,
    size: usize,
    next_end: usize,
    adapt_metric: bool,
}

impl Windows {
    fn new(warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        let adapt_metric = warmup >= 20;
        if init + term + base > warmup {
            init = (0.15 * warmup as f64) as usize;
            term = (0.1 * warmup as f64) as usize;
            base = warmup.saturating_sub(init + term);
        }
        Windows { warmup, init, term, size: base, next_end: (init + base).saturating_sub(1), adapt_metric }
    }

    fn in_window(&self, t: usize) -> bool {
        self.adapt_metric && t >= self.init && t + self.term < self.warmup
    }

    fn is_window_end(&self, t: usize) -> bool {
        self.adapt_metric && t == self.next_end && t < self.warmup
    }

    fn advance(&mut self, t: usize) {
        let last = self.warmup - self.term - 1;
        if self.next_end == last {
            return;
        }
        self.size *= 2;
        self.next_end = t + self.size;
        if self.next_end == last {
            return;
        }
        if self.next_end + 2 * self.size >= self.warmup - self.term {
            self.next_end = last;
        }
    }
}

#[derive(Default)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn add(&mut self, x: &[f64]) {
        if self.mean.is_empty() {
            self.mean = vec![0.0; x.len()];
            self.m2 = vec![0.0; x.len()];
        }
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Sample variances shrunk towards a small constant.
    fn regularized(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Running covariance of the global block and variances of the rest.
struct BlockEstimator {
    globals: usize,
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
    rest: Welford,
}

impl BlockEstimator {
    fn new(globals: usize) -> Self {
        BlockEstimator {
            globals,
            n: 0,
            mean: DVector::zeros(globals),
            m2: DMatrix::zeros(globals, globals),
            rest: Welford::default(),
        }
    }

    fn add(&mut self, x: &[f64]) {
        let g = self.globals;
        self.n += 1;
        let xv = DVector::from_column_slice(&x[..g]);
        let delta = &xv - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = &xv - &self.mean;
        self.m2 += &delta * delta2.transpose();
        self.rest.add(&x[g..]);
    }

    fn regularized(&self) -> Metric {
        let g = self.globals;
        let n = self.n as f64;
        let mut dense = if self.n > 1 { &self.m2 / (n - 1.0) } else { DMatrix::identity(g, g) };
        dense *= n / (n + 5.0);
        for i in 0..g {
            dense[(i, i)] += 1e-3 * 5.0 / (n + 5.0);
        }
        dense = (&dense + dense.transpose()) * 0.5;
        let chol = match dense.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                // Fall back to the diagonal if the estimate is not positive definite.
                dense = DMatrix::from_diagonal(&dense.diagonal());
                dense.clone().cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::identity(g, g))
            }
        };
        Metric { dense, chol, diag: self.rest.regularized() }
    }
}

fn run_nuts(
    target: &PosteriorTarget,
    cfg: &ChainConfig,
    start: Option<(Vec<f64>, f64, Vec<f64>)>,
    r: &mut StreamRng,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let globals = target.global_dim();
    let (start_q, start_eps, start_metric) = match start {
        Some((q, eps, m)) => (Some(q), Some(eps), Metric::decode(globals, dim, &m)),
        None => (None, None, None),
    };
    let metric = start_metric.unwrap_or_else(|| Metric::identity(globals, dim));
    let mut ham = Hamiltonian { target, metric };
    let mut z = initial_state(target, cfg, start_q, r)?;
    let mut eps = match start_eps {
        Some(e) if e.is_finite() && e > 0.0 => e,
        _ => find_reasonable_step(&ham, &z, 1.0, r)?,
    };
    let mut dual = DualAveraging::new(eps, cfg.target_accept);
    let mut windows = Windows::new(cfg.warmup);
    let mut estimator = BlockEstimator::new(globals);

    for t in 0..cfg.warmup {
        let (next, accept, _) = transition(&ham, &z, eps, cfg.max_depth, r);
        z = next;
        eps = dual.learn(accept);
        if windows.in_window(t) {
            estimator.add(&z.q);
        }
        if windows.is_window_end(t) {
            windows.advance(t);
            ham.metric = estimator.regularized();
            estimator = BlockEstimator::new(globals);
            eps = find_reasonable_step(&ham, &z, eps, r)?;
            dual.restart(eps);
        }
    }
    if cfg.warmup > 0 {
        eps = dual.final_step();
    }

    let mut draws = Vec::with_capacity(cfg.draws);
    let mut divergences = 0;
    for _ in 0..cfg.draws {
        let (next, _, divergent) = transition(&ham, &z, eps, cfg.max_depth, r);
        z = next;
        divergences += usize::from(divergent);
        draws.push(constrain_or_fail(target, &z.q)?);
    }
    Ok(ChainOutput { draws, divergences, final_position: z.q, step_size: eps, inv_metric: ham.metric.encode() })
}

fn constrain_or_fail(target: &PosteriorTarget, q: &[f64]) -> Result<PanelParams> {
    target.constrain(q).ok_or_else(|| Error::Sampler { message: "draw left the support".into(), state: q.to_vec() })
}

/// Metropolis with a diagonal Gaussian proposal whose per-coordinate scales
/// follow the warmup sample variances and whose global scale is tuned by
/// Robbins-Monro towards acceptance 0.234.
fn run_random_walk(
    target: &PosteriorTarget,
    cfg: &ChainConfig,
    start: Option<(Vec<f64>, f64, Vec<f64>)>,
    r: &mut StreamRng,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let (start_q, mut scale, mut var) = match start {
        Some((q, s, mut m)) => {
            m.resize(dim, 0.1);
            (Some(q), s, m)
        }
        None => (None, 2.38 / (dim as f64).sqrt(), vec![0.1; dim]),
    };
    let z = initial_state(target, cfg, start_q, r)?;
    let mut q = z.q;
    let mut logp = z.logp;
    let mut welford = Welford::default();
    let mut proposal = vec![0.0; dim];
    let mut step = |q: &mut Vec<f64>, logp: &mut f64, scale: f64, var: &[f64], r: &mut StreamRng| -> bool {
        for ((x, v), s) in proposal.iter_mut().zip(q.iter()).zip(var) {
            *x = v + scale * s.sqrt() * standard_normal(r);
        }
        let lp = target.log_density(&proposal);
        let accept = lp.is_finite() && r.random::<f64>().ln() < lp - *logp;
        if accept {
            q.copy_from_slice(&proposal);
            *logp = lp;
        }
        accept
    };
    for t in 0..cfg.warmup {
        let accepted = step(&mut q, &mut logp, scale, &var, r);
        let rate = 1.0 / ((t + 1) as f64).powf(0.6);
        scale *= (rate * (f64::from(u8::from(accepted)) - 0.234)).exp();
        welford.add(&q);
        if t > 0 && (t + 1) % 100 == 0 && t + 1 < cfg.warmup {
            var = welford.regularized();
        }
    }
    let mut draws = Vec::with_capacity(cfg.draws);
    for _ in 0..cfg.draws {
        step(&mut q, &mut logp, scale, &var, r);
        draws.push(constrain_or_fail(target, &q)?);
    }
    Ok(ChainOutput { draws, divergences: 0, final_position: q, step_size: scale, inv_metric: var })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_schedule_covers_warmup() {
        let w = Windows::new(1000);
        assert_eq!((w.init, w.term, w.size), (75, 50, 25));
        let mut w = Windows::new(1000);
        let mut ends = Vec::new();
        for t in 0..1000 {
            if w.is_window_end(t) {
                ends.push(t);
                w.advance(t);
            }
        }
        assert_eq!(ends, vec![99, 149, 249, 449, 949]);
        let small = Windows::new(100);
        assert_eq!((small.init, small.term, small.size), (15, 10, 75));
    }

    #[test]
    fn dual_averaging_moves_towards_target() {
        let mut d = DualAveraging::new(1.0, 0.8);
        let low = d.learn(0.1);
        let mut d = DualAveraging::new(1.0, 0.8);
        let high = d.learn(1.0);
        assert!(low < high);
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(f64::NEG_INFINITY, 1.0), 1.0);
        assert!((log_sum_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
