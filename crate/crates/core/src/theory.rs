//! Error rates of querying experts uniformly at random, in closed form and by
//! simulation.
//!
//! The closed forms hold under a unique panel consensus. The Monte-Carlo side
//! works on an explicit vote population so the two can be checked against
//! each other on arbitrary panels.

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use rand::Rng;
use statrs::function::factorial::ln_binomial;
use std::f64::consts::PI;

/// Full-panel votes, one row per example, classes 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct VotePopulation {
    experts: usize,
    rows: Vec<Vec<usize>>,
}

impl VotePopulation {
    pub fn new(rows: Vec<Vec<usize>>) -> Result<Self> {
        let experts = rows.first().map(Vec::len).unwrap_or(0);
        if experts == 0 {
            return Err(Error::domain("vote population needs at least one expert"));
        }
        if let Some(t) = rows.iter().position(|r| r.len() != experts) {
            return Err(Error::domain(format!("row {t} has {} votes, expected {experts}", rows[t].len())));
        }
        Ok(Self { experts, rows })
    }

    pub fn experts(&self) -> usize {
        self.experts
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Unique mode of `votes` and its count, or `None` when the top count is shared.
pub fn unique_mode(votes: &[usize]) -> Option<(usize, usize)> {
    let k = votes.iter().max()? + 1;
    let mut counts = vec![0usize; k];
    for &v in votes {
        counts[v] += 1;
    }
    let top = *counts.iter().max()?;
    let mut modes = counts.iter().enumerate().filter(|&(_, &c)| c == top);
    let (class, _) = modes.next()?;
    modes.next().is_none().then_some((class, top))
}

/// Distribution of the consensus-set size n_c over examples.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusSizeDist {
    experts: usize,
    /// `pmf[n]` is p(n_c = n) for n in 0..=H.
    pmf: Vec<f64>,
    /// Examples dropped because their mode was tied.
    pub tied: usize,
}

impl ConsensusSizeDist {
    /// Build from (n_c, probability) pairs; repeated sizes accumulate.
    pub fn new(experts: usize, masses: &[(usize, f64)]) -> Result<Self> {
        if experts == 0 {
            return Err(Error::domain("panel size must be positive"));
        }
        let mut pmf = vec![0.0; experts + 1];
        for &(n, p) in masses {
            if n == 0 || n > experts {
                return Err(Error::domain(format!("consensus size {n} outside 1..={experts}")));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(format!("probability {p} for n_c = {n}")));
            }
            pmf[n] += p;
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("consensus size masses sum to {total}")));
        }
        Ok(Self { experts, pmf, tied: 0 })
    }

    pub fn point_mass(experts: usize, n_c: usize) -> Result<Self> {
        Self::new(experts, &[(n_c, 1.0)])
    }

    pub fn experts(&self) -> usize {
        self.experts
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// True when no mass sits at or below half the panel.
    pub fn strict_majority(&self) -> bool {
        self.pmf[..=self.experts / 2].iter().all(|&p| p == 0.0)
    }
}

/// Error of predicting the consensus from one or two random experts.
pub fn err_random_1or2(d: &ConsensusSizeDist) -> f64 {
    1.0 - d.mean() / d.experts as f64
}

fn check_hypergeom(h: usize, n_c: usize, n_q: usize) -> Result<()> {
    if n_c > h || n_q == 0 || n_q > h {
        return Err(Error::domain(format!("hypergeometric parameters H={h}, n_c={n_c}, n_q={n_q}")));
    }
    Ok(())
}

/// P(X ≤ r) for X the number of consensus experts among `n_q` drawn without
/// replacement from `h`, of which `n_c` are in the consensus set.
pub fn hypergeom_cdf(r: i64, h: usize, n_c: usize, n_q: usize) -> Result<f64> {
    check_hypergeom(h, n_c, n_q)?;
    if r < 0 {
        return Ok(0.0);
    }
    let lo = n_q.saturating_sub(h - n_c);
    let hi = n_c.min(n_q).min(r as usize);
    let ln_total = ln_binomial(h as u64, n_q as u64);
    let sum: f64 = (lo..=hi)
        .map(|i| (ln_binomial(n_c as u64, i as u64) + ln_binomial((h - n_c) as u64, (n_q - i) as u64) - ln_total).exp())
        .sum();
    Ok(sum.clamp(0.0, 1.0))
}

fn binomial_u128(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    // Each partial product is itself a binomial coefficient, so the division is exact.
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// The same CDF as an exact reduced fraction (numerator, denominator), for panels of at most 30.
pub fn hypergeom_cdf_exact(r: i64, h: usize, n_c: usize, n_q: usize) -> Result<(u128, u128)> {
    check_hypergeom(h, n_c, n_q)?;
    if h > 30 {
        return Err(Error::domain(format!("exact mode supports H ≤ 30, got {h}")));
    }
    let den = binomial_u128(h, n_q);
    if r < 0 {
        return Ok((0, 1));
    }
    let lo = n_q.saturating_sub(h - n_c);
    let hi = n_c.min(n_q).min(r as usize);
    let num: u128 = (lo..=hi).map(|i| binomial_u128(n_c, i) * binomial_u128(h - n_c, n_q - i)).sum();
    let g = gcd(num, den).max(1);
    Ok((num / g, den / g))
}

/// Error of the majority of `n_q` random experts (odd) when every panel has a
/// strict majority and all dissenters agree with each other.
pub fn err_random_nq(d: &ConsensusSizeDist, n_q: usize) -> Result<f64> {
    if n_q % 2 == 0 {
        return Err(Error::domain(format!("n_q must be odd, got {n_q}")));
    }
    if !d.strict_majority() {
        return Err(Error::domain("consensus sizes must form a strict majority"));
    }
    let h = d.experts;
    let r = (n_q / 2) as i64;
    let mut err = 0.0;
    for (n_c, &p) in d.pmf.iter().enumerate() {
        if p > 0.0 {
            err += p * hypergeom_cdf(r, h, n_c, n_q)?;
        }
    }
    Ok(err)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::domain(format!("correlation {rho} outside [0, 1)")));
    }
    Ok(())
}

/// Probability that three equicorrelated zero-mean Gaussians are all positive.
pub fn p3(rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(0.125 + 3.0 * rho.asin() / (4.0 * PI))
}

/// E[n_c] for three sign-thresholded equicorrelated voters.
pub fn expected_consensus_size_3(rho: f64) -> Result<f64> {
    Ok(2.0 + 2.0 * p3(rho)?)
}

/// Random one- or two-expert error for three sign-thresholded equicorrelated voters.
pub fn err_equicorrelated_3(rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(0.25 - rho.asin() / (2.0 * PI))
}

/// (ρ(1 + ρ²/6), arcsin ρ, ρ(1 + (π−2)ρ²/2)) for ρ in (0, 1).
pub fn arcsin_bound_check(rho: f64) -> Result<(f64, f64, f64)> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::domain(format!("arcsin bound needs ρ in (0, 1), got {rho}")));
    }
    let r2 = rho * rho;
    Ok((rho * (1.0 + r2 / 6.0), rho.asin(), rho * (1.0 + (PI - 2.0) / 2.0 * r2)))
}

/// Empirical consensus-size distribution; examples with a tied mode are skipped and counted.
pub fn consensus_size_dist(pop: &VotePopulation) -> Result<ConsensusSizeDist> {
    if pop.is_empty() {
        return Err(Error::domain("empty vote population"));
    }
    let mut counts = vec![0usize; pop.experts + 1];
    let mut tied = 0;
    for row in &pop.rows {
        match unique_mode(row) {
            Some((_, n)) => counts[n] += 1,
            None => tied += 1,
        }
    }
    let kept = pop.len() - tied;
    if kept == 0 {
        return Err(Error::domain("every example in the population has a tied mode"));
    }
    if tied > 0 {
        log::warn!("{tied} of {} examples have a tied mode and were excluded", pop.len());
    }
    let pmf = counts.iter().map(|&c| c as f64 / kept as f64).collect();
    Ok(ConsensusSizeDist { experts: pop.experts, pmf, tied })
}

/// A Monte-Carlo proportion and its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub se: f64,
    pub trials: usize,
}

impl MonteCarloEstimate {
    fn from_hits(hits: usize, trials: usize) -> Self {
        let mean = hits as f64 / trials as f64;
        Self { mean, se: (mean * (1.0 - mean) / trials as f64).sqrt(), trials }
    }
}

/// How often the majority of `n_q` experts drawn without replacement (ties
/// broken uniformly) misses the panel consensus.
///
/// Trials cycle through the untied examples in order, so with `trials` equal
/// to the number of examples the binomial standard error also covers the
/// sampling noise of the population itself.
pub fn simulate_random_error(
    pop: &VotePopulation,
    n_q: usize,
    trials: usize,
    rng: &mut StreamRng,
) -> Result<MonteCarloEstimate> {
    let h = pop.experts;
    if n_q == 0 || n_q > h {
        return Err(Error::domain(format!("n_q = {n_q} outside 1..={h}")));
    }
    if trials == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    let panels: Vec<(&[usize], usize)> =
        pop.rows.iter().filter_map(|r| unique_mode(r).map(|(c, _)| (r.as_slice(), c))).collect();
    if panels.is_empty() {
        return Err(Error::domain("every example in the population has a tied mode"));
    }
    let k = pop.rows.iter().flatten().max().copied().unwrap_or(0) + 1;
    let mut idx: Vec<usize> = (0..h).collect();
    let mut counts = vec![0usize; k];
    let mut modes = Vec::with_capacity(k);
    let mut misses = 0;
    for t in 0..trials {
        let (row, truth) = panels[t % panels.len()];
        counts.iter_mut().for_each(|c| *c = 0);
        for i in 0..n_q {
            let j = rng.random_range(i..h);
            idx.swap(i, j);
            counts[row[idx[i]]] += 1;
        }
        let top = *counts.iter().max().unwrap();
        modes.clear();
        modes.extend(counts.iter().enumerate().filter(|&(_, &c)| c == top).map(|(c, _)| c));
        let guess = if modes.len() == 1 { modes[0] } else { modes[rng.random_range(0..modes.len())] };
        misses += usize::from(guess != truth);
    }
    Ok(MonteCarloEstimate::from_hits(misses, trials))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Rows with `n_c` votes for class 0 and the rest for class 1.
    fn two_class_rows(h: usize, sizes: &[usize], copies: usize) -> VotePopulation {
        let rows = sizes
            .iter()
            .flat_map(|&n| std::iter::repeat_n((0..h).map(|i| usize::from(i >= n)).collect::<Vec<_>>(), copies))
            .collect();
        VotePopulation::new(rows).unwrap()
    }

    #[test]
    fn one_query_closed_forms() {
        assert_eq!(err_random_1or2(&ConsensusSizeDist::point_mass(10, 10).unwrap()), 0.0);
        assert!((err_random_1or2(&ConsensusSizeDist::point_mass(10, 6).unwrap()) - 0.4).abs() < 1e-12);
        let mix = ConsensusSizeDist::new(10, &[(6, 0.5), (10, 0.5)]).unwrap();
        assert!((err_random_1or2(&mix) - 0.2).abs() < 1e-12);
        let pop = two_class_rows(10, &[6, 10], 500);
        let sim = simulate_random_error(&pop, 1, 200_000, &mut rng::from_seed(1)).unwrap();
        assert!((sim.mean - 0.2).abs() < 0.01, "{sim:?}");
    }

    #[test]
    fn hypergeometric_values() {
        let cases = [(0, 1, 0.4), (1, 3, 1.0 / 3.0), (2, 5, 0.261_904_761_904_761_9), (3, 7, 1.0 / 6.0), (4, 9, 0.0)];
        for (r, n_q, want) in cases {
            let v = hypergeom_cdf(r, 10, 6, n_q).unwrap();
            assert!((v - want).abs() < 1e-12, "n_q={n_q}: {v}");
            let (num, den) = hypergeom_cdf_exact(r, 10, 6, n_q).unwrap();
            assert!((num as f64 / den as f64 - want).abs() < 1e-15);
        }
        assert_eq!(hypergeom_cdf_exact(2, 10, 6, 5).unwrap(), (11, 42));
        assert_eq!(hypergeom_cdf(-1, 10, 6, 5).unwrap(), 0.0);
        assert!(hypergeom_cdf(0, 10, 11, 3).is_err());
        assert!(hypergeom_cdf(0, 10, 6, 0).is_err());
    }

    #[test]
    fn single_draw_cdf_is_dissent_fraction() {
        for h in 1..=12 {
            for n_c in 1..=h {
                let v = hypergeom_cdf(0, h, n_c, 1).unwrap();
                assert!((v - (h - n_c) as f64 / h as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_nq_error() {
        let d = ConsensusSizeDist::point_mass(10, 6).unwrap();
        assert!((err_random_nq(&d, 7).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        assert!(err_random_nq(&d, 10).is_err());
        assert_eq!(err_random_nq(&ConsensusSizeDist::point_mass(9, 5).unwrap(), 9).unwrap(), 0.0);
        assert!(err_random_nq(&ConsensusSizeDist::point_mass(10, 5).unwrap(), 3).is_err());

        let mix = ConsensusSizeDist::new(10, &[(6, 0.5), (8, 0.5)]).unwrap();
        let closed = err_random_nq(&mix, 3).unwrap();
        let sim = simulate_random_error(&two_class_rows(10, &[6, 8], 500), 3, 200_000, &mut rng::from_seed(2)).unwrap();
        assert!((closed - sim.mean).abs() < 0.01, "{closed} vs {sim:?}");

        let mut prev = 1.0;
        for n_q in (1..=9).step_by(2) {
            let e = err_random_nq(&mix, n_q).unwrap();
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn equicorrelated_values() {
        assert_eq!(err_equicorrelated_3(0.0).unwrap(), 0.25);
        assert!((err_equicorrelated_3(0.5).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        assert!(err_equicorrelated_3(1.0).is_err());
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let e = err_equicorrelated_3(i as f64 / 100.0).unwrap();
            assert!(e < prev);
            prev = e;
        }
        assert!(err_equicorrelated_3(0.999_999).unwrap() < 1e-3);
        let rho = 0.3;
        let via_consensus_size = 1.0 - expected_consensus_size_3(rho).unwrap() / 3.0;
        assert!((via_consensus_size - err_equicorrelated_3(rho).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn arcsin_bounds() {
        let (lo, x, hi) = arcsin_bound_check(0.5).unwrap();
        assert!((lo - 0.520_833_333).abs() < 1e-6);
        assert!((x - 0.523_598_776).abs() < 1e-6);
        assert!((hi - 0.571_349_541).abs() < 1e-6);
        for i in 1..=1000 {
            let rho = i as f64 / 1001.0;
            let (lo, x, hi) = arcsin_bound_check(rho).unwrap();
            assert!(lo < x && x < hi, "rho {rho}");
        }
        let (lo, x, hi) = arcsin_bound_check(1e-6).unwrap();
        assert!(((lo / 1e-6) - 1.0).abs() < 1e-9 && ((x / 1e-6) - 1.0).abs() < 1e-9 && ((hi / 1e-6) - 1.0).abs() < 1e-9);
        assert!(arcsin_bound_check(0.0).is_err());
    }

    #[test]
    fn consensus_sizes_from_population() {
        let unanimous = VotePopulation::new(vec![vec![1; 5]; 4]).unwrap();
        assert_eq!(consensus_size_dist(&unanimous).unwrap().pmf()[5], 1.0);
        let pop = VotePopulation::new(vec![vec![0, 0, 1], vec![0, 0, 0]]).unwrap();
        let d = consensus_size_dist(&pop).unwrap();
        assert_eq!((d.pmf()[2], d.pmf()[3]), (0.5, 0.5));
        let tied = VotePopulation::new(vec![vec![0, 1], vec![0, 0]]).unwrap();
        let d = consensus_size_dist(&tied).unwrap();
        assert_eq!((d.tied, d.pmf()[2]), (1, 1.0));
        assert!(consensus_size_dist(&VotePopulation::new(vec![vec![0, 1]]).unwrap()).is_err());
    }

    #[test]
    fn simulated_error_edges() {
        let pop = two_class_rows(10, &[6], 100);
        assert_eq!(simulate_random_error(&pop, 10, 1000, &mut rng::from_seed(3)).unwrap().mean, 0.0);
        let two = simulate_random_error(&pop, 2, 100_000, &mut rng::from_seed(4)).unwrap();
        assert!((two.mean - 0.4).abs() < 0.01, "{two:?}");
        let five = simulate_random_error(&pop, 5, 100_000, &mut rng::from_seed(5)).unwrap();
        assert!((five.mean - 0.2619).abs() < 0.01, "{five:?}");
        let a = simulate_random_error(&pop, 3, 1000, &mut rng::from_seed(6)).unwrap();
        let b = simulate_random_error(&pop, 3, 1000, &mut rng::from_seed(6)).unwrap();
        assert_eq!(a, b);
    }
}
