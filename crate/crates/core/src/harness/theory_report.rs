use serde::{Deserialize, Serialize};

use crate::data::gen_equicorr_voters;
use crate::error::{Error, Result};
use crate::rng;
use crate::theory::{
    consensus_size_dist, err_equicorrelated_3, err_random_1or2, err_random_nq, simulate_random_error, ConsensusSizeDist,
    VotePopulation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryFamily {
    /// Every panel has `n_c` consensus votes and one shared dissenting class.
    FixedConsensus,
    /// Three sign-thresholded equicorrelated Gaussian voters.
    Equicorrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub family: TheoryFamily,
    pub experts: usize,
    /// `n_c` for fixed-consensus rows, ρ for equicorrelated ones.
    pub param: f64,
    pub n_q: usize,
    /// `None` where no closed form applies (even `n_q` above 2).
    pub closed: Option<f64>,
    pub simulated: f64,
    pub se: f64,
    pub abs_diff: Option<f64>,
    /// |closed − simulated| > 3 SE.
    pub flagged: bool,
}

impl TheoryRow {
    fn new(family: TheoryFamily, experts: usize, param: f64, n_q: usize, closed: Option<f64>, sim: (f64, f64)) -> Self {
        let abs_diff = closed.map(|c| (c - sim.0).abs());
        TheoryRow {
            family,
            experts,
            param,
            n_q,
            closed,
            simulated: sim.0,
            se: sim.1,
            abs_diff,
            flagged: abs_diff.is_some_and(|d| d > 3.0 * sim.1),
        }
    }
}

/// Closed form for random querying of `n_q` experts, where one exists.
fn closed_form(d: &ConsensusSizeDist, n_q: usize) -> Result<Option<f64>> {
    if n_q <= 2 {
        Ok(Some(err_random_1or2(d)))
    } else if n_q % 2 == 1 && d.strict_majority() {
        err_random_nq(d, n_q).map(Some)
    } else {
        Ok(None)
    }
}

/// Closed-form against simulated random-query error.
///
/// `n_c` rows use a population of panels with exactly `n_c` votes for one
/// class and the rest for a second; `rhos` rows use three equicorrelated
/// voters queried one at a time. Each simulation uses `trials` draws.
pub fn theory_report(
    rhos: &[f64],
    experts: usize,
    n_c: &[usize],
    n_q: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<TheoryRow>> {
    if trials == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    let mut rows = Vec::new();
    for &nc in n_c {
        if nc == 0 || nc > experts {
            return Err(Error::domain(format!("n_c = {nc} outside 1..={experts}")));
        }
        let row: Vec<usize> = (0..experts).map(|i| usize::from(i >= nc)).collect();
        let pop = VotePopulation::new(vec![row])?;
        let d = ConsensusSizeDist::point_mass(experts, nc)?;
        for &q in n_q {
            let mut r = rng::stream(seed, "theory-nc", (nc * 1000 + q) as u64);
            let sim = simulate_random_error(&pop, q, trials, &mut r)?;
            rows.push(TheoryRow::new(
                TheoryFamily::FixedConsensus,
                experts,
                nc as f64,
                q,
                closed_form(&d, q)?,
                (sim.mean, sim.se),
            ));
        }
    }
    for (i, &rho) in rhos.iter().enumerate() {
        let pop = gen_equicorr_voters(3, rho, trials, 0.0, &mut rng::stream(seed, "theory-rho-data", i as u64))?
            .vote_population()?;
        let sim = simulate_random_error(&pop, 1, trials, &mut rng::stream(seed, "theory-rho", i as u64))?;
        rows.push(TheoryRow::new(
            TheoryFamily::Equicorrelated,
            3,
            rho,
            1,
            Some(err_equicorrelated_3(rho)?),
            (sim.mean, sim.se),
        ));
    }
    Ok(rows)
}

/// Mean consensus size of a population, skipping tied panels.
pub fn empirical_consensus_size(pop: &VotePopulation) -> Result<f64> {
    Ok(consensus_size_dist(pop)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_expert_table() {
        let rows = theory_report(&[], 10, &[6], &[1, 3, 5, 7, 9], 20_000, 3).unwrap();
        let closed: Vec<f64> = rows.iter().map(|r| r.closed.unwrap()).collect();
        for (c, want) in closed.iter().zip([0.4, 1.0 / 3.0, 0.2619, 1.0 / 6.0, 0.0]) {
            assert!((c - want).abs() < 5e-4, "{c} vs {want}");
        }
        assert!(rows.iter().all(|r| !r.flagged), "{rows:?}");
        assert_eq!(rows[4].simulated, 0.0);
    }

    #[test]
    fn independent_voters_quarter() {
        let rows = theory_report(&[0.0], 3, &[], &[], 40_000, 5).unwrap();
        assert!((rows[0].closed.unwrap() - 0.25).abs() < 1e-15);
        assert!((rows[0].simulated - 0.25).abs() < 4.0 * rows[0].se);
    }

    #[test]
    fn even_panels_have_no_closed_form() {
        let rows = theory_report(&[], 10, &[6], &[4], 100, 1).unwrap();
        assert!(rows[0].closed.is_none() && !rows[0].flagged);
    }
}
