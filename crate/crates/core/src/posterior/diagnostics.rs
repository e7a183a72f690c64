use crate::error::{Error, Result};

/// Split-R̂ over per-chain scalar traces.
///
/// Each chain is cut into halves (dropping the middle draw of odd-length
/// chains) and the classic between/within variance ratio is computed over the
/// halves. Zero-variance traces give 1 by convention; constant but differing
/// chains give infinity.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::domain(format!("R-hat needs at least 2 chains, got {}", chains.len())));
    }
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    if len < 4 {
        return Err(Error::domain(format!("R-hat needs at least 4 draws per chain, got {len}")));
    }
    let n = len / 2;
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = &c[..len];
        halves.push(&c[..n]);
        halves.push(&c[len - n..]);
    }
    let m = halves.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mean)| h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return Ok(if b <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_chains_give_one() {
        assert_eq!(rhat(&[vec![2.0; 10], vec![2.0; 10]]).unwrap(), 1.0);
        assert_eq!(rhat(&[vec![1.0; 10], vec![2.0; 10]]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn iid_chains_near_one() {
        let mut r = rng::from_seed(5);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..10_000).map(|_| StandardNormal.sample(&mut r)).collect())
            .collect();
        let v = rhat(&chains).unwrap();
        assert!((v - 1.0).abs() < 0.01, "{v}");
    }

    #[test]
    fn separated_chains_flagged() {
        let mut r = rng::from_seed(6);
        let chains: Vec<Vec<f64>> = [0.0, 10.0]
            .iter()
            .map(|m| (0..1000).map(|_| { let x: f64 = StandardNormal.sample(&mut r); m + x }).collect())
            .collect();
        assert!(rhat(&chains).unwrap() > 1.5);
    }

    #[test]
    fn matches_direct_formula() {
        // Two chains of length 4 split into four halves of two draws each.
        let chains = vec![vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 2.0, 5.0, 7.0]];
        let halves = [[1.0, 2.0], [3.0, 4.0], [2.0, 2.0], [5.0, 7.0]];
        let means: Vec<f64> = halves.iter().map(|h| (h[0] + h[1]) / 2.0).collect();
        let grand: f64 = means.iter().sum::<f64>() / 4.0;
        let b = 2.0 / 3.0 * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
        let w = halves
            .iter()
            .zip(&means)
            .map(|(h, m)| (h[0] - m).powi(2) + (h[1] - m).powi(2))
            .sum::<f64>()
            / 4.0;
        let expected = ((0.5 * w + 0.5 * b) / w).sqrt();
        assert!((rhat(&chains).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn too_few_chains_or_draws() {
        assert!(matches!(rhat(&[vec![1.0; 10]]), Err(Error::Domain(_))));
        assert!(matches!(rhat(&[vec![1.0; 3], vec![1.0; 3]]), Err(Error::Domain(_))));
    }
}
