use crate::error::{Error, Result};

/// Expected calibration error over `bins` equal-width confidence bins on [0, 1].
///
/// A confidence of exactly 1 falls in the last bin; empty bins are skipped.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() {
        return Err(Error::domain(format!(
            "{} confidences but {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if bins == 0 {
        return Err(Error::domain("need at least one bin"));
    }
    if confidences.is_empty() {
        return Ok(0.0);
    }
    let mut n = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::domain(format!("confidence {c} outside [0, 1]")));
        }
        let b = ((c * bins as f64) as usize).min(bins - 1);
        n[b] += 1;
        conf[b] += c;
        hits[b] += usize::from(ok);
    }
    let total = confidences.len() as f64;
    Ok((0..bins)
        .filter(|&b| n[b] > 0)
        .map(|b| {
            let nb = n[b] as f64;
            nb / total * (hits[b] as f64 / nb - conf[b] / nb).abs()
        })
        .sum())
}

/// Mean of the first and of the last 50 entries.
pub fn first_last_50(queries: &[usize]) -> Result<(f64, f64)> {
    if queries.len() < 100 {
        return Err(Error::domain(format!("need at least 100 examples, got {}", queries.len())));
    }
    let mean = |s: &[usize]| s.iter().sum::<usize>() as f64 / s.len() as f64;
    Ok((mean(&queries[..50]), mean(&queries[queries.len() - 50..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[1.0; 5], &[true; 5], 10).unwrap(), 0.0);
        let conf = [0.8; 10];
        let ok: Vec<bool> = (0..10).map(|i| i < 8).collect();
        assert!(ece(&conf, &ok, 10).unwrap().abs() < 1e-12);
        // Two populated bins: 0.4·|0.5 − 0.9| + 0.6·|1.0 − 0.6|.
        let mut conf = vec![0.9; 4];
        conf.extend([0.6; 6]);
        let ok = [true, true, false, false, true, true, true, true, true, true];
        assert!((ece(&conf, &ok, 10).unwrap() - 0.4).abs() < 1e-12);
        assert!(ece(&[0.5], &[], 10).is_err());
    }

    #[test]
    fn first_and_last_fifty() {
        assert_eq!(first_last_50(&[2; 120]).unwrap(), (2.0, 2.0));
        let mut q = vec![3; 50];
        q.extend(vec![1; 50]);
        assert_eq!(first_last_50(&q).unwrap(), (3.0, 1.0));
        assert!(first_last_50(&[1; 99]).is_err());
    }
}
