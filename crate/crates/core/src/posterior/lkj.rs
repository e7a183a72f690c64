//! Cholesky factors of correlation matrices via canonical partial
//! correlations (CPCs).
//!
//! Unconstrained values `y` map to CPCs `tanh(y)`, and row `i` of the factor is
//! built as `L[i][j] = cpc[i][j] · sqrt(1 − Σ_{k<j} L[i][k]²)`, with the
//! diagonal absorbing the remaining mass. Every factor produced this way has
//! unit-norm rows, so `L Lᵀ` is a valid correlation matrix.

/// Number of free values for a `d × d` correlation matrix.
pub fn free_count(d: usize) -> usize {
    d * (d - 1) / 2
}

/// Map unconstrained values to a row-major `d × d` lower-triangular factor.
///
/// Returns the log absolute Jacobian determinant of `y ↦ (strict lower part of
/// L)`, or `None` if a CPC saturated at ±1.
pub fn constrain(y: &[f64], d: usize, l: &mut [f64]) -> Option<f64> {
    debug_assert_eq!(y.len(), free_count(d));
    debug_assert_eq!(l.len(), d * d);
    l.iter_mut().for_each(|v| *v = 0.0);
    l[0] = 1.0;
    let mut log_jac = 0.0;
    let mut k = 0;
    for i in 1..d {
        let mut sum_sq = 0.0f64;
        for j in 0..i {
            let t = y[k].tanh();
            let one_minus = 1.0 - t * t;
            if one_minus <= 0.0 {
                return None;
            }
            log_jac += one_minus.ln();
            let w = (1.0 - sum_sq).max(0.0).sqrt();
            if j > 0 {
                log_jac += w.ln();
            }
            let v = t * w;
            l[i * d + j] = v;
            sum_sq += v * v;
            k += 1;
        }
        let diag = 1.0 - sum_sq;
        if diag <= 0.0 {
            return None;
        }
        l[i * d + i] = diag.sqrt();
    }
    Some(log_jac)
}

/// Reverse-mode pass through [`constrain`].
///
/// `grad_l` holds `∂f/∂L` (row-major, lower triangle, diagonal included);
/// the gradient of `f(L(y)) + log_jac(y)` with respect to `y` is added into
/// `grad_y`.
pub fn backprop(y: &[f64], d: usize, l: &[f64], grad_l: &[f64], grad_y: &mut [f64]) {
    let mut row_start = 0;
    for i in 1..d {
        let n = i;
        // Recompute forward quantities for this row.
        let mut sums = Vec::with_capacity(n + 1);
        let mut s = 0.0;
        sums.push(0.0);
        for j in 0..n {
            let v = l[i * d + j];
            s += v * v;
            sums.push(s);
        }
        let diag = l[i * d + i];
        // L_ii = sqrt(1 − S_n)
        let mut g_s = grad_l[i * d + i] * (-0.5 / diag);
        for j in (0..n).rev() {
            let v = l[i * d + j];
            let t = y[row_start + j].tanh();
            let w = (1.0 - sums[j]).max(0.0).sqrt();
            // S_{j+1} = S_j + L_ij²
            let g_v = grad_l[i * d + j] + 2.0 * v * g_s;
            // L_ij = t · w
            let g_t = g_v * w;
            let mut g_w = g_v * t;
            if j > 0 {
                g_w += 1.0 / w;
                // w = sqrt(1 − S_j)
                g_s += g_w * (-0.5 / w);
            }
            // t = tanh(y); log(1 − t²) contributes −2t.
            grad_y[row_start + j] += g_t * (1.0 - t * t) - 2.0 * t;
        }
        row_start += n;
    }
}

/// LKJ(η) log-density of `Ω = L Lᵀ` with respect to Lebesgue measure on the
/// off-diagonal entries of Ω, up to its normalizing constant.
pub fn lkj_log_density(l: &[f64], d: usize, eta: f64) -> f64 {
    (0..d).map(|i| 2.0 * (eta - 1.0) * l[i * d + i].ln()).sum()
}

/// Log Jacobian of the map from the strict lower part of `L` to the strict
/// upper part of `Ω = L Lᵀ` (unit-diagonal case).
pub fn cholesky_to_corr_log_jac(l: &[f64], d: usize) -> f64 {
    (1..d).map(|i| (d - 1 - i) as f64 * l[i * d + i].ln()).sum()
}

/// Coefficient of `log L_ii` in LKJ density plus the factor-to-correlation
/// Jacobian, used by the sampler's gradient.
pub fn lkj_factor_coefficient(i: usize, d: usize, eta: f64) -> f64 {
    if i == 0 {
        0.0
    } else {
        (d - 1 - i) as f64 + 2.0 * (eta - 1.0)
    }
}

/// Inverse of [`constrain`] for a valid correlation factor.
pub fn unconstrain(l: &[f64], d: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(free_count(d));
    for i in 1..d {
        let mut sum_sq = 0.0f64;
        for j in 0..i {
            let v = l[i * d + j];
            let w = (1.0 - sum_sq).max(1e-300).sqrt();
            let t = (v / w).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
            y.push(t.atanh());
            sum_sq += v * v;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn random_y(d: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::from_seed(seed);
        (0..free_count(d)).map(|_| r.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn rows_have_unit_norm_and_round_trip() {
        for d in 2..6 {
            let y = random_y(d, d as u64);
            let mut l = vec![0.0; d * d];
            constrain(&y, d, &mut l).unwrap();
            for i in 0..d {
                let norm: f64 = (0..=i).map(|j| l[i * d + j].powi(2)).sum();
                assert!((norm - 1.0).abs() < 1e-12);
                assert!(l[i * d + i] > 0.0);
            }
            let back = unconstrain(&l, d);
            for (a, b) in back.iter().zip(&y) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    /// Finite-difference Jacobian determinant of y ↦ strict-lower entries of Ω.
    #[test]
    fn jacobian_matches_finite_differences() {
        for d in 2..5 {
            let y = random_y(d, 11 + d as u64);
            let n = free_count(d);
            let corr_entries = |y: &[f64]| -> Vec<f64> {
                let mut l = vec![0.0; d * d];
                constrain(y, d, &mut l).unwrap();
                let lm = DMatrix::from_row_slice(d, d, &l);
                let omega = &lm * lm.transpose();
                let mut out = Vec::new();
                for i in 1..d {
                    for j in 0..i {
                        out.push(omega[(i, j)]);
                    }
                }
                out
            };
            let h = 1e-6;
            let mut jac = DMatrix::<f64>::zeros(n, n);
            for c in 0..n {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[c] += h;
                ym[c] -= h;
                let fp = corr_entries(&yp);
                let fm = corr_entries(&ym);
                for r in 0..n {
                    jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
                }
            }
            let fd_log_det = jac.determinant().abs().ln();
            let mut l = vec![0.0; d * d];
            let lj = constrain(&y, d, &mut l).unwrap();
            let analytic = lj + cholesky_to_corr_log_jac(&l, d);
            assert!((fd_log_det - analytic).abs() < 1e-6, "d={d}: {fd_log_det} vs {analytic}");
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let d = 4;
        let y = random_y(d, 5);
        // f(L) = Σ c_ij L_ij with arbitrary weights, plus the log Jacobian.
        let weights: Vec<f64> = (0..d * d).map(|k| ((k * 7) % 5) as f64 * 0.3 - 0.6).collect();
        let objective = |y: &[f64]| {
            let mut l = vec![0.0; d * d];
            let lj = constrain(y, d, &mut l).unwrap();
            lj + (0..d)
                .flat_map(|i| (0..=i).map(move |j| (i, j)))
                .map(|(i, j)| weights[i * d + j] * l[i * d + j])
                .sum::<f64>()
        };
        let mut l = vec![0.0; d * d];
        constrain(&y, d, &mut l).unwrap();
        let mut grad_l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                grad_l[i * d + j] = weights[i * d + j];
            }
        }
        let mut g = vec![0.0; y.len()];
        backprop(&y, d, &l, &grad_l, &mut g);
        let h = 1e-5;
        for c in 0..y.len() {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[c] += h;
            ym[c] -= h;
            let fd = (objective(&yp) - objective(&ym)) / (2.0 * h);
            assert!((fd - g[c]).abs() < 1e-7 * fd.abs().max(1.0), "{c}: {fd} vs {}", g[c]);
        }
    }

    #[test]
    fn lkj_uniform_at_eta_one() {
        let y = random_y(3, 3);
        let mut l = vec![0.0; 9];
        constrain(&y, 3, &mut l).unwrap();
        assert_eq!(lkj_log_density(&l, 3, 1.0), 0.0);
        // (η − 1) log det Ω
        let lm = DMatrix::from_row_slice(3, 3, &l);
        let det = (&lm * lm.transpose()).determinant();
        assert!((lkj_log_density(&l, 3, 0.75) - (-0.25) * det.ln()).abs() < 1e-12);
    }
}
