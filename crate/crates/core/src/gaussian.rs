//! Dense multivariate normal machinery: Cholesky factorization, sampling,
//! exact conditioning on an observed sub-vector, and equicorrelated
//! covariance construction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Diagonal jitter added once when a factorization fails.
pub const CHOLESKY_JITTER: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::domain(format!(
                "covariance is {}x{}, mean has length {d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::domain(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Gaussian { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sorted observed coordinates and their sorted complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPartition {
    observed: Vec<usize>,
    unobserved: Vec<usize>,
}

impl IndexPartition {
    pub fn new(observed: &[usize], dim: usize) -> Result<Self> {
        let mut obs = observed.to_vec();
        obs.sort_unstable();
        obs.dedup();
        if obs.len() != observed.len() {
            return Err(Error::domain("observed indices contain duplicates"));
        }
        if let Some(&bad) = obs.iter().find(|&&i| i >= dim) {
            return Err(Error::domain(format!("observed index {bad} out of range for dim {dim}")));
        }
        let unobserved = (0..dim).filter(|i| obs.binary_search(i).is_err()).collect();
        Ok(IndexPartition { observed: obs, unobserved })
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn unobserved(&self) -> &[usize] {
        &self.unobserved
    }
}

/// Lower-triangular Cholesky factor with no regularization.
///
/// On failure the error carries the index of the first non-positive pivot.
pub fn cholesky_strict(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::domain("cholesky needs a square matrix"));
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0 && diag.is_finite()) {
            return Err(Error::Numerical {
                pivot: j,
                message: format!("matrix is not positive definite (pivot value {diag:e})"),
            });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Cholesky factor, retrying once with [`CHOLESKY_JITTER`] on the diagonal.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match cholesky_strict(a) {
        Ok(l) => Ok(l),
        Err(Error::Numerical { .. }) => {
            let n = a.nrows();
            cholesky_strict(&(a + DMatrix::<f64>::identity(n, n) * CHOLESKY_JITTER))
        }
        Err(e) => Err(e),
    }
}

/// Solve `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Distribution of the unobserved coordinates given the observed ones.
pub fn condition(g: &Gaussian, part: &IndexPartition, observed_values: &[f64]) -> Result<Gaussian> {
    let obs = part.observed();
    let unobs = part.unobserved();
    if obs.len() + unobs.len() != g.dim() {
        return Err(Error::domain("partition does not match the gaussian's dimension"));
    }
    if observed_values.len() != obs.len() {
        return Err(Error::domain(format!(
            "expected {} observed values, got {}",
            obs.len(),
            observed_values.len()
        )));
    }
    if obs.is_empty() {
        return Ok(g.clone());
    }
    let s_oo = submatrix(&g.cov, obs, obs);
    let s_uo = submatrix(&g.cov, unobs, obs);
    let s_uu = submatrix(&g.cov, unobs, unobs);
    let l_oo = cholesky(&s_oo)?;

    let resid = DVector::from_iterator(obs.len(), obs.iter().zip(observed_values).map(|(&i, &x)| x - g.mean[i]));
    let alpha = solve_lower_transpose(&l_oo, &solve_lower(&l_oo, &resid));
    let mut mean = DVector::from_iterator(unobs.len(), unobs.iter().map(|&i| g.mean[i]));
    mean += &s_uo * alpha;

    // W = L_oo⁻¹ Σ_OU, so Σ_UO Σ_OO⁻¹ Σ_OU = Wᵀ W.
    let mut w = DMatrix::<f64>::zeros(obs.len(), unobs.len());
    for c in 0..unobs.len() {
        let col = solve_lower(&l_oo, &s_uo.row(c).transpose());
        w.set_column(c, &col);
    }
    let cov = s_uu - w.transpose() * w;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(Gaussian { mean, cov })
}

pub fn sample<R: Rng + ?Sized>(g: &Gaussian, rng: &mut R) -> Result<DVector<f64>> {
    let l = cholesky(&g.cov)?;
    Ok(sample_with_factor(&g.mean, &l, rng))
}

/// Draw `mean + L ε` for a precomputed lower factor `L`.
pub fn sample_with_factor<R: Rng + ?Sized>(mean: &DVector<f64>, l: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let n = mean.len();
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = mean.clone();
    for i in 0..n {
        let mut s = 0.0;
        for (k, e) in eps.iter().enumerate().take(i + 1) {
            s += l[(i, k)] * e;
        }
        out[i] += s;
    }
    out
}

/// Unit-variance covariance with every off-diagonal correlation equal to `rho`.
pub fn equicorrelated_cov(d: usize, rho: f64) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(Error::domain("dimension must be positive"));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::domain(format!("rho must lie in [0, 1), got {rho}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho }))
}
