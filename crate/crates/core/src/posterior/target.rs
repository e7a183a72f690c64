//! Unconstrained, non-centered sampler target.
//!
//! Position layout: `m (d) | log s (d) | CPC values (d(d−1)/2) | log τ |
//! ε per voted record (latent_dim each)`. Classifier coordinates use
//! `μ = m, σ = s`; latent expert coordinates are measured in units of the
//! temperature, `μ = τ m, σ = τ s`, so the vote likelihood does not depend on
//! τ and the scale ridge between τ and the latent block disappears.
//!
//! A voted record's latent logits are `z_H = μ_H + L_HM ε_M + L_HH ε_H` with
//! `ε_M = L_MM⁻¹ (z_M − μ_M)` fixed by the observed classifier logits, where
//! `L` is the Cholesky factor of Σ.

use super::{lkj, History, HyperParams, PanelLayout, PanelParams};
use crate::simplex::log_temper_into;

struct TargetRecord {
    model_logits: Vec<f64>,
    /// `(latent offset, class)` for each revealed vote.
    votes: Vec<(usize, usize)>,
    latent_slot: Option<usize>,
}

pub struct PosteriorTarget {
    layout: PanelLayout,
    hp: HyperParams,
    records: Vec<TargetRecord>,
    voted: usize,
}

impl PosteriorTarget {
    pub fn new(layout: PanelLayout, history: &History, hp: HyperParams) -> Self {
        let mut voted = 0;
        let records = history
            .records()
            .iter()
            .map(|r| {
                let latent_slot = if r.votes.is_empty() {
                    None
                } else {
                    voted += 1;
                    Some(voted - 1)
                };
                TargetRecord {
                    model_logits: r.model_logits.clone(),
                    votes: r.votes.iter().map(|&(e, c)| (layout.latent_offset(e), c)).collect(),
                    latent_slot,
                }
            })
            .collect();
        PosteriorTarget { layout, hp, records, voted }
    }

    pub fn layout(&self) -> &PanelLayout {
        &self.layout
    }

    /// Number of global (non-latent) unconstrained coordinates.
    pub fn global_dim(&self) -> usize {
        let d = self.layout.dim();
        2 * d + lkj::free_count(d) + 1
    }

    pub fn dim(&self) -> usize {
        self.global_dim() + self.voted * self.layout.latent_dim()
    }

    pub fn voted_records(&self) -> usize {
        self.voted
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let d = self.layout.dim();
        let cpc = 2 * d;
        let tau = cpc + lkj::free_count(d);
        (d, cpc, tau, tau + 1)
    }

    /// Global parameters at an unconstrained position.
    pub fn constrain(&self, u: &[f64]) -> Option<PanelParams> {
        let d = self.layout.dim();
        let (sig_off, cpc_off, tau_off, _) = self.offsets();
        let mut omega_chol = vec![0.0; d * d];
        lkj::constrain(&u[cpc_off..tau_off], d, &mut omega_chol)?;
        let tau = u[tau_off].exp();
        let md = self.layout.model_dim();
        let scale = |i: usize| if i < md { 1.0 } else { tau };
        Some(PanelParams {
            mu: (0..d).map(|i| u[i] * scale(i)).collect(),
            sigma: (0..d).map(|i| u[sig_off + i].exp() * scale(i)).collect(),
            omega_chol,
            tau,
        })
    }

    /// Latent logits per record (empty for records without votes).
    pub fn latent_logits(&self, u: &[f64]) -> Option<Vec<Vec<f64>>> {
        let params = self.constrain(u)?;
        let l = params.cov_chol();
        let md = self.layout.model_dim();
        let hd = self.layout.latent_dim();
        let (.., lat_off) = self.offsets();
        Some(
            self.records
                .iter()
                .map(|rec| match rec.latent_slot {
                    None => Vec::new(),
                    Some(slot) => {
                        let eps_h = &u[lat_off + slot * hd..lat_off + (slot + 1) * hd];
                        let mut eps_m = vec![0.0; md];
                        for i in 0..md {
                            let mut s = rec.model_logits[i] - params.mu[i];
                            for (j, e) in eps_m.iter().enumerate().take(i) {
                                s -= l[(i, j)] * e;
                            }
                            eps_m[i] = s / l[(i, i)];
                        }
                        (0..hd)
                            .map(|a| {
                                let row = md + a;
                                let mut z = params.mu[row];
                                for (j, e) in eps_m.iter().enumerate() {
                                    z += l[(row, j)] * e;
                                }
                                for (b, e) in eps_h.iter().enumerate().take(a + 1) {
                                    z += l[(row, md + b)] * e;
                                }
                                z
                            })
                            .collect()
                    }
                })
                .collect(),
        )
    }

    /// Unconstrained coordinates of the global parameters.
    pub fn unconstrain_globals(&self, params: &PanelParams) -> Vec<f64> {
        let d = self.layout.dim();
        let md = self.layout.model_dim();
        let scale = |i: usize| if i < md { 1.0 } else { params.tau };
        let mut u: Vec<f64> = (0..d).map(|i| params.mu[i] / scale(i)).collect();
        u.extend((0..d).map(|i| (params.sigma[i] / scale(i)).ln()));
        u.extend(lkj::unconstrain(&params.omega_chol, d));
        u.push(params.tau.ln());
        u
    }

    /// Names of the global scalar parameters reported by diagnostics.
    pub fn global_names(&self) -> Vec<String> {
        let d = self.layout.dim();
        let mut names: Vec<String> = (0..d).map(|i| format!("mu[{i}]")).collect();
        names.extend((0..d).map(|i| format!("sigma[{i}]")));
        for i in 1..d {
            for j in 0..i {
                names.push(format!("omega[{i},{j}]"));
            }
        }
        names.push("tau".into());
        names
    }

    /// Constrained scalar values in the order of [`Self::global_names`].
    pub fn global_values(params: &PanelParams) -> Vec<f64> {
        let d = params.dim();
        let mut v = params.mu.clone();
        v.extend(&params.sigma);
        let omega = params.omega();
        for i in 1..d {
            for j in 0..i {
                v.push(omega[(i, j)]);
            }
        }
        v.push(params.tau);
        v
    }

    pub fn log_density(&self, u: &[f64]) -> f64 {
        let mut g = vec![0.0; u.len()];
        self.log_density_and_grad(u, &mut g)
    }

    /// Log density (including all Jacobians) and its gradient; returns
    /// `-inf` outside the support of the transforms.
    pub fn log_density_and_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(u.len(), self.dim());
        grad.iter_mut().for_each(|g| *g = 0.0);
        let d = self.layout.dim();
        let md = self.layout.model_dim();
        let hd = self.layout.latent_dim();
        let km1 = self.layout.logit_dim();
        let (sig_off, cpc_off, tau_off, lat_off) = self.offsets();
        let hp = &self.hp;

        let mut omega_l = vec![0.0; d * d];
        let Some(cpc_jac) = lkj::constrain(&u[cpc_off..tau_off], d, &mut omega_l) else {
            return f64::NEG_INFINITY;
        };
        let tau = u[tau_off].exp();
        let scale = |i: usize| if i < md { 1.0 } else { tau };
        let mu: Vec<f64> = (0..d).map(|i| u[i] * scale(i)).collect();
        let sigma: Vec<f64> = (0..d).map(|i| u[sig_off + i].exp() * scale(i)).collect();
        if !(tau > 0.0 && tau.is_finite()) || sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return f64::NEG_INFINITY;
        }
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                l[i * d + j] = sigma[i] * omega_l[i * d + j];
            }
        }

        // Priors and Jacobians.
        let mut lp = 0.0;
        let inv_mu2 = 1.0 / (hp.sigma_mu * hp.sigma_mu);
        let inv_sig2 = 1.0 / (hp.sigma_sigma * hp.sigma_sigma);
        for i in 0..d {
            lp -= 0.5 * mu[i] * mu[i] * inv_mu2;
            lp += -0.5 * sigma[i] * sigma[i] * inv_sig2 + sigma[i].ln();
            lp += lkj::lkj_factor_coefficient(i, d, hp.eta) * omega_l[i * d + i].ln();
        }
        lp += cpc_jac;
        // The τ-scaled latent means add `hd log τ` to the Jacobian.
        lp += -0.5 * tau * tau / (hp.sigma_tau * hp.sigma_tau) + (1 + hd) as f64 * u[tau_off];

        let mut g_mu = vec![0.0; d];
        let mut g_l = vec![0.0; d * d];
        let mut g_tau = 0.0;
        let mut eps_m = vec![0.0; md];
        let mut g_eps_m = vec![0.0; md];
        let mut q = vec![0.0; md];
        let mut z_h = vec![0.0; hd];
        let mut g_z = vec![0.0; hd];
        let mut logp = vec![0.0; km1 + 1];

        for rec in &self.records {
            for i in 0..md {
                let mut s = rec.model_logits[i] - mu[i];
                for j in 0..i {
                    s -= l[i * d + j] * eps_m[j];
                }
                eps_m[i] = s / l[i * d + i];
            }
            for i in 0..md {
                lp -= 0.5 * eps_m[i] * eps_m[i];
                g_eps_m[i] = -eps_m[i];
            }

            if let Some(slot) = rec.latent_slot {
                let base = lat_off + slot * hd;
                let eps_h = &u[base..base + hd];
                for a in 0..hd {
                    let row = (md + a) * d;
                    let mut z = mu[md + a];
                    for j in 0..md {
                        z += l[row + j] * eps_m[j];
                    }
                    for b in 0..=a {
                        z += l[row + md + b] * eps_h[b];
                    }
                    z_h[a] = z;
                    lp -= 0.5 * eps_h[a] * eps_h[a];
                    g_z[a] = 0.0;
                }
                for &(off, class) in &rec.votes {
                    let zb = &z_h[off..off + km1];
                    log_temper_into(zb, tau, &mut logp);
                    lp += logp[class];
                    for k in 0..km1 {
                        let resid = if k == class { 1.0 } else { 0.0 } - logp[k].exp();
                        g_z[off + k] += resid / tau;
                        g_tau -= resid * zb[k] / (tau * tau);
                    }
                }
                let g_eps_h = &mut grad[base..base + hd];
                for b in 0..hd {
                    let mut s = -eps_h[b];
                    for a in b..hd {
                        s += l[(md + a) * d + md + b] * g_z[a];
                    }
                    g_eps_h[b] = s;
                }
                for a in 0..hd {
                    let ga = g_z[a];
                    if ga == 0.0 {
                        continue;
                    }
                    let row = (md + a) * d;
                    g_mu[md + a] += ga;
                    for j in 0..md {
                        g_l[row + j] += ga * eps_m[j];
                        g_eps_m[j] += l[row + j] * ga;
                    }
                    for b in 0..=a {
                        g_l[row + md + b] += ga * eps_h[b];
                    }
                }
            }

            // q = L_MM⁻ᵀ g_eps_m
            for i in (0..md).rev() {
                let mut s = g_eps_m[i];
                for k in (i + 1)..md {
                    s -= l[k * d + i] * q[k];
                }
                q[i] = s / l[i * d + i];
            }
            for i in 0..md {
                g_mu[i] -= q[i];
                for j in 0..=i {
                    g_l[i * d + j] -= q[i] * eps_m[j];
                }
            }
        }

        let n = self.records.len() as f64;
        for i in 0..md {
            lp -= n * l[i * d + i].ln();
            g_l[i * d + i] -= n / l[i * d + i];
        }

        // Chain rule back to unconstrained coordinates; latent coordinates
        // also move with log τ.
        let mut g_log_tau = tau * g_tau - tau * tau / (hp.sigma_tau * hp.sigma_tau) + (1 + hd) as f64;
        let mut g_omega = vec![0.0; d * d];
        for i in 0..d {
            let g_mu_i = g_mu[i] - mu[i] * inv_mu2;
            let mut g_sigma = 0.0;
            for j in 0..=i {
                g_sigma += g_l[i * d + j] * omega_l[i * d + j];
                g_omega[i * d + j] = g_l[i * d + j] * sigma[i];
            }
            g_omega[i * d + i] += lkj::lkj_factor_coefficient(i, d, hp.eta) / omega_l[i * d + i];
            let g_log_sigma = sigma[i] * g_sigma - sigma[i] * sigma[i] * inv_sig2 + 1.0;
            grad[i] = g_mu_i * scale(i);
            grad[sig_off + i] = g_log_sigma;
            if i >= md {
                g_log_tau += mu[i] * g_mu_i + g_log_sigma;
            }
        }
        lkj::backprop(&u[cpc_off..tau_off], d, &omega_l, &g_omega, &mut grad[cpc_off..tau_off]);
        grad[tau_off] = g_log_tau;

        if lp.is_finite() {
            lp
        } else {
            f64::NEG_INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{log_joint, HistoryRecord};
    use crate::rng;
    use rand::Rng;

    fn toy_history(classes: usize, experts: usize, n: usize, seed: u64) -> History {
        let mut r = rng::from_seed(seed);
        let mut h = History::new(classes, 1, experts);
        for t in 0..n {
            let logits = (0..classes - 1).map(|_| r.random_range(-2.0..2.0)).collect();
            let votes = (0..experts)
                .filter(|e| (t + e) % 3 != 0)
                .map(|e| (e, r.random_range(0..classes)))
                .collect();
            h.push(HistoryRecord { model_logits: logits, votes }).unwrap();
        }
        h
    }

    fn random_position(target: &PosteriorTarget, seed: u64) -> Vec<f64> {
        let mut r = rng::from_seed(seed);
        (0..target.dim()).map(|_| r.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn matches_centered_log_joint_plus_jacobians() {
        for (k, h_count) in [(2, 1), (2, 3), (3, 2)] {
            let layout = PanelLayout::full(k, 1, h_count).unwrap();
            let history = toy_history(k, h_count, 9, 3);
            let hp = HyperParams::default();
            let target = PosteriorTarget::new(layout.clone(), &history, hp);
            let mut offsets = Vec::new();
            for seed in 0..5 {
                let u = random_position(&target, seed);
                let params = target.constrain(&u).unwrap();
                let latents = target.latent_logits(&u).unwrap();
                let direct = log_joint(&layout, &params, &latents, &history, &hp).unwrap();
                let d = layout.dim();
                let md = layout.model_dim();
                let l = params.cov_chol();
                let (_, cpc_off, tau_off, _) = target.offsets();
                let mut scratch = vec![0.0; d * d];
                let cpc_jac = lkj::constrain(&u[cpc_off..tau_off], d, &mut scratch).unwrap();
                let jac = params.sigma.iter().map(|s| s.ln()).sum::<f64>()
                    + (1 + layout.latent_dim()) as f64 * params.tau.ln()
                    + cpc_jac
                    + lkj::cholesky_to_corr_log_jac(&params.omega_chol, d)
                    + target.voted_records() as f64 * (md..d).map(|i| l[(i, i)].ln()).sum::<f64>();
                offsets.push(target.log_density(&u) - direct - jac);
            }
            for o in &offsets {
                assert!((o - offsets[0]).abs() < 1e-8, "{offsets:?}");
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let layout = PanelLayout::full(3, 1, 2).unwrap();
        let history = toy_history(3, 2, 6, 8);
        let target = PosteriorTarget::new(layout, &history, HyperParams::default());
        for seed in 0..5 {
            let u = random_position(&target, 40 + seed);
            let mut g = vec![0.0; u.len()];
            target.log_density_and_grad(&u, &mut g);
            let h = 1e-5;
            for c in 0..u.len() {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[c] += h;
                dn[c] -= h;
                let fd = (target.log_density(&up) - target.log_density(&dn)) / (2.0 * h);
                assert!((fd - g[c]).abs() <= 1e-4 * fd.abs().max(1.0), "coord {c}: fd {fd} analytic {}", g[c]);
            }
        }
    }

    #[test]
    fn exchangeable_layout_shares_one_block() {
        let layout = PanelLayout::exchangeable(2, 1, 3).unwrap();
        assert_eq!(layout.dim(), 2);
        let history = toy_history(2, 3, 5, 1);
        let target = PosteriorTarget::new(layout, &history, HyperParams::default());
        let u = random_position(&target, 2);
        assert!(target.log_density(&u).is_finite());
    }

    #[test]
    fn globals_round_trip() {
        let layout = PanelLayout::full(3, 1, 2).unwrap();
        let target = PosteriorTarget::new(layout, &History::new(3, 1, 2), HyperParams::default());
        let u = random_position(&target, 77);
        let p = target.constrain(&u).unwrap();
        let back = target.unconstrain_globals(&p);
        for (a, b) in back.iter().zip(&u) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
