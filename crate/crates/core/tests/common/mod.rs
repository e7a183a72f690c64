#![allow(dead_code)]

use nalgebra::DVector;
use panel_consensus::gaussian::sample_with_factor;
use panel_consensus::posterior::{lkj, History, HistoryRecord, HyperParams, PanelLayout, PanelParams};
use panel_consensus::rng;
use panel_consensus::simplex::log_temper_into;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Parameters drawn from the prior.
pub fn prior_draw(d: usize, hp: &HyperParams, r: &mut impl Rng) -> PanelParams {
    let normal = |r: &mut dyn rand::RngCore| -> f64 { StandardNormal.sample(r) };
    let mu = (0..d).map(|_| hp.sigma_mu * normal(r)).collect();
    let sigma = (0..d).map(|_| (hp.sigma_sigma * normal(r)).abs().max(0.05)).collect();
    let y: Vec<f64> = (0..lkj::free_count(d)).map(|_| 0.4 * normal(r)).collect();
    let mut omega_chol = vec![0.0; d * d];
    lkj::constrain(&y, d, &mut omega_chol).unwrap();
    let tau = (hp.sigma_tau * normal(r)).abs().max(0.05);
    PanelParams { mu, sigma, omega_chol, tau }
}

/// Fully observed records generated from `truth`.
pub fn simulate(layout: &PanelLayout, truth: &PanelParams, t: usize, seed: u64) -> History {
    let mut r = rng::from_seed(seed);
    let l = truth.cov_chol();
    let mu = DVector::from_column_slice(&truth.mu);
    let k = layout.classes();
    let md = layout.model_dim();
    let mut h = History::new(k, layout.classifiers(), layout.experts());
    let mut lp = vec![0.0; k];
    for _ in 0..t {
        let z = sample_with_factor(&mu, &l, &mut r);
        let votes = (0..layout.experts())
            .map(|e| {
                let off = md + layout.latent_offset(e);
                log_temper_into(&z.as_slice()[off..off + k - 1], truth.tau, &mut lp);
                let u: f64 = r.random();
                let mut acc = 0.0;
                let mut class = k - 1;
                for (c, p) in lp.iter().enumerate() {
                    acc += p.exp();
                    if u < acc {
                        class = c;
                        break;
                    }
                }
                (e, class)
            })
            .collect();
        h.push(HistoryRecord { model_logits: z.as_slice()[..md].to_vec(), votes }).unwrap();
    }
    h
}

