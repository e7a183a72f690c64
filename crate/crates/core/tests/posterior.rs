mod common;

use common::{mean_sd, prior_draw, simulate};
use panel_consensus::posterior::{sample_posterior, ChainConfig, History, HyperParams, PanelLayout, SamplerKind};
use panel_consensus::rng;

fn desk_config(seed: u64) -> ChainConfig {
    ChainConfig { seed, ..ChainConfig::default() }
}

#[test]
fn empty_history_recovers_prior() {
    let layout = PanelLayout::full(2, 1, 1).unwrap();
    let hp = HyperParams::default();
    let h = History::new(2, 1, 1);
    let cfg = ChainConfig { chains: 4, warmup: 500, draws: 1000, ..desk_config(11) };
    let set = sample_posterior(&layout, &h, &hp, &cfg, None).unwrap();
    assert_eq!(set.len(), 4000);
    let n_eff = 4000.0 / 4.0;
    let mu0: Vec<f64> = set.samples.iter().map(|p| p.mu[0]).collect();
    let (m, sd) = mean_sd(&mu0);
    assert!((sd - hp.sigma_mu).abs() < 0.2 * hp.sigma_mu, "sd {sd}");
    assert!(m.abs() < 3.0 * sd / f64::sqrt(n_eff), "mean {m}");
    let taus: Vec<f64> = set.samples.iter().map(|p| p.tau).collect();
    let (mt, sdt) = mean_sd(&taus);
    let expected = hp.sigma_tau * (2.0 / std::f64::consts::PI).sqrt();
    assert!((mt - expected).abs() < 3.0 * sdt / f64::sqrt(n_eff), "tau mean {mt} vs {expected}");
}

#[test]
fn draws_satisfy_parameter_invariants() {
    let layout = PanelLayout::full(3, 1, 2).unwrap();
    let hp = HyperParams::default();
    let mut r = rng::from_seed(2);
    let truth = prior_draw(layout.dim(), &hp, &mut r);
    let h = simulate(&layout, &truth, 40, 3);
    let cfg = ChainConfig { chains: 2, warmup: 200, draws: 200, ..desk_config(4) };
    let set = sample_posterior(&layout, &h, &hp, &cfg, None).unwrap();
    for p in &set.samples {
        p.validate().unwrap();
        let omega = p.omega();
        for i in 0..layout.dim() {
            assert!((omega[(i, i)] - 1.0).abs() < 1e-9);
        }
        assert!(omega.clone().cholesky().is_some());
    }
}

#[test]
fn simulation_based_calibration_covers_truth() {
    let layout = PanelLayout::full(2, 1, 2).unwrap();
    let hp = HyperParams::default();
    let d = layout.dim();
    let replicates = 20;
    let mut covered = vec![0usize; d];
    for rep in 0..replicates {
        let mut r = rng::stream(77, "sbc-truth", rep);
        let truth = prior_draw(d, &hp, &mut r);
        let h = simulate(&layout, &truth, 200, rng::derive_seed(77, "sbc-data", rep));
        let set = sample_posterior(&layout, &h, &hp, &desk_config(1000 + rep), None).unwrap();
        for (i, c) in covered.iter_mut().enumerate() {
            let mut v: Vec<f64> = set.samples.iter().map(|p| p.mu[i]).collect();
            v.sort_by(f64::total_cmp);
            let lo = v[(0.05 * v.len() as f64) as usize];
            let hi = v[(0.95 * v.len() as f64) as usize];
            if lo <= truth.mu[i] && truth.mu[i] <= hi {
                *c += 1;
            }
        }
    }
    for (i, c) in covered.iter().enumerate() {
        assert!(*c as f64 >= 0.8 * replicates as f64, "mu[{i}] covered in {c}/{replicates}");
    }
}

#[test]
fn posterior_contracts_with_more_data() {
    let layout = PanelLayout::full(2, 1, 1).unwrap();
    let hp = HyperParams { sigma_mu: 1.0, ..HyperParams::default() };
    let mut r = rng::from_seed(31);
    let mut truth = prior_draw(layout.dim(), &hp, &mut r);
    truth.tau = 0.3;
    let sd_of = |t: usize| {
        let h = simulate(&layout, &truth, t, 32);
        let set = sample_posterior(&layout, &h, &hp, &desk_config(33), None).unwrap();
        (0..layout.dim())
            .map(|i| mean_sd(&set.samples.iter().map(|p| p.mu[i]).collect::<Vec<_>>()).1)
            .collect::<Vec<_>>()
    };
    let small = sd_of(50);
    let large = sd_of(400);
    for (a, b) in small.iter().zip(&large) {
        assert!(b < a, "{small:?} vs {large:?}");
    }
}

#[test]
fn random_walk_mode_runs() {
    let layout = PanelLayout::full(2, 1, 1).unwrap();
    let h = History::new(2, 1, 1);
    let cfg = ChainConfig { kind: SamplerKind::RandomWalk, chains: 2, warmup: 2000, draws: 4000, ..desk_config(5) };
    let set = sample_posterior(&layout, &h, &HyperParams::default(), &cfg, None).unwrap();
    let mu0: Vec<f64> = set.samples.iter().map(|p| p.mu[0]).collect();
    let (m, sd) = mean_sd(&mu0);
    assert!(m.abs() < 0.05 && (sd - 0.1).abs() < 0.04, "{m} {sd}");
}

#[test]
fn same_seed_same_draws() {
    let layout = PanelLayout::full(2, 1, 1).unwrap();
    let hp = HyperParams::default();
    let mut r = rng::from_seed(8);
    let truth = prior_draw(layout.dim(), &hp, &mut r);
    let h = simulate(&layout, &truth, 20, 9);
    let cfg = ChainConfig { chains: 2, warmup: 100, draws: 50, ..desk_config(10) };
    let a = sample_posterior(&layout, &h, &hp, &cfg, None).unwrap();
    let b = sample_posterior(&layout, &h, &hp, &cfg, None).unwrap();
    assert_eq!(a.samples, b.samples);
}

#[test]
fn warm_start_reuses_adaptation() {
    let layout = PanelLayout::full(2, 1, 2).unwrap();
    let hp = HyperParams::default();
    let mut r = rng::from_seed(12);
    let truth = prior_draw(layout.dim(), &hp, &mut r);
    let h = simulate(&layout, &truth, 60, 13);
    let cold = sample_posterior(&layout, &h, &hp, &desk_config(14), None).unwrap();
    let short = ChainConfig { warmup: 100, draws: 500, ..desk_config(15) };
    let warm = sample_posterior(&layout, &h, &hp, &short, Some(&cold)).unwrap();
    let m_cold = mean_sd(&cold.samples.iter().map(|p| p.mu[1]).collect::<Vec<_>>());
    let m_warm = mean_sd(&warm.samples.iter().map(|p| p.mu[1]).collect::<Vec<_>>());
    assert!((m_cold.0 - m_warm.0).abs() < 0.5 * m_cold.1, "{m_cold:?} {m_warm:?}");
}
