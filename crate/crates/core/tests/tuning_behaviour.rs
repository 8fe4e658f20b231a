use std::sync::Arc;

use gthmc::samplers::{sample_chain, ChainRng, ChainState, Hmc, Kernel, Nuts};
use gthmc::targets::{SharedTarget, StandardGaussian};
use gthmc::tuning::{esjd_pathlength_search, tune_step_size};
use rand::SeedableRng;

fn gaussian(dim: usize) -> SharedTarget {
    Arc::new(StandardGaussian { dim })
}

#[test]
fn nuts_reaches_target_acceptance() {
    let t = gaussian(1);
    let mut k = Nuts::new(t.clone(), 1.0);
    let mut state = ChainState::new(t.as_ref(), vec![0.2]).unwrap();
    let mut rng = ChainRng::seed_from_u64(11);
    let eps = tune_step_size(&mut k, &mut state, 2000, 0.8, &mut rng).unwrap();
    assert!(eps > 0.0 && eps.is_finite());
    let rec = sample_chain(&mut k, state.theta.clone(), 0, 5000, 12).unwrap();
    let mean_stat = rec.accept_stats.iter().sum::<f64>() / rec.len() as f64;
    assert!((mean_stat - 0.8).abs() < 0.05, "{mean_stat}");
}

#[test]
fn hmc_reaches_target_acceptance() {
    let t = gaussian(10);
    let mut k = Hmc::with_path_length(t.clone(), 0.5, 1.5);
    let mut state = ChainState::new(t.as_ref(), vec![0.1; 10]).unwrap();
    let mut rng = ChainRng::seed_from_u64(4);
    tune_step_size(&mut k, &mut state, 2000, 0.7, &mut rng).unwrap();
    let rec = sample_chain(&mut k, state.theta.clone(), 0, 5000, 5).unwrap();
    let mean_stat = rec.accept_stats.iter().sum::<f64>() / rec.len() as f64;
    assert!((mean_stat - 0.7).abs() < 0.05, "{mean_stat}");
}

#[test]
fn esjd_search_matches_exact_dynamics() {
    // with a tiny step the leapfrog flow is the exact rotation, whose
    // normalized jump (2 - 2 cos tau) / tau peaks at the largest grid value
    let grid = [0.4, 0.8, 1.2, 1.6, 2.0];
    let t = gaussian(1);
    let eps = 0.01;
    let mut k = Hmc::with_path_length(t.clone(), eps, 1.0);
    let state = ChainState::new(t.as_ref(), vec![0.0]).unwrap();
    let res = esjd_pathlength_search(&mut k, &state, &grid, 20_000, 7).unwrap();
    assert_eq!(res.best, 2.0);
    assert_eq!(k.path_length(), Some(2.0));
    for &(tau, score) in &res.scores {
        let exact = (2.0 - 2.0 * tau.cos()) / (tau / eps);
        assert!((score / exact - 1.0).abs() < 0.05, "tau {tau}: {score} vs {exact}");
    }
}

#[test]
fn esjd_search_rejects_bad_grids() {
    let t = gaussian(1);
    let mut k = Hmc::with_path_length(t.clone(), 0.1, 1.0);
    let state = ChainState::new(t.as_ref(), vec![0.0]).unwrap();
    assert!(esjd_pathlength_search(&mut k, &state, &[], 10, 0).is_err());
    assert!(esjd_pathlength_search(&mut k, &state, &[1.0, 0.5], 10, 0).is_err());
}
