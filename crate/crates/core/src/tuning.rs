//! Step-size adaptation by dual averaging and path-length selection by
//! expected squared jumping distance per gradient evaluation.

use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::samplers::{chain_seed, ChainRng, ChainState, Kernel};

/// Dual-averaging controller of `log eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAveraging {
    pub mu: f64,
    pub log_eps: f64,
    pub log_eps_bar: f64,
    pub h_bar: f64,
    pub iteration: usize,
    pub delta: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
}

impl DualAveraging {
    /// Shrinks toward `log eps0`, with gamma 0.05, t0 10 and kappa 0.75.
    pub fn new(eps0: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
        }
        if !(eps0 > 0.0 && eps0.is_finite()) {
            return Err(Error::InvalidArgument(format!("initial step size must be positive, got {eps0}")));
        }
        Ok(Self {
            mu: eps0.ln(),
            log_eps: eps0.ln(),
            log_eps_bar: eps0.ln(),
            h_bar: 0.0,
            iteration: 0,
            delta,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
        })
    }

    pub fn update(&mut self, stat: f64) {
        let stat = if stat.is_nan() { 0.0 } else { stat.clamp(0.0, 1.0) };
        self.iteration += 1;
        let m = self.iteration as f64;
        let w = 1.0 / (m + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.delta - stat);
        self.log_eps = self.mu - m.sqrt() / self.gamma * self.h_bar;
        let x = m.powf(-self.kappa);
        self.log_eps_bar = x * self.log_eps + (1.0 - x) * self.log_eps_bar;
    }

    /// Step size to use on the next iteration.
    pub fn step_size(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Averaged step size, used once adaptation ends.
    pub fn final_step_size(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Adapts the kernel's step size over `n_adapt` iterations, advancing `state`.
/// Truncated transitions do not update the controller.
/// Leaves the kernel at the averaged step size and returns it.
pub fn tune_step_size<K: Kernel + ?Sized>(
    kernel: &mut K,
    state: &mut ChainState,
    n_adapt: usize,
    delta: f64,
    rng: &mut ChainRng,
) -> Result<f64> {
    let mut da = DualAveraging::new(kernel.step_size(), delta)?;
    for _ in 0..n_adapt {
        kernel.set_step_size(da.step_size());
        let t = kernel.transition(state, rng);
        // a truncated trajectory says nothing about integration accuracy
        if !t.truncated {
            da.update(t.accept_stat);
        }
    }
    let eps = da.final_step_size();
    kernel.set_step_size(eps);
    Ok(eps)
}

/// Mean squared jump per iteration divided by mean gradient evaluations per iteration.
pub fn esjd(samples: &[Vec<f64>], start: &[f64], grad_evals: u64) -> f64 {
    if samples.is_empty() || grad_evals == 0 {
        return 0.0;
    }
    let mut prev = start;
    let mut total = 0.0;
    for s in samples {
        total += s.iter().zip(prev).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        prev = s;
    }
    let n = samples.len() as f64;
    (total / n) / (grad_evals as f64 / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathLengthSearch {
    pub best: f64,
    pub scores: Vec<(f64, f64)>,
}

/// Runs a pilot chain from `state` for each path length in `grid` and keeps
/// the one with the largest normalized ESJD; ties go to the smaller value.
/// Leaves the kernel at the selected path length.
pub fn esjd_pathlength_search<K: Kernel + ?Sized>(
    kernel: &mut K,
    state: &ChainState,
    grid: &[f64],
    pilot_iters: usize,
    seed: u64,
) -> Result<PathLengthSearch> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("path-length grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("path-length grid must be strictly ascending".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for (i, &tau) in grid.iter().enumerate() {
        kernel.set_path_length(tau);
        let mut rng = ChainRng::seed_from_u64(chain_seed(seed, i as u64));
        let mut s = state.clone();
        let mut samples = Vec::with_capacity(pilot_iters);
        let mut grads = 0u64;
        for _ in 0..pilot_iters {
            let t = kernel.transition(&mut s, &mut rng);
            grads += t.grad_evals as u64;
            samples.push(s.theta.clone());
        }
        scores.push((tau, esjd(&samples, &state.theta, grads)));
    }
    let best = best_of(&scores);
    kernel.set_path_length(best);
    Ok(PathLengthSearch { best, scores })
}

fn best_of(scores: &[(f64, f64)]) -> f64 {
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 > best.1 {
            best = s;
        }
    }
    best.0
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_spaced_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub rounds: usize,
    pub adapt_iters: usize,
    pub delta: f64,
    pub tau_grid: Vec<f64>,
    pub pilot_iters: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self { rounds: 3, adapt_iters: 500, delta: 0.9, tau_grid: log_spaced_grid(0.25, 8.0, 8), pilot_iters: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuned {
    pub eps: f64,
    pub tau: Option<f64>,
    /// Step size after each round.
    pub eps_history: Vec<f64>,
}

/// Alternates step-size adaptation and path-length search `rounds` times.
/// Kernels without a path length only adapt the step size.
pub fn alternate_tune<K: Kernel + ?Sized>(
    kernel: &mut K,
    state: &mut ChainState,
    config: &TuneConfig,
    seed: u64,
) -> Result<Tuned> {
    if config.rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be at least 1".into()));
    }
    let mut rng = ChainRng::seed_from_u64(seed);
    let has_path = kernel.path_length().is_some();
    let mut eps_history = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let eps = tune_step_size(kernel, state, config.adapt_iters, config.delta, &mut rng)?;
        eps_history.push(eps);
        if has_path && !config.tau_grid.is_empty() {
            let pilot_seed = chain_seed(seed, 1000 + round as u64);
            esjd_pathlength_search(kernel, state, &config.tau_grid, config.pilot_iters, pilot_seed)?;
        }
    }
    Ok(Tuned { eps: kernel.step_size(), tau: kernel.path_length().filter(|_| has_path), eps_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_error_keeps_the_initial_step() {
        let mut da = DualAveraging::new(0.3, 0.8).unwrap();
        for _ in 0..1000 {
            da.update(0.8);
        }
        assert!((da.step_size().ln() - 0.3f64.ln()).abs() < 1e-6);
        assert!((da.final_step_size().ln() - 0.3f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn persistent_rejection_shrinks_the_step() {
        let mut da = DualAveraging::new(1.0, 0.8).unwrap();
        let mut prev = da.step_size();
        for _ in 0..200 {
            da.update(0.0);
            assert!(da.step_size() < prev);
            prev = da.step_size();
        }
    }

    #[test]
    fn bernoulli_feedback_converges() {
        // acceptance probability exp(-eps^2) as a synthetic stationary response
        let mut rng = ChainRng::seed_from_u64(3);
        let mut da = DualAveraging::new(2.0, 0.8).unwrap();
        for _ in 0..5000 {
            let p = (-da.step_size().powi(2)).exp();
            let hit = rng.random::<f64>() < p;
            da.update(if hit { 1.0 } else { 0.0 });
        }
        let p = (-da.final_step_size().powi(2)).exp();
        assert!((p - 0.8).abs() < 0.05, "{p}");
    }

    #[test]
    fn averaged_step_settles() {
        let mut da = DualAveraging::new(2.0, 0.8).unwrap();
        let mut bars = Vec::new();
        for _ in 0..2000 {
            da.update((-da.step_size().powi(2)).exp());
            bars.push(da.log_eps_bar);
        }
        let tail = &bars[bars.len() - 100..];
        let spread = tail.iter().cloned().fold(f64::MIN, f64::max) - tail.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-3, "{spread}");
    }

    #[test]
    fn invalid_delta_is_rejected() {
        assert!(DualAveraging::new(0.1, 1.0).is_err());
        assert!(DualAveraging::new(0.1, 0.0).is_err());
        assert!(DualAveraging::new(0.0, 0.5).is_err());
    }

    #[test]
    fn esjd_is_normalized_by_gradients() {
        let samples = vec![vec![1.0], vec![3.0], vec![3.0]];
        let a = esjd(&samples, &[0.0], 30);
        let b = esjd(&samples, &[0.0], 60);
        assert!(a >= 0.0);
        assert_eq!(b, a / 2.0);
        assert_eq!(esjd(&[], &[0.0], 10), 0.0);
    }

    #[test]
    fn ties_go_to_the_smaller_path_length() {
        assert_eq!(best_of(&[(0.5, 1.0), (1.0, 1.0), (2.0, 1.0)]), 0.5);
        assert_eq!(best_of(&[(0.5, 0.0), (1.0, 2.0), (2.0, 2.0)]), 1.0);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_spaced_grid(0.25, 8.0, 8);
        assert_eq!(g.len(), 8);
        assert!((g[0] - 0.25).abs() < 1e-12 && (g[7] - 8.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| (w[1] / w[0] - 2f64.powf(5.0 / 7.0)).abs() < 1e-12));
    }
}
