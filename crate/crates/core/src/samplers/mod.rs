//! MCMC transition kernels and chain bookkeeping.
//!
//! A [`Kernel`] advances a [`ChainState`] by one iteration. Numerical failures
//! inside a kernel are rejections, never errors, so every kernel always
//! returns a [`Transition`].

mod chmc;
mod hmc;
mod mmala;
mod nuts;

pub use chmc::{vlt_step_count, Chmc, VerifyStats, VltChmc, VltSets, DEFAULT_MAX_STEPS};
pub use hmc::Hmc;
pub use mmala::Mmala;
pub use nuts::Nuts;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::metrics::TemperedMetric;
use crate::targets::{SharedTarget, Target};

pub type ChainRng = ChaCha8Rng;

/// Current position with the cached target evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

impl ChainState {
    pub fn new(target: &dyn Target, theta: Vec<f64>) -> Result<Self> {
        let (log_density, grad) = target.log_density_and_grad(&theta)?;
        if !log_density.is_finite() {
            return Err(crate::Error::InvalidArgument(format!(
                "initial state has log density {log_density}"
            )));
        }
        Ok(Self { theta, log_density, grad })
    }
}

/// Outcome of one kernel iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub accepted: bool,
    /// Statistic driven toward its target by step-size adaptation.
    pub accept_stat: f64,
    /// Hamiltonian at the start of the iteration after momentum refresh
    /// (`-log pi` for Langevin kernels).
    pub energy: f64,
    pub grad_evals: usize,
    /// Step failure, divergence or truncation.
    pub failed: bool,
    /// Rejected for exceeding the step cap; carries no accuracy information.
    pub truncated: bool,
    pub tree_depth: Option<usize>,
}

impl Transition {
    pub(crate) fn failure(energy: f64, grad_evals: usize) -> Self {
        Self { accepted: false, accept_stat: 0.0, energy, grad_evals, failed: true, truncated: false, tree_depth: None }
    }

    pub(crate) fn truncation(energy: f64, grad_evals: usize) -> Self {
        Self { truncated: true, ..Self::failure(energy, grad_evals) }
    }
}

pub trait Kernel: Send {
    fn name(&self) -> String;

    fn target(&self) -> &SharedTarget;

    fn step_size(&self) -> f64;

    fn set_step_size(&mut self, eps: f64);

    /// Integration time per iteration, for kernels that have one.
    fn path_length(&self) -> Option<f64> {
        None
    }

    fn set_path_length(&mut self, _tau: f64) {}

    fn transition(&mut self, state: &mut ChainState, rng: &mut ChainRng) -> Transition;
}

/// Samples and per-iteration diagnostics of one chain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainRecord {
    pub samples: Vec<Vec<f64>>,
    pub accept_flags: Vec<bool>,
    pub accept_stats: Vec<f64>,
    pub energies: Vec<f64>,
    pub grad_eval_total: u64,
    pub failures: usize,
    pub tree_depths: Vec<usize>,
    pub seed: u64,
    pub kernel_name: String,
}

impl ChainRecord {
    pub fn new(kernel_name: impl Into<String>, seed: u64) -> Self {
        Self { kernel_name: kernel_name.into(), seed, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, theta: &[f64], t: &Transition) {
        self.samples.push(theta.to_vec());
        self.accept_flags.push(t.accepted);
        self.accept_stats.push(t.accept_stat);
        self.energies.push(t.energy);
        self.grad_eval_total += t.grad_evals as u64;
        if t.failed {
            self.failures += 1;
        }
        if let Some(depth) = t.tree_depth {
            self.tree_depths.push(depth);
        }
    }

    pub fn accept_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.accept_flags.iter().filter(|a| **a).count() as f64 / self.len() as f64
    }

    pub fn failure_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.failures as f64 / self.len() as f64
    }

    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[j]).collect()
    }
}

/// Runs `n_iter` iterations from `state`, recording every iteration.
pub fn run_chain<K: Kernel + ?Sized>(
    kernel: &mut K,
    state: &mut ChainState,
    n_iter: usize,
    rng: &mut ChainRng,
    seed: u64,
) -> ChainRecord {
    let mut record = ChainRecord::new(kernel.name(), seed);
    record.samples.reserve(n_iter);
    for _ in 0..n_iter {
        let t = kernel.transition(state, rng);
        record.push(&state.theta, &t);
    }
    record
}

/// Runs `burn_in` unrecorded iterations, then records `n_samples`.
pub fn sample_chain<K: Kernel + ?Sized>(
    kernel: &mut K,
    init: Vec<f64>,
    burn_in: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ChainRecord> {
    let mut rng = ChainRng::seed_from_u64(seed);
    let mut state = ChainState::new(kernel.target().as_ref(), init)?;
    for _ in 0..burn_in {
        kernel.transition(&mut state, &mut rng);
    }
    Ok(run_chain(kernel, &mut state, n_samples, &mut rng, seed))
}

/// Seed of chain `index` derived from a master seed by the splitmix64 finalizer
/// applied to `master + (index + 1) * 0x9e3779b97f4a7c15`.
pub fn chain_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// How a directional metric chooses its tempering direction.
#[derive(Debug, Clone, PartialEq)]
pub enum DirectionPolicy {
    /// Keep the metric's direction.
    Fixed,
    /// Draw a fresh uniform unit vector before each momentum refresh.
    RandomPerIteration,
}

impl DirectionPolicy {
    pub(crate) fn metric_for<R: Rng + ?Sized>(
        &self,
        metric: &TemperedMetric,
        rng: &mut R,
    ) -> Option<TemperedMetric> {
        match self {
            DirectionPolicy::Fixed => None,
            DirectionPolicy::RandomPerIteration => loop {
                let u = standard_normal_vec(rng, metric.dim());
                if let Ok(m) = metric.with_direction(u) {
                    break Some(m);
                }
            },
        }
    }
}

/// Step count covering integration time `tau` at step `eps`, at least one.
pub(crate) fn steps_for(tau: f64, eps: f64) -> usize {
    ((tau / eps).round() as usize).max(1)
}

/// Metropolis decision on a log acceptance ratio. Draws exactly one uniform.
pub(crate) fn metropolis<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> (bool, f64) {
    let u: f64 = rng.random();
    let prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
    (u < prob, prob)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..1000).map(|i| chain_seed(42, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        assert_eq!(chain_seed(42, 7), seeds[7]);
        assert_ne!(chain_seed(43, 0), chain_seed(42, 0));
    }

    #[test]
    fn step_count_is_at_least_one() {
        assert_eq!(steps_for(0.01, 1.0), 1);
        assert_eq!(steps_for(1.0, 0.1), 10);
    }

    #[test]
    fn record_lengths_stay_aligned() {
        let mut r = ChainRecord::new("x", 1);
        let t = Transition {
            accepted: true,
            accept_stat: 1.0,
            energy: 0.5,
            grad_evals: 3,
            failed: false,
            truncated: false,
            tree_depth: None,
        };
        r.push(&[1.0], &t);
        r.push(&[2.0], &Transition::failure(0.0, 2));
        assert_eq!(r.samples.len(), r.accept_flags.len());
        assert_eq!(r.samples.len(), r.energies.len());
        assert_eq!(r.grad_eval_total, 5);
        assert_eq!(r.failures, 1);
        assert_eq!(r.accept_rate(), 0.5);
    }
}
