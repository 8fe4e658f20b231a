use rand::Rng;

use super::{metropolis, standard_normal_vec, steps_for, ChainRng, ChainState, Kernel, Transition};
use crate::integrators::{leapfrog_step, LeapfrogState};
use crate::targets::SharedTarget;

#[derive(Debug, Clone, Copy, PartialEq)]
enum PathSpec {
    Steps(usize),
    Time(f64),
}

/// Hamiltonian Monte Carlo with identity mass and a fixed path.
#[derive(Clone)]
pub struct Hmc {
    target: SharedTarget,
    eps: f64,
    path: PathSpec,
}

impl Hmc {
    pub fn new(target: SharedTarget, eps: f64, n_steps: usize) -> Self {
        Self { target, eps, path: PathSpec::Steps(n_steps.max(1)) }
    }

    /// Path given as integration time; the step count is `round(tau / eps)`.
    pub fn with_path_length(target: SharedTarget, eps: f64, tau: f64) -> Self {
        Self { target, eps, path: PathSpec::Time(tau) }
    }

    pub fn n_steps(&self) -> usize {
        match self.path {
            PathSpec::Steps(n) => n,
            PathSpec::Time(tau) => steps_for(tau, self.eps),
        }
    }

    /// Draws momentum, integrates and returns the proposal with its log acceptance ratio.
    pub(crate) fn propose<R: Rng + ?Sized>(
        &self,
        state: &ChainState,
        rng: &mut R,
    ) -> (f64, Option<(LeapfrogState, f64)>, usize) {
        let p = standard_normal_vec(rng, state.theta.len());
        let start = LeapfrogState {
            theta: state.theta.clone(),
            momentum: p,
            log_density: state.log_density,
            grad: state.grad.clone(),
        };
        let h0 = start.hamiltonian();
        let n = self.n_steps();
        let mut cur = start;
        for i in 0..n {
            match leapfrog_step(self.target.as_ref(), &cur, self.eps) {
                Ok(next) => cur = next,
                Err(_) => return (h0, None, i + 1),
            }
        }
        let log_ratio = h0 - cur.hamiltonian();
        (h0, Some((cur, log_ratio)), n)
    }
}

impl Kernel for Hmc {
    fn name(&self) -> String {
        "hmc".into()
    }

    fn target(&self) -> &SharedTarget {
        &self.target
    }

    fn step_size(&self) -> f64 {
        self.eps
    }

    fn set_step_size(&mut self, eps: f64) {
        self.eps = eps;
    }

    fn path_length(&self) -> Option<f64> {
        Some(match self.path {
            PathSpec::Steps(n) => n as f64 * self.eps,
            PathSpec::Time(tau) => tau,
        })
    }

    fn set_path_length(&mut self, tau: f64) {
        self.path = PathSpec::Time(tau);
    }

    fn transition(&mut self, state: &mut ChainState, rng: &mut ChainRng) -> Transition {
        let (h0, proposal, grad_evals) = self.propose(state, rng);
        let Some((end, log_ratio)) = proposal else {
            return Transition::failure(h0, grad_evals);
        };
        let (accepted, prob) = metropolis(log_ratio, rng);
        if accepted {
            *state = ChainState { theta: end.theta, log_density: end.log_density, grad: end.grad };
        }
        Transition { accepted, accept_stat: prob, energy: h0, grad_evals, failed: false, truncated: false, tree_depth: None }
    }
}
