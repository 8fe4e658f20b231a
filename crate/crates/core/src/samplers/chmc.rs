//! Compressible HMC on the adaptive integrator: fixed-length trajectories, and
//! variable-length trajectories fixed by accumulated physical time.
//!
//! Both work with the `(theta, v)` density `exp(-H) |G| / eta^d` and add the
//! integrator's log-Jacobian, since the adaptive scheme is not volume preserving.
//!
//! Variable-length trajectories index the orbit of the start state by integer
//! step `i` (negative `i` integrates the flipped state), with cumulative
//! physical time `c_i` from the trapezoid rule on `eta`. From index `j` the
//! trajectory ends at `f(j) = min { k > j : c_k - c_j > tau }`. The start set
//! `S` is the largest index interval around 0 on which `f` is constant, and
//! `S* = [f(0), f(sb + 1) - 1]`. Every state of `S` maps into `S*`, every
//! flipped state of `S*` maps back into `S`, and no state outside either set
//! maps into the other. The kernel moves from `S` to `S*` as a block with
//! probability `min(1, W(S*) / W(S))` and picks a state of `S*` by its weight.

use rand::Rng;

use super::{
    metropolis, steps_for, ChainRng, ChainState, DirectionPolicy, Kernel, Transition,
};
use crate::error::{Error, Result};
use crate::integrators::{adaptive_step, integrate_path, physical_time_increment, PhasePoint};
use crate::metrics::TemperedMetric;
use crate::targets::{log_sum_exp, SharedTarget};

/// Default cap on adaptive steps per trajectory.
pub const DEFAULT_MAX_STEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
enum PathSpec {
    Steps(usize),
    Time(f64),
}

/// Samples momentum from `N(0, G)` and returns the start point with its
/// Hamiltonian and log weight.
fn refresh(
    metric: &TemperedMetric,
    state: &ChainState,
    rng: &mut ChainRng,
) -> Result<(PhasePoint, f64, f64)> {
    let g = metric.geometry_from(state.theta.clone(), state.log_density, state.grad.clone())?;
    let p = metric.sample_momentum(&g, rng);
    let v = metric.velocity(&g, &p);
    let h = metric.hamiltonian(&g, &v);
    let lw = metric.log_weight(&g, &v);
    Ok((PhasePoint { geometry: g, velocity: v }, h, lw))
}

/// Accuracy statistic of a trajectory: zero error gives one. The exact flow
/// changes the log weight plus log-Jacobian by exactly `log eta(end) - log eta(start)`.
fn accuracy_stat(metric: &TemperedMetric, start: &PhasePoint, end: &PhasePoint, log_ratio: f64) -> f64 {
    let expected = metric.log_eta(&end.geometry) - metric.log_eta(&start.geometry);
    let err = (log_ratio - expected).abs();
    if err.is_finite() {
        (-err).exp()
    } else {
        0.0
    }
}

fn accept_into(state: &mut ChainState, point: PhasePoint) {
    let g = point.geometry;
    *state = ChainState { theta: g.theta, log_density: g.log_density, grad: g.grad };
}

/// Fixed-length compressible HMC with the adaptive integrator.
#[derive(Clone)]
pub struct Chmc {
    metric: TemperedMetric,
    eps: f64,
    path: PathSpec,
    policy: DirectionPolicy,
}

impl Chmc {
    pub fn new(metric: TemperedMetric, eps: f64, n_steps: usize) -> Self {
        Self { metric, eps, path: PathSpec::Steps(n_steps.max(1)), policy: DirectionPolicy::Fixed }
    }

    /// Path given as rescaled integration time; the step count is `round(tau / eps)`.
    pub fn with_path_length(metric: TemperedMetric, eps: f64, tau: f64) -> Self {
        Self { metric, eps, path: PathSpec::Time(tau), policy: DirectionPolicy::Fixed }
    }

    pub fn with_direction_policy(mut self, policy: DirectionPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn metric(&self) -> &TemperedMetric {
        &self.metric
    }

    pub fn n_steps(&self) -> usize {
        match self.path {
            PathSpec::Steps(n) => n,
            PathSpec::Time(tau) => steps_for(tau, self.eps),
        }
    }
}

impl Kernel for Chmc {
    fn name(&self) -> String {
        "chmc".into()
    }

    fn target(&self) -> &SharedTarget {
        self.metric.target()
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
        let owned = self.policy.metric_for(&self.metric, rng);
        let m = owned.as_ref().unwrap_or(&self.metric);
        let (start, h0, lw0) = match refresh(m, state, rng) {
            Ok(x) => x,
            Err(_) => return Transition::failure(f64::NAN, 0),
        };
        let n = self.n_steps();
        let path = match integrate_path(m, &start, self.eps, n, false) {
            Ok(p) => p,
            Err(Error::StepFailure { step, .. }) => {
                return Transition::failure(h0, step.map_or(n, |s| s + 1))
            }
            Err(_) => return Transition::failure(h0, n),
        };
        let log_ratio = m.log_weight(&path.end.geometry, &path.end.velocity) - lw0 + path.log_jacobian;
        let accept_stat = accuracy_stat(m, &start, &path.end, log_ratio);
        let (accepted, _) = metropolis(log_ratio, rng);
        if accepted {
            accept_into(state, path.end);
        }
        Transition { accepted, accept_stat, energy: h0, grad_evals: n, failed: false, truncated: false, tree_depth: None }
    }
}

/// Number of adaptive steps until the trapezoidal physical time from `start`
/// strictly exceeds `tau`.
pub fn vlt_step_count(
    metric: &TemperedMetric,
    start: &PhasePoint,
    eps: f64,
    tau: f64,
    n_max: usize,
) -> Result<usize> {
    if !(tau > 0.0 && eps > 0.0) {
        return Err(Error::InvalidArgument("tau and eps must be positive".into()));
    }
    let mut time = 0.0;
    let mut cur = start.clone();
    for n in 1..=n_max {
        let next = adaptive_step(metric, &cur, eps).map_err(|e| e.at_step(n - 1))?.point;
        time += physical_time_increment(metric, &cur.geometry, &next.geometry, eps);
        cur = next;
        if time > tau {
            return Ok(n);
        }
    }
    Err(Error::Truncated(n_max))
}

struct Node {
    point: PhasePoint,
    time: f64,
    /// Cumulative log-Jacobian from the start state.
    log_jac: f64,
    /// `log_weight + log_jac`.
    log_w: f64,
}

/// Integer-indexed orbit of a start state, grown lazily in both directions.
struct Orbit<'a> {
    metric: &'a TemperedMetric,
    eps: f64,
    n_max: usize,
    forward: Vec<Node>,
    /// `backward[i]` holds index `-(i + 1)`, stored in forward orientation.
    backward: Vec<Node>,
    /// Last point of the flipped orbit, in flipped orientation, and its log-Jacobian.
    backward_tip: (PhasePoint, f64),
}

impl<'a> Orbit<'a> {
    fn new(metric: &'a TemperedMetric, start: PhasePoint, eps: f64, n_max: usize) -> Self {
        let lw = metric.log_weight(&start.geometry, &start.velocity);
        let tip = (start.flipped(), 0.0);
        Self {
            metric,
            eps,
            n_max,
            forward: vec![Node { point: start, time: 0.0, log_jac: 0.0, log_w: lw }],
            backward: Vec::new(),
            backward_tip: tip,
        }
    }

    fn steps(&self) -> usize {
        self.forward.len() - 1 + self.backward.len()
    }

    fn budget(&self) -> Result<()> {
        if self.steps() >= self.n_max {
            Err(Error::Truncated(self.n_max))
        } else {
            Ok(())
        }
    }

    fn ensure(&mut self, i: i64) -> Result<()> {
        while i >= self.forward.len() as i64 {
            self.budget()?;
            let last = self.forward.last().expect("start present");
            let step = adaptive_step(self.metric, &last.point, self.eps)
                .map_err(|e| e.at_step(self.forward.len() - 1))?;
            let time = last.time + physical_time_increment(self.metric, &last.point.geometry, &step.point.geometry, self.eps);
            let log_jac = last.log_jac + step.log_jacobian;
            let log_w = self.metric.log_weight(&step.point.geometry, &step.point.velocity) + log_jac;
            self.forward.push(Node { point: step.point, time, log_jac, log_w });
        }
        while -i > self.backward.len() as i64 {
            self.budget()?;
            let (tip, lj) = &self.backward_tip;
            let step = adaptive_step(self.metric, tip, self.eps)
                .map_err(|e| e.at_step(self.backward.len()))?;
            let prev_time = self.backward.last().map_or(0.0, |n| n.time);
            let time = prev_time - physical_time_increment(self.metric, &tip.geometry, &step.point.geometry, self.eps);
            let log_jac = lj + step.log_jacobian;
            let point = step.point.flipped();
            let log_w = self.metric.log_weight(&point.geometry, &point.velocity) + log_jac;
            self.backward_tip = (step.point, log_jac);
            self.backward.push(Node { point, time, log_jac, log_w });
        }
        Ok(())
    }

    fn node(&mut self, i: i64) -> Result<&Node> {
        self.ensure(i)?;
        Ok(if i >= 0 { &self.forward[i as usize] } else { &self.backward[(-i - 1) as usize] })
    }

    fn time(&mut self, i: i64) -> Result<f64> {
        Ok(self.node(i)?.time)
    }

    /// `f(j)`, searching from `hint`, a known lower bound.
    fn end_index(&mut self, j: i64, hint: i64, tau: f64) -> Result<i64> {
        let cj = self.time(j)?;
        let mut k = hint.max(j + 1);
        loop {
            if self.time(k)? - cj > tau {
                return Ok(k);
            }
            k += 1;
        }
    }
}

/// Index bookkeeping of one variable-length transition.
#[derive(Debug, Clone, PartialEq)]
pub struct VltSets {
    /// `N = f(0)`, the step count of the trajectory from the start state.
    pub forward_step_count: usize,
    /// Steps integrated from the flipped start state.
    pub backward_step_count: usize,
    /// `S = [s.0, s.1]`.
    pub s: (i64, i64),
    /// `S* = [s_star.0, s_star.1]`.
    pub s_star: (i64, i64),
    pub total_steps: usize,
    pub log_eta_start: f64,
    pub log_eta_end: f64,
}

/// Counters of the explicit set verification.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerifyStats {
    pub transitions_checked: usize,
    pub violations: usize,
}

/// Variable-length-trajectory compressible HMC.
#[derive(Clone)]
pub struct VltChmc {
    metric: TemperedMetric,
    eps: f64,
    tau: f64,
    n_max: usize,
    policy: DirectionPolicy,
    verify_every: usize,
    iteration: usize,
    verify: VerifyStats,
    last_sets: Option<VltSets>,
}

impl VltChmc {
    /// Set verification runs on every transition in debug builds and is off in release builds.
    pub fn new(metric: TemperedMetric, eps: f64, tau: f64) -> Self {
        Self {
            metric,
            eps,
            tau,
            n_max: DEFAULT_MAX_STEPS,
            policy: DirectionPolicy::Fixed,
            verify_every: if cfg!(debug_assertions) { 1 } else { 0 },
            iteration: 0,
            verify: VerifyStats::default(),
            last_sets: None,
        }
    }

    pub fn with_direction_policy(mut self, policy: DirectionPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_max_steps(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    /// Verify the set relations on every `n`-th transition; zero disables.
    pub fn with_verification(mut self, every: usize) -> Self {
        self.verify_every = every;
        self
    }

    pub fn metric(&self) -> &TemperedMetric {
        &self.metric
    }

    pub fn verify_stats(&self) -> VerifyStats {
        self.verify
    }

    pub fn last_sets(&self) -> Option<&VltSets> {
        self.last_sets.as_ref()
    }

    fn build_sets(&self, orbit: &mut Orbit) -> Result<VltSets> {
        let tau = self.tau;
        let n = orbit.end_index(0, 1, tau)?;
        let mut sb = 0;
        let after = loop {
            let f = orbit.end_index(sb + 1, n, tau)?;
            if f > n {
                break f;
            }
            sb += 1;
        };
        let c_last = orbit.time(n - 1)?;
        let mut sa = 0;
        while c_last - orbit.time(sa - 1)? <= tau {
            sa -= 1;
        }
        let log_eta_start = self.metric_log_eta(orbit, 0)?;
        let log_eta_end = self.metric_log_eta(orbit, n)?;
        Ok(VltSets {
            forward_step_count: n as usize,
            backward_step_count: orbit.backward.len(),
            s: (sa, sb),
            s_star: (n, after - 1),
            total_steps: orbit.steps(),
            log_eta_start,
            log_eta_end,
        })
    }

    fn metric_log_eta(&self, orbit: &mut Orbit, i: i64) -> Result<f64> {
        let m = orbit.metric;
        Ok(m.log_eta(&orbit.node(i)?.point.geometry))
    }

    /// Re-integrates from each state of `S`, `S*` and their boundary
    /// neighbours, and checks where each lands.
    fn verify_sets(&self, m: &TemperedMetric, orbit: &mut Orbit, sets: &VltSets) -> Result<bool> {
        let (sa, sb) = sets.s;
        let (ta, tb) = sets.s_star;
        let in_s = |i: i64| (sa..=sb).contains(&i);
        let in_star = |i: i64| (ta..=tb).contains(&i);
        let mut ok = true;
        for j in (sa - 1)..=(sb + 1) {
            let p = orbit.node(j)?.point.clone();
            let k = j + vlt_step_count(m, &p, self.eps, self.tau, self.n_max)? as i64;
            ok &= in_s(j) == in_star(k);
        }
        for k in (ta - 1)..=(tb + 1) {
            let p = orbit.node(k)?.point.flipped();
            let j = k - vlt_step_count(m, &p, self.eps, self.tau, self.n_max)? as i64;
            ok &= in_star(k) == in_s(j);
        }
        Ok(ok)
    }

    fn try_transition(
        &mut self,
        m: &TemperedMetric,
        state: &mut ChainState,
        start: PhasePoint,
        rng: &mut ChainRng,
    ) -> Result<(bool, f64, usize)> {
        let mut orbit = Orbit::new(m, start, self.eps, self.n_max);
        let sets = self.build_sets(&mut orbit)?;
        let weights = |orbit: &mut Orbit, (a, b): (i64, i64)| -> Result<Vec<f64>> {
            (a..=b).map(|i| orbit.node(i).map(|n| n.log_w)).collect()
        };
        let ws = weights(&mut orbit, sets.s)?;
        let wstar = weights(&mut orbit, sets.s_star)?;
        let log_ratio = log_sum_exp(&wstar) - log_sum_exp(&ws);

        let (n, w0) = (sets.forward_step_count as i64, orbit.node(0)?.log_w);
        let end_w = orbit.node(n)?.log_w;
        let expected = sets.log_eta_end - sets.log_eta_start;
        let err = (end_w - w0 - expected).abs();
        let accept_stat = if err.is_finite() { (-err).exp() } else { 0.0 };

        let pick = if wstar.len() == 1 {
            0
        } else {
            let total = log_sum_exp(&wstar);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = wstar.len() - 1;
            for (i, w) in wstar.iter().enumerate() {
                acc += (w - total).exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        };
        let (accepted, _) = metropolis(log_ratio, rng);

        if self.verify_every > 0 && self.iteration % self.verify_every == 0 {
            self.verify.transitions_checked += 1;
            if !self.verify_sets(m, &mut orbit, &sets)? {
                self.verify.violations += 1;
            }
        }
        let total_steps = sets.total_steps;
        if accepted {
            let chosen = orbit.node(sets.s_star.0 + pick as i64)?.point.clone();
            accept_into(state, chosen);
        }
        self.last_sets = Some(sets);
        Ok((accepted, accept_stat, total_steps))
    }
}

impl Kernel for VltChmc {
    fn name(&self) -> String {
        "vlt-chmc".into()
    }

    fn target(&self) -> &SharedTarget {
        self.metric.target()
    }

    fn step_size(&self) -> f64 {
        self.eps
    }

    fn set_step_size(&mut self, eps: f64) {
        self.eps = eps;
    }

    fn path_length(&self) -> Option<f64> {
        Some(self.tau)
    }

    fn set_path_length(&mut self, tau: f64) {
        self.tau = tau;
    }

    fn transition(&mut self, state: &mut ChainState, rng: &mut ChainRng) -> Transition {
        let owned = self.policy.metric_for(&self.metric, rng);
        let m = owned.unwrap_or_else(|| self.metric.clone());
        self.last_sets = None;
        let out = match refresh(&m, state, rng) {
            Ok((start, h0, _)) => match self.try_transition(&m, state, start, rng) {
                Ok((accepted, accept_stat, grad_evals)) => Transition {
                    accepted,
                    accept_stat,
                    energy: h0,
                    grad_evals,
                    failed: false,
                    truncated: false,
                    tree_depth: None,
                },
                Err(Error::Truncated(n)) => Transition::truncation(h0, n),
                Err(Error::StepFailure { step, .. }) => Transition::failure(h0, step.unwrap_or(0) + 1),
                Err(_) => Transition::failure(h0, 0),
            },
            Err(_) => Transition::failure(f64::NAN, 0),
        };
        self.iteration += 1;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::{sample_chain, Hmc};
    use crate::targets::{GaussianMixture, StandardGaussian};
    use rand::SeedableRng;
    use std::sync::Arc;

    #[test]
    fn untempered_chmc_matches_hmc_seed_for_seed() {
        let t: SharedTarget = Arc::new(GaussianMixture::bimodal_horizontal());
        let m = TemperedMetric::isometric(t.clone(), 1.0).unwrap();
        let mut chmc = Chmc::new(m, 0.2, 15);
        let mut hmc = Hmc::new(t, 0.2, 15);
        let a = sample_chain(&mut chmc, vec![-4.0, 0.0], 0, 500, 17).unwrap();
        let b = sample_chain(&mut hmc, vec![-4.0, 0.0], 0, 500, 17).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.accept_flags, b.accept_flags);
    }

    #[test]
    fn untempered_vlt_matches_hmc_seed_for_seed() {
        let t: SharedTarget = Arc::new(GaussianMixture::bimodal_horizontal());
        let m = TemperedMetric::isometric(t.clone(), 1.0).unwrap();
        let mut vlt = VltChmc::new(m, 0.2, 2.9);
        let mut hmc = Hmc::new(t, 0.2, 15);
        let a = sample_chain(&mut vlt, vec![-4.0, 0.0], 0, 300, 18).unwrap();
        let b = sample_chain(&mut hmc, vec![-4.0, 0.0], 0, 300, 18).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(vlt.verify_stats().violations, 0);
    }

    #[test]
    fn constant_eta_step_count() {
        let t: SharedTarget = Arc::new(StandardGaussian { dim: 2 });
        let m = TemperedMetric::identity(t);
        let p = PhasePoint::new(&m, &[0.3, 0.1], vec![0.5, -0.2]).unwrap();
        for (tau, eps) in [(1.05, 0.1), (0.73, 0.05), (2.0, 0.3)] {
            let n = vlt_step_count(&m, &p, eps, tau, 1000).unwrap();
            assert_eq!(n, (tau / eps).floor() as usize + 1);
        }
        assert!(matches!(vlt_step_count(&m, &p, 0.1, 5.0, 10), Err(Error::Truncated(10))));
    }

    #[test]
    fn sets_satisfy_the_mapping_relations() {
        let t: SharedTarget = Arc::new(GaussianMixture::bimodal_horizontal());
        let m = TemperedMetric::isometric(t, 15.0).unwrap();
        let mut k = VltChmc::new(m, 0.05, 1.0).with_verification(1);
        let mut state = ChainState::new(k.target().as_ref(), vec![-3.0, 0.5]).unwrap();
        let mut rng = ChainRng::seed_from_u64(4);
        let mut saw_large_star = false;
        for _ in 0..200 {
            k.transition(&mut state, &mut rng);
            if let Some(s) = k.last_sets() {
                assert!(s.s.0 <= 0 && 0 <= s.s.1);
                assert!(s.s_star.0 <= s.s_star.1);
                saw_large_star |= s.s_star.1 > s.s_star.0;
            }
        }
        assert!(k.verify_stats().transitions_checked > 150);
        assert_eq!(k.verify_stats().violations, 0);
        assert!(saw_large_star);
    }
}
