//! Leapfrog for constant-metric Hamiltonians and the explicit adaptive
//! integrator for time-rescaled tempered dynamics.
//!
//! The adaptive scheme works in `(theta, v)` with `v = eta G^{-1} p` and
//! composes a linearly implicit velocity half-kick, a position drift and a
//! second half-kick. Each half-kick is a single identity-plus-low-rank solve.
//! The scheme is reversible but not volume preserving; its log-Jacobian is
//! accumulated per step.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot};
use crate::metrics::{Geometry, TemperedMetric};
use crate::targets::{LinearlyTransformed, SharedTarget, Target};

/// Position and momentum with the cached target evaluation at the position.
#[derive(Debug, Clone, PartialEq)]
pub struct LeapfrogState {
    pub theta: Vec<f64>,
    pub momentum: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

impl LeapfrogState {
    pub fn new(target: &dyn Target, theta: Vec<f64>, momentum: Vec<f64>) -> Result<Self> {
        check_dim(target.dim(), momentum.len())?;
        let (log_density, grad) = target.log_density_and_grad(&theta)?;
        Ok(Self { theta, momentum, log_density, grad })
    }

    /// `H = -log pi + |p|^2 / 2`.
    pub fn hamiltonian(&self) -> f64 {
        -self.log_density + 0.5 * dot(&self.momentum, &self.momentum)
    }

    pub fn flipped(&self) -> Self {
        Self { momentum: self.momentum.iter().map(|x| -x).collect(), ..self.clone() }
    }
}

/// One Stormer-Verlet step for `H = -log pi(theta) + |p|^2 / 2`.
pub fn leapfrog_step(target: &dyn Target, state: &LeapfrogState, eps: f64) -> Result<LeapfrogState> {
    let h = 0.5 * eps;
    let mut p = state.momentum.clone();
    axpy(h, &state.grad, &mut p);
    let mut theta = state.theta.clone();
    axpy(eps, &p, &mut theta);
    let (log_density, grad) = target.log_density_and_grad(&theta)?;
    if !log_density.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::step("non-finite density or gradient"));
    }
    axpy(h, &grad, &mut p);
    Ok(LeapfrogState { theta, momentum: p, log_density, grad })
}

/// Position geometry and velocity `v = eta G^{-1} p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub geometry: Geometry,
    pub velocity: Vec<f64>,
}

impl PhasePoint {
    pub fn new(metric: &TemperedMetric, theta: &[f64], velocity: Vec<f64>) -> Result<Self> {
        check_dim(metric.dim(), velocity.len())?;
        Ok(Self { geometry: metric.geometry(theta)?, velocity })
    }

    /// Builds the point from a momentum, converting to velocity.
    pub fn from_momentum(metric: &TemperedMetric, theta: &[f64], momentum: &[f64]) -> Result<Self> {
        check_dim(metric.dim(), momentum.len())?;
        let geometry = metric.geometry(theta)?;
        let velocity = metric.velocity(&geometry, momentum);
        Ok(Self { geometry, velocity })
    }

    pub fn theta(&self) -> &[f64] {
        &self.geometry.theta
    }

    pub fn momentum(&self, metric: &TemperedMetric) -> Vec<f64> {
        metric.momentum(&self.geometry, &self.velocity)
    }

    pub fn hamiltonian(&self, metric: &TemperedMetric) -> f64 {
        metric.hamiltonian(&self.geometry, &self.velocity)
    }

    pub fn flipped(&self) -> Self {
        Self { geometry: self.geometry.clone(), velocity: self.velocity.iter().map(|x| -x).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorStepResult {
    pub point: PhasePoint,
    /// `log |det d(theta_1, v_1) / d(theta_0, v_0)|`.
    pub log_jacobian: f64,
    pub grad_evals: usize,
}

fn kick(metric: &TemperedMetric, g: &Geometry, v: &[f64], eps: f64) -> Result<(Vec<f64>, f64)> {
    let h = 0.5 * eps;
    let drift = metric.drift(g);
    let rhs: Vec<f64> = v.iter().zip(&drift).map(|(vi, di)| vi - h * di).collect();
    let v_star = metric.solve_kahan_system(g, v, eps, &rhs)?;
    if v_star.iter().any(|x| !x.is_finite()) {
        return Err(Error::step("non-finite velocity"));
    }
    let log_jac = metric.kahan_system_log_det(g, v, &v_star, eps)?;
    Ok((v_star, log_jac))
}

/// One step of the explicit adaptive integrator. At `T = 1` this is leapfrog.
pub fn adaptive_step(metric: &TemperedMetric, point: &PhasePoint, eps: f64) -> Result<IntegratorStepResult> {
    let (v_half, lj0) = kick(metric, &point.geometry, &point.velocity, eps)?;
    let mut theta = point.geometry.theta.clone();
    axpy(eps, &v_half, &mut theta);
    let g1 = metric.geometry(&theta).map_err(|e| e.at_step(0))?;
    let (v1, lj1) = kick(metric, &g1, &v_half, eps)?;
    Ok(IntegratorStepResult {
        point: PhasePoint { geometry: g1, velocity: v1 },
        log_jacobian: lj0 + lj1,
        grad_evals: 1,
    })
}

/// Physical time covered by one step, by the trapezoid rule on `eta`.
pub fn physical_time_increment(metric: &TemperedMetric, from: &Geometry, to: &Geometry, eps: f64) -> f64 {
    0.5 * eps * (metric.eta(from) + metric.eta(to))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    /// All visited points including the start, when retained.
    pub trajectory: Vec<PhasePoint>,
    pub end: PhasePoint,
    pub log_jacobian: f64,
    pub grad_evals: usize,
}

/// Iterates [`adaptive_step`] `n_steps` times.
pub fn integrate_path(
    metric: &TemperedMetric,
    start: &PhasePoint,
    eps: f64,
    n_steps: usize,
    keep_trajectory: bool,
) -> Result<Path> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    let mut trajectory = Vec::new();
    if keep_trajectory {
        trajectory.reserve(n_steps + 1);
        trajectory.push(start.clone());
    }
    let mut current = start.clone();
    let mut log_jacobian = 0.0;
    for i in 0..n_steps {
        let step = adaptive_step(metric, &current, eps).map_err(|e| e.at_step(i))?;
        log_jacobian += step.log_jacobian;
        current = step.point;
        if keep_trajectory {
            trajectory.push(current.clone());
        }
    }
    Ok(Path { trajectory, end: current, log_jacobian, grad_evals: n_steps })
}

/// A trajectory sample tagged with its physical time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedPoint {
    pub time: f64,
    pub point: PhasePoint,
}

/// Integrates until the accumulated physical time exceeds `duration`, or `n_max` steps.
/// Returns all points including the start.
pub fn integrate_for_time(
    metric: &TemperedMetric,
    start: &PhasePoint,
    eps: f64,
    duration: f64,
    n_max: usize,
) -> Result<Vec<TimedPoint>> {
    let mut out = vec![TimedPoint { time: 0.0, point: start.clone() }];
    let mut time = 0.0;
    for i in 0..n_max {
        if time > duration {
            break;
        }
        let prev = &out.last().expect("nonempty").point;
        let step = adaptive_step(metric, prev, eps).map_err(|e| e.at_step(i))?;
        time += physical_time_increment(metric, &prev.geometry, &step.point.geometry, eps);
        out.push(TimedPoint { time, point: step.point });
    }
    Ok(out)
}

/// Start point at `theta` whose momentum points along `G^{1/2} direction` with
/// kinetic energy `kinetic`.
pub fn fixed_energy_start(
    metric: &TemperedMetric,
    theta: &[f64],
    direction: &[f64],
    kinetic: f64,
) -> Result<PhasePoint> {
    check_dim(metric.dim(), direction.len())?;
    let len = crate::linalg::norm(direction);
    if !(len > 0.0 && len.is_finite()) || !(kinetic >= 0.0) {
        return Err(Error::InvalidArgument("direction must be nonzero and kinetic energy nonnegative".into()));
    }
    let scale = (2.0 * kinetic).sqrt() / len;
    let z: Vec<f64> = direction.iter().map(|x| x * scale).collect();
    let g = metric.geometry(theta)?;
    let p = metric.momentum_from_normal(&g, &z);
    let v = metric.velocity(&g, &p);
    Ok(PhasePoint { geometry: g, velocity: v })
}

/// Positions at the requested physical times, linearly interpolated between
/// integrator points. Times past the end of the path are dropped.
pub fn positions_at_times(path: &[TimedPoint], times: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(times.len());
    let mut j = 0;
    for &t in times {
        while j + 1 < path.len() && path[j + 1].time < t {
            j += 1;
        }
        if j + 1 >= path.len() {
            if let Some(last) = path.last().filter(|p| p.time == t) {
                out.push(last.point.theta().to_vec());
            }
            continue;
        }
        let (a, b) = (&path[j], &path[j + 1]);
        let w = if b.time > a.time { ((t - a.time) / (b.time - a.time)).clamp(0.0, 1.0) } else { 0.0 };
        out.push(a.point.theta().iter().zip(b.point.theta()).map(|(x, y)| x + w * (y - x)).collect());
    }
    out
}

fn symmetric_power(m: &DMatrix<f64>, power: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.powf(power)));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Compares RMHMC with constant metric `G = Sigma^{-1}` in `theta` against
/// leapfrog HMC in `x = Sigma^{-1/2} theta`, started from mapped initial
/// conditions. Returns the largest deviation of `(theta, p)` over the path.
pub fn reparametrization_check(
    sigma: &DMatrix<f64>,
    target: SharedTarget,
    theta0: &[f64],
    p0: &[f64],
    eps: f64,
    n_steps: usize,
) -> Result<f64> {
    let d = target.dim();
    check_dim(d, sigma.nrows())?;
    check_dim(d, theta0.len())?;
    check_dim(d, p0.len())?;
    if sigma.clone().cholesky().is_none() {
        return Err(Error::InvalidArgument("sigma must be symmetric positive definite".into()));
    }
    let sqrt = symmetric_power(sigma, 0.5);
    let inv_sqrt = symmetric_power(sigma, -0.5);
    let precision = sigma.clone().try_inverse().expect("positive definite");
    let mapped = LinearlyTransformed::new(target.clone(), sqrt.clone())?;

    let metric = TemperedMetric::constant(target, precision)?;
    let mut rm = PhasePoint::from_momentum(&metric, theta0, p0)?;

    let x0 = &inv_sqrt * DVector::from_column_slice(theta0);
    let px0 = &sqrt * DVector::from_column_slice(p0);
    let mut hmc = LeapfrogState::new(&mapped, x0.as_slice().to_vec(), px0.as_slice().to_vec())?;

    let mut worst = 0.0f64;
    for i in 0..n_steps {
        rm = adaptive_step(&metric, &rm, eps).map_err(|e| e.at_step(i))?.point;
        hmc = leapfrog_step(&mapped, &hmc, eps).map_err(|e| e.at_step(i))?;
        let theta = &sqrt * DVector::from_column_slice(&hmc.theta);
        let p = &inv_sqrt * DVector::from_column_slice(&hmc.momentum);
        let rm_p = rm.momentum(&metric);
        for j in 0..d {
            worst = worst.max((theta[j] - rm.theta()[j]).abs()).max((p[j] - rm_p[j]).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::targets::{GaussianMixture, StandardGaussian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    struct Flat(usize);

    impl Target for Flat {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density(&self, theta: &[f64]) -> Result<f64> {
            check_dim(self.0, theta.len())?;
            Ok(0.0)
        }
        fn log_density_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((self.log_density(theta)?, vec![0.0; self.0]))
        }
    }

    #[test]
    fn free_particle_moves_in_a_straight_line() {
        let s = LeapfrogState::new(&Flat(2), vec![1.0, 2.0], vec![0.5, -1.0]).unwrap();
        let n = leapfrog_step(&Flat(2), &s, 0.1).unwrap();
        assert_eq!(n.theta, vec![1.05, 1.9]);
        assert_eq!(n.momentum, s.momentum);
    }

    #[test]
    fn leapfrog_energy_error_is_second_order() {
        let t = StandardGaussian { dim: 1 };
        let s = LeapfrogState::new(&t, vec![1.0], vec![0.0]).unwrap();
        let n = leapfrog_step(&t, &s, 0.1).unwrap();
        assert!((n.hamiltonian() - s.hamiltonian()).abs() < 0.01);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let t = GaussianMixture::bimodal_horizontal();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let theta = vec![rng.random_range(-6.0..6.0), rng.random_range(-3.0..3.0)];
            let p = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let s = LeapfrogState::new(&t, theta, p).unwrap();
            let back = leapfrog_step(&t, &leapfrog_step(&t, &s, 0.2).unwrap().flipped(), 0.2).unwrap();
            assert!(max_abs_diff(&back.theta, &s.theta) < 1e-12);
            assert!(max_abs_diff(&back.flipped().momentum, &s.momentum) < 1e-12);
        }
    }

    #[test]
    fn untempered_adaptive_step_is_leapfrog() {
        let t: SharedTarget = Arc::new(GaussianMixture::bimodal_horizontal());
        let metric = TemperedMetric::isometric(t.clone(), 1.0).unwrap();
        let mut lf = LeapfrogState::new(t.as_ref(), vec![-3.0, 0.5], vec![1.3, -0.4]).unwrap();
        let mut pt = PhasePoint::from_momentum(&metric, &[-3.0, 0.5], &[1.3, -0.4]).unwrap();
        for _ in 0..50 {
            lf = leapfrog_step(t.as_ref(), &lf, 0.1).unwrap();
            let step = adaptive_step(&metric, &pt, 0.1).unwrap();
            assert_eq!(step.log_jacobian, 0.0);
            pt = step.point;
            assert!(max_abs_diff(&lf.theta, pt.theta()) <= 1e-14);
            assert!(max_abs_diff(&lf.momentum, &pt.velocity) <= 1e-14);
        }
    }

    #[test]
    fn zero_steps_is_rejected_and_one_step_matches() {
        let t: SharedTarget = Arc::new(GaussianMixture::bimodal_horizontal());
        let m = TemperedMetric::isometric(t, 15.0).unwrap();
        let p = PhasePoint::new(&m, &[-1.0, 0.2], vec![0.3, 0.1]).unwrap();
        assert!(integrate_path(&m, &p, 0.1, 0, false).is_err());
        let one = integrate_path(&m, &p, 0.1, 1, false).unwrap();
        let step = adaptive_step(&m, &p, 0.1).unwrap();
        assert_eq!(one.end, step.point);
        assert_eq!(one.log_jacobian, step.log_jacobian);
        assert_eq!(one.grad_evals, 1);
    }

    #[test]
    fn path_is_reversible_with_opposite_jacobian() {
        let t: SharedTarget = Arc::new(GaussianMixture::bimodal_horizontal());
        let ms = [
            TemperedMetric::isometric(t.clone(), 15.0).unwrap(),
            TemperedMetric::directional(t.clone(), 15.0, 1.0, vec![1.0, 0.0]).unwrap(),
            TemperedMetric::directional(t, 10.0, 0.75, vec![1.0, 0.0]).unwrap(),
        ];
        for m in &ms {
            let start = PhasePoint::new(m, &[-4.2, 0.3], vec![1.0, 0.4]).unwrap();
            let fwd = integrate_path(m, &start, 0.05, 100, false).unwrap();
            let back = integrate_path(m, &fwd.end.flipped(), 0.05, 100, false).unwrap();
            assert!(max_abs_diff(back.end.theta(), start.theta()) < 1e-8);
            assert!(max_abs_diff(&back.end.flipped().velocity, &start.velocity) < 1e-8);
            assert!((fwd.log_jacobian + back.log_jacobian).abs() < 1e-8);
        }
    }

    #[test]
    fn step_failure_reports_index() {
        let t: SharedTarget = Arc::new(StandardGaussian { dim: 1 });
        let m = TemperedMetric::isometric(t, 2.0).unwrap();
        let start = PhasePoint::new(&m, &[0.0], vec![1e200]).unwrap();
        match integrate_path(&m, &start, 1.0, 5, false) {
            Err(Error::StepFailure { step: Some(_), .. }) => {}
            other => panic!("expected indexed step failure, got {other:?}"),
        }
    }

    #[test]
    fn reparametrization_identity_map_is_exact() {
        let t: SharedTarget = Arc::new(StandardGaussian { dim: 2 });
        let dev = reparametrization_check(&DMatrix::identity(2, 2), t, &[0.5, -1.0], &[0.3, 0.8], 0.01, 200)
            .unwrap();
        assert!(dev < 1e-13, "{dev}");
    }

    #[test]
    fn reparametrization_diagonal_covariance() {
        let t: SharedTarget = Arc::new(StandardGaussian { dim: 2 });
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let dev = reparametrization_check(&sigma, t, &[0.5, -1.0], &[0.3, 0.8], 0.01, 200).unwrap();
        assert!(dev < 1e-8, "{dev}");
    }

    #[test]
    fn trapezoid_time_is_eps_for_constant_eta() {
        let t: SharedTarget = Arc::new(StandardGaussian { dim: 2 });
        let m = TemperedMetric::identity(t);
        let start = PhasePoint::new(&m, &[0.0, 0.0], vec![1.0, 0.0]).unwrap();
        let pts = integrate_for_time(&m, &start, 0.1, 1.0, 100).unwrap();
        assert_eq!(pts.len() - 1, 11);
        assert!(pts.last().unwrap().time > 1.0);
    }

    #[test]
    fn fixed_energy_start_has_requested_kinetic_energy() {
        let t: SharedTarget = Arc::new(GaussianMixture::bimodal_horizontal());
        for m in [
            TemperedMetric::identity(t.clone()),
            TemperedMetric::isometric(t.clone(), 15.0).unwrap(),
            TemperedMetric::directional(t.clone(), 15.0, 1.0, vec![1.0, 0.0]).unwrap(),
        ] {
            let p = fixed_energy_start(&m, &[-4.0, 0.3], &[0.6, -2.0], 0.8).unwrap();
            let k = m.kinetic_energy(&p.geometry, &p.momentum(&m));
            assert!((k - 0.8).abs() < 1e-12, "{k}");
        }
        let m = TemperedMetric::identity(t);
        assert!(fixed_energy_start(&m, &[0.0, 0.0], &[0.0, 0.0], 0.8).is_err());
    }

    #[test]
    fn interpolated_positions() {
        let t: SharedTarget = Arc::new(Flat(1));
        let m = TemperedMetric::identity(t);
        let start = PhasePoint::new(&m, &[0.0], vec![2.0]).unwrap();
        let pts = integrate_for_time(&m, &start, 0.1, 1.0, 100).unwrap();
        let got = positions_at_times(&pts, &[0.0, 0.25, 1.0, 50.0]);
        assert_eq!(got.len(), 3);
        assert!((got[1][0] - 0.5).abs() < 1e-12);
        assert!((got[2][0] - 2.0).abs() < 1e-12);
    }
}
