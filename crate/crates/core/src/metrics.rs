//! Position-dependent metrics for geometric tempering.
//!
//! Every tempered metric satisfies `1/2 log|G(x)| = (1 - 1/T) log pi(x)` with
//! proportionality constant one, so `T = 1` is exactly the identity metric.
//! Metric scalars are held in log space: exponents such as
//! `2 gamma (1 - 1/T) log pi` reach hundreds in low-density regions.
//!
//! The metric functions take a [`Geometry`], the cached evaluation of the
//! target (log density and gradient) at one position. Everything downstream
//! (drift, kinetic energy, the `v^T Gamma` contraction) is O(d) given it.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, split_along, IdentityPlusLowRank};
use crate::targets::SharedTarget;

/// A constant mass matrix `G`, with its inverse and Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantMetric {
    metric: DMatrix<f64>,
    inverse: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl ConstantMetric {
    pub fn new(metric: DMatrix<f64>) -> Result<Self> {
        let chol = metric
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("constant metric must be positive definite".into()))?;
        let inverse = chol.inverse();
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
        Ok(Self { metric, inverse, chol: l, log_det })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.metric
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricKind {
    Identity,
    /// `G = g I`, `g = pi^{(2/d)(1 - 1/T)}`.
    Isometric,
    /// `G = g_par u u^T + g_perp (I - u u^T)`.
    Directional { gamma: f64, direction: Vec<f64> },
    /// Position-independent mass matrix (plain RMHMC with constant `G`).
    Constant(ConstantMetric),
}

#[derive(Clone)]
pub struct TemperedMetric {
    kind: MetricKind,
    temperature: f64,
    target: SharedTarget,
}

impl std::fmt::Debug for TemperedMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TemperedMetric")
            .field("kind", &self.kind)
            .field("temperature", &self.temperature)
            .field("dim", &self.target.dim())
            .finish()
    }
}

/// Target evaluation cached at one position, plus the metric's log-scalars there.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub theta: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
    /// `log g` (isometric) or `log g_par` (directional); zero otherwise.
    log_g_par: f64,
    /// `log g` (isometric) or `log g_perp` (directional); zero otherwise.
    log_g_perp: f64,
}

impl Geometry {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// Scalar fields defining `G` at one position, in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricScalars {
    pub log_g_par: f64,
    pub log_g_perp: f64,
    pub log_density: f64,
}

impl TemperedMetric {
    pub fn identity(target: SharedTarget) -> Self {
        Self { kind: MetricKind::Identity, temperature: 1.0, target }
    }

    pub fn isometric(target: SharedTarget, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(Self { kind: MetricKind::Isometric, temperature, target })
    }

    /// Directional tempering along `direction` (normalized here).
    /// `gamma` must lie in `[1/d, 1]`; `gamma = 1/d` coincides with the isometric metric.
    pub fn directional(
        target: SharedTarget,
        temperature: f64,
        gamma: f64,
        direction: Vec<f64>,
    ) -> Result<Self> {
        check_temperature(temperature)?;
        let d = target.dim();
        check_dim(d, direction.len())?;
        let lo = 1.0 / d as f64;
        if !(gamma >= lo - 1e-15 && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in [1/d, 1], got {gamma}")));
        }
        let direction = unit(direction)?;
        Ok(Self { kind: MetricKind::Directional { gamma, direction }, temperature, target })
    }

    pub fn constant(target: SharedTarget, metric: DMatrix<f64>) -> Result<Self> {
        check_dim(target.dim(), metric.nrows())?;
        Ok(Self { kind: MetricKind::Constant(ConstantMetric::new(metric)?), temperature: 1.0, target })
    }

    /// Same metric with a new tempering direction. Errors for non-directional kinds.
    pub fn with_direction(&self, direction: Vec<f64>) -> Result<Self> {
        match &self.kind {
            MetricKind::Directional { gamma, .. } => {
                Self::directional(self.target.clone(), self.temperature, *gamma, direction)
            }
            _ => Err(Error::InvalidArgument("only directional metrics carry a direction".into())),
        }
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn target(&self) -> &SharedTarget {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn is_tempered(&self) -> bool {
        matches!(self.kind, MetricKind::Isometric | MetricKind::Directional { .. })
    }

    /// Whether the connection term is nonzero (a tempered kind with `T > 1`).
    pub fn has_curvature(&self) -> bool {
        self.is_tempered() && self.temperature > 1.0
    }

    fn kappa(&self) -> f64 {
        1.0 - 1.0 / self.temperature
    }

    /// Coefficients `(c_par, c_perp)` with `log g_par = c_par log pi`, `log g_perp = c_perp log pi`.
    fn exponents(&self) -> (f64, f64) {
        let d = self.dim() as f64;
        match &self.kind {
            MetricKind::Isometric => {
                let c = 2.0 * self.kappa() / d;
                (c, c)
            }
            MetricKind::Directional { gamma, .. } => {
                let k = self.kappa();
                let perp = if self.dim() > 1 { 2.0 * (1.0 - gamma) / (d - 1.0) * k } else { 0.0 };
                (2.0 * gamma * k, perp)
            }
            _ => (0.0, 0.0),
        }
    }

    fn direction(&self) -> Option<&[f64]> {
        match &self.kind {
            MetricKind::Directional { direction, .. } => Some(direction),
            _ => None,
        }
    }

    /// Evaluates the target at `theta` (one gradient evaluation).
    pub fn geometry(&self, theta: &[f64]) -> Result<Geometry> {
        check_dim(self.dim(), theta.len())?;
        let (lp, grad) = self.target.log_density_and_grad(theta)?;
        self.geometry_from(theta.to_vec(), lp, grad)
    }

    /// Builds the geometry from an already evaluated log density and gradient.
    pub fn geometry_from(&self, theta: Vec<f64>, log_density: f64, grad: Vec<f64>) -> Result<Geometry> {
        if !log_density.is_finite() {
            return Err(Error::TemperingSingularity(log_density));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::step("non-finite gradient"));
        }
        let (ca, cb) = self.exponents();
        Ok(Geometry { theta, log_density, grad, log_g_par: ca * log_density, log_g_perp: cb * log_density })
    }

    pub fn metric_scalars(&self, theta: &[f64]) -> Result<MetricScalars> {
        let check = self.target.log_density(theta)?;
        if !check.is_finite() {
            return Err(Error::TemperingSingularity(check));
        }
        let (ca, cb) = self.exponents();
        Ok(MetricScalars { log_g_par: ca * check, log_g_perp: cb * check, log_density: check })
    }

    /// `log eta`: `1/2 log g` (isometric), `1/2 log g_par` (directional), else 0.
    pub fn log_eta(&self, g: &Geometry) -> f64 {
        match self.kind {
            MetricKind::Isometric | MetricKind::Directional { .. } => 0.5 * g.log_g_par,
            _ => 0.0,
        }
    }

    pub fn eta(&self, g: &Geometry) -> f64 {
        self.log_eta(g).exp()
    }

    /// `log |G|`.
    pub fn log_det(&self, g: &Geometry) -> f64 {
        let d = g.dim() as f64;
        match &self.kind {
            MetricKind::Identity => 0.0,
            MetricKind::Isometric => d * g.log_g_par,
            MetricKind::Directional { .. } => g.log_g_par + (d - 1.0) * g.log_g_perp,
            MetricKind::Constant(c) => c.log_det,
        }
    }

    /// Potential energy of the Hamiltonian, up to a constant: `-(1/T) log pi`.
    pub fn potential(&self, g: &Geometry) -> f64 {
        if self.is_tempered() {
            -g.log_density / self.temperature
        } else {
            -g.log_density
        }
    }

    /// Applies `a_par u u^T + a_perp (I - u u^T)` given the two coefficients in log space.
    fn split_apply(&self, log_par: f64, log_perp: f64, sign: f64, x: &[f64]) -> Vec<f64> {
        match self.direction() {
            Some(u) => {
                let a = sign * log_par.exp();
                let b = sign * log_perp.exp();
                let (ux, perp) = split_along(u, x);
                perp.iter().zip(u).map(|(pi, ui)| b * pi + a * ux * ui).collect()
            }
            None => {
                let a = sign * log_par.exp();
                x.iter().map(|xi| a * xi).collect()
            }
        }
    }

    /// `G^s x` for `s` in {1, -1, 1/2, -1/2}; Cholesky factors stand in for the
    /// square roots of a constant metric.
    fn power_apply(&self, g: &Geometry, s: f64, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            MetricKind::Identity => x.to_vec(),
            MetricKind::Constant(c) => {
                let xv = nalgebra::DVector::from_column_slice(x);
                let out = if s == 1.0 {
                    &c.metric * xv
                } else if s == -1.0 {
                    &c.inverse * xv
                } else if s == 0.5 {
                    &c.chol * xv
                } else {
                    c.chol.transpose().solve_upper_triangular(&xv).expect("nonsingular factor")
                };
                out.iter().copied().collect()
            }
            _ => self.split_apply(s * g.log_g_par, s * g.log_g_perp, 1.0, x),
        }
    }

    pub fn apply_metric(&self, g: &Geometry, x: &[f64]) -> Vec<f64> {
        self.power_apply(g, 1.0, x)
    }

    pub fn apply_inverse(&self, g: &Geometry, x: &[f64]) -> Vec<f64> {
        self.power_apply(g, -1.0, x)
    }

    /// Maps a standard normal draw to `N(0, G^{-1})`.
    pub fn apply_inverse_sqrt(&self, g: &Geometry, z: &[f64]) -> Vec<f64> {
        self.power_apply(g, -0.5, z)
    }

    /// Maps a standard normal draw to `N(0, G)`.
    pub fn momentum_from_normal(&self, g: &Geometry, z: &[f64]) -> Vec<f64> {
        self.power_apply(g, 0.5, z)
    }

    pub fn sample_momentum<R: Rng + ?Sized>(&self, g: &Geometry, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..g.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.momentum_from_normal(g, &z)
    }

    /// `1/2 p^T G^{-1} p`.
    pub fn kinetic_energy(&self, g: &Geometry, p: &[f64]) -> f64 {
        0.5 * dot(p, &self.apply_inverse(g, p))
    }

    /// `v = eta G^{-1} p`.
    pub fn velocity(&self, g: &Geometry, p: &[f64]) -> Vec<f64> {
        match &self.kind {
            MetricKind::Identity => p.to_vec(),
            MetricKind::Constant(_) => self.apply_inverse(g, p),
            _ => {
                let le = self.log_eta(g);
                self.split_apply(le - g.log_g_par, le - g.log_g_perp, 1.0, p)
            }
        }
    }

    /// `p = G v / eta`.
    pub fn momentum(&self, g: &Geometry, v: &[f64]) -> Vec<f64> {
        match &self.kind {
            MetricKind::Identity => v.to_vec(),
            MetricKind::Constant(_) => self.apply_metric(g, v),
            _ => {
                let le = self.log_eta(g);
                self.split_apply(g.log_g_par - le, g.log_g_perp - le, 1.0, v)
            }
        }
    }

    /// Kinetic energy written in the velocity variable: `1/2 v^T G v / eta^2`.
    pub fn kinetic_from_velocity(&self, g: &Geometry, v: &[f64]) -> f64 {
        match &self.kind {
            MetricKind::Identity => 0.5 * dot(v, v),
            MetricKind::Constant(_) => 0.5 * dot(v, &self.apply_metric(g, v)),
            _ => {
                let le2 = 2.0 * self.log_eta(g);
                match self.direction() {
                    Some(u) => {
                        let (uv, perp) = split_along(u, v);
                        let a = (g.log_g_par - le2).exp();
                        let b = (g.log_g_perp - le2).exp();
                        0.5 * (a * uv * uv + b * dot(&perp, &perp))
                    }
                    None => 0.5 * (g.log_g_par - le2).exp() * dot(v, v),
                }
            }
        }
    }

    pub fn hamiltonian(&self, g: &Geometry, v: &[f64]) -> f64 {
        self.potential(g) + self.kinetic_from_velocity(g, v)
    }

    /// Log density of the joint state in `(theta, v)` coordinates:
    /// `-H + log|G| - d log eta`, the `(theta, p)` density times `|dp/dv|`.
    pub fn log_weight(&self, g: &Geometry, v: &[f64]) -> f64 {
        -self.hamiltonian(g, v) + self.log_det(g) - g.dim() as f64 * self.log_eta(g)
    }

    /// `eta^2 G^{-1} grad(phi)` with `phi = -(1/T) log pi`.
    pub fn drift(&self, g: &Geometry) -> Vec<f64> {
        match &self.kind {
            MetricKind::Identity => g.grad.iter().map(|x| -x).collect(),
            MetricKind::Constant(_) => self.apply_inverse(g, &g.grad).iter().map(|x| -x).collect(),
            _ => {
                let le2 = 2.0 * self.log_eta(g);
                let neg_grad_phi: Vec<f64> = g.grad.iter().map(|x| x / self.temperature).collect();
                self.split_apply(le2 - g.log_g_par, le2 - g.log_g_perp, -1.0, &neg_grad_phi)
            }
        }
    }

    /// The matrix `v^T Gamma` (row k is `v^T Gamma^k`) as identity-plus-rank-3 structure.
    pub fn gamma_contract(&self, g: &Geometry, v: &[f64]) -> IdentityPlusLowRank {
        let w = &g.grad;
        let (ca, cb) = self.exponents();
        match &self.kind {
            MetricKind::Isometric => {
                let vw = dot(v, w);
                IdentityPlusLowRank {
                    scale: -0.25 * ca * vw,
                    terms: vec![
                        (w.clone(), v.iter().map(|x| 0.5 * ca * x).collect()),
                        (v.to_vec(), w.iter().map(|x| -0.25 * ca * x).collect()),
                    ],
                }
            }
            MetricKind::Directional { direction: u, .. } => {
                let vw = dot(v, w);
                let (uv, v_perp) = split_along(u, v);
                let (uw, w_perp) = split_along(u, w);
                let log_rho = g.log_g_par - g.log_g_perp;
                let rho = log_rho.exp();
                let inv_rho_cb = if cb == 0.0 { 0.0 } else { cb * (-log_rho).exp() };
                let r_u: Vec<f64> = (0..v.len())
                    .map(|i| {
                        0.5 * ca * uw * uv * u[i]
                            + 0.5 * inv_rho_cb * uw * v_perp[i]
                            + 0.5 * (cb - ca) * (vw * u[i] + uv * w[i])
                    })
                    .collect();
                let r_w: Vec<f64> =
                    (0..v.len()).map(|i| 0.5 * ca * rho * uv * u[i] + 0.5 * cb * v_perp[i]).collect();
                let r_v: Vec<f64> = w.iter().map(|x| (0.25 * ca - 0.5 * cb) * x).collect();
                IdentityPlusLowRank {
                    scale: vw * (0.25 * ca - 0.5 * cb),
                    terms: vec![(u.clone(), r_u), (w_perp, r_w), (v.to_vec(), r_v)],
                }
            }
            _ => IdentityPlusLowRank::scaled_identity(0.0),
        }
    }

    /// Solves `(I - (eps/2) v^T Gamma) x = rhs` in O(d).
    pub fn solve_kahan_system(&self, g: &Geometry, v: &[f64], eps: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        if !self.has_curvature() {
            return Ok(rhs.to_vec());
        }
        self.gamma_contract(g, v).identity_plus(-0.5 * eps).solve(rhs)
    }

    /// `log|det dv*/dv| = log|det(I + (eps/2) v*^T Gamma)| - log|det(I - (eps/2) v^T Gamma)|`.
    pub fn kahan_system_log_det(&self, g: &Geometry, v: &[f64], v_star: &[f64], eps: f64) -> Result<f64> {
        if !self.has_curvature() || eps == 0.0 {
            return Ok(0.0);
        }
        let d = g.dim();
        let plus = self.gamma_contract(g, v_star).identity_plus(0.5 * eps).log_abs_det(d)?;
        let minus = self.gamma_contract(g, v).identity_plus(-0.5 * eps).log_abs_det(d)?;
        Ok(plus - minus)
    }

    /// Drift of the manifold Langevin SDE, `1/2 [G^{-1} grad log pi + div(G^{-1})]`.
    pub fn langevin_drift(&self, g: &Geometry) -> Vec<f64> {
        let (ca, cb) = self.exponents();
        match &self.kind {
            MetricKind::Isometric | MetricKind::Directional { .. } => {
                let half: Vec<f64> = g.grad.iter().map(|x| 0.5 * x).collect();
                match self.direction() {
                    None => self.split_apply(-g.log_g_par, -g.log_g_par, 1.0 - ca, &half),
                    Some(u) => {
                        let (uw, perp) = split_along(u, &half);
                        let a = (1.0 - ca) * (-g.log_g_par).exp();
                        let b = (1.0 - cb) * (-g.log_g_perp).exp();
                        perp.iter().zip(u).map(|(pi, ui)| b * pi + a * uw * ui).collect()
                    }
                }
            }
            _ => self.apply_inverse(g, &g.grad).iter().map(|x| 0.5 * x).collect(),
        }
    }

    pub fn dense_metric(&self, g: &Geometry) -> DMatrix<f64> {
        let d = g.dim();
        DMatrix::from_fn(d, d, |i, j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            self.apply_metric(g, &e)[i]
        })
    }

    /// Analytic `dG/dtheta_l` for each `l`.
    pub fn dense_metric_partials(&self, g: &Geometry) -> Vec<DMatrix<f64>> {
        let d = g.dim();
        let (ca, cb) = self.exponents();
        (0..d)
            .map(|l| match &self.kind {
                MetricKind::Isometric => {
                    DMatrix::identity(d, d) * (g.log_g_par.exp() * ca * g.grad[l])
                }
                MetricKind::Directional { direction: u, .. } => {
                    let p = DMatrix::from_fn(d, d, |i, j| u[i] * u[j]);
                    let q = DMatrix::identity(d, d) - &p;
                    p * (g.log_g_par.exp() * ca * g.grad[l]) + q * (g.log_g_perp.exp() * cb * g.grad[l])
                }
                _ => DMatrix::zeros(d, d),
            })
            .collect()
    }

    pub fn grad_log_eta(&self, g: &Geometry) -> Vec<f64> {
        let (ca, _) = self.exponents();
        match self.kind {
            MetricKind::Isometric | MetricKind::Directional { .. } => {
                g.grad.iter().map(|x| 0.5 * ca * x).collect()
            }
            _ => vec![0.0; g.dim()],
        }
    }

    /// Dense symmetrized `Gamma^k` assembled entry by entry from `G`, `dG` and
    /// `grad log eta`. O(d^4); intended as a test oracle.
    pub fn dense_gamma(&self, g: &Geometry) -> Vec<DMatrix<f64>> {
        let d = g.dim();
        let gm = self.dense_metric(g);
        let ginv = gm.clone().try_inverse().expect("metric is invertible");
        let dg = self.dense_metric_partials(g);
        let dle = self.grad_log_eta(g);
        // bracket[l](i, j) = 1/2 dG_ij/dl - 1/2 (dG_lj/di - G_lj dle_i) - 1/2 (dG_li/dj - G_li dle_j)
        let bracket: Vec<DMatrix<f64>> = (0..d)
            .map(|l| {
                DMatrix::from_fn(d, d, |i, j| {
                    0.5 * dg[l][(i, j)] - 0.5 * (dg[i][(l, j)] - gm[(l, j)] * dle[i])
                        - 0.5 * (dg[j][(l, i)] - gm[(l, i)] * dle[j])
                })
            })
            .collect();
        (0..d)
            .map(|k| {
                let mut m = DMatrix::zeros(d, d);
                for l in 0..d {
                    m += &bracket[l] * ginv[(k, l)];
                }
                m
            })
            .collect()
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t >= 1.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be >= 1, got {t}")))
    }
}

fn unit(mut u: Vec<f64>) -> Result<Vec<f64>> {
    let n = dot(&u, &u).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidArgument("direction must be a nonzero finite vector".into()));
    }
    u.iter_mut().for_each(|x| *x /= n);
    Ok(u)
}

/// Contracts a dense `Gamma` (one matrix per row k) with `v`: row k is `v^T Gamma^k`.
pub fn contract_dense(gamma: &[DMatrix<f64>], v: &[f64]) -> DMatrix<f64> {
    let d = v.len();
    DMatrix::from_fn(d, d, |k, j| (0..d).map(|i| v[i] * gamma[k][(i, j)]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{GaussianMixture, ShellMixture, StandardGaussian};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn bimodal() -> SharedTarget {
        Arc::new(GaussianMixture::bimodal_horizontal())
    }

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize, s: f64) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-s..s)).collect()
    }

    fn metrics_for(target: SharedTarget, rng: &mut ChaCha8Rng) -> Vec<TemperedMetric> {
        let d = target.dim();
        let oblique = rand_vec(rng, d, 1.0);
        let mut axis = vec![0.0; d];
        axis[0] = 1.0;
        vec![
            TemperedMetric::isometric(target.clone(), 15.0).unwrap(),
            TemperedMetric::directional(target.clone(), 15.0, 1.0, axis.clone()).unwrap(),
            TemperedMetric::directional(target.clone(), 5.0, 0.75_f64.max(1.0 / d as f64), axis).unwrap(),
            TemperedMetric::directional(target.clone(), 15.0, 1.0, oblique.clone()).unwrap(),
            TemperedMetric::directional(target, 5.0, 0.75_f64.max(1.0 / d as f64), oblique).unwrap(),
        ]
    }

    /// Roundoff amplification of splitting a Cartesian vector along an oblique `u`:
    /// the spectral condition number of `G`. One for isometric and axis-aligned metrics.
    fn split_condition(m: &TemperedMetric, g: &Geometry) -> f64 {
        match m.direction() {
            Some(u) if u.iter().filter(|x| **x != 0.0).count() > 1 => {
                (g.log_g_par - g.log_g_perp).abs().exp()
            }
            _ => 1.0,
        }
    }

    #[test]
    fn untempered_metric_is_identity() {
        let t = bimodal();
        let m = TemperedMetric::isometric(t.clone(), 1.0).unwrap();
        let g = m.geometry(&[1.0, 2.0]).unwrap();
        assert_eq!(m.eta(&g), 1.0);
        assert_eq!(m.dense_metric(&g), DMatrix::identity(2, 2));
        let s = m.metric_scalars(&[1.0, 2.0]).unwrap();
        assert_eq!((s.log_g_par, s.log_g_perp), (0.0, 0.0));
        let p = [0.3, -1.2];
        assert_eq!(m.kinetic_energy(&g, &p), 0.5 * (0.09 + 1.44));
        assert_eq!(m.kinetic_energy(&g, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn isometric_scalar_formula() {
        let t = bimodal();
        let m = TemperedMetric::isometric(t.clone(), 15.0).unwrap();
        // log pi = -8 directly
        let g = m.geometry_from(vec![0.0, 0.0], -8.0, vec![0.0, 0.0]).unwrap();
        let expect = -8.0 * 14.0 / 15.0;
        assert!((g.log_g_par - expect).abs() < 1e-14);
        // eta^2 ||G^{-1/2}||^2 = 1
        let inv_sqrt_norm_sq = (-g.log_g_par).exp();
        assert!((m.eta(&g).powi(2) * inv_sqrt_norm_sq - 1.0).abs() < 1e-12);
        let dm = TemperedMetric::directional(t, 15.0, 1.0, vec![1.0, 0.0]).unwrap();
        let gd = dm.geometry_from(vec![0.0, 0.0], -8.0, vec![0.0, 0.0]).unwrap();
        // gamma = 1: g_par = pi^{2(1-1/T)}, eta = sqrt(g_par) = pi^{14/15}
        assert!((dm.log_eta(&gd) - expect).abs() < 1e-14);
        assert_eq!(gd.log_g_perp, 0.0);
    }

    #[test]
    fn vanished_density_is_a_tempering_singularity() {
        let m = TemperedMetric::isometric(bimodal(), 5.0).unwrap();
        let err = m.geometry_from(vec![0.0, 0.0], f64::NEG_INFINITY, vec![0.0, 0.0]);
        assert!(matches!(err, Err(Error::TemperingSingularity(_))));
    }

    #[test]
    fn oblique_kinetic_energy_survives_strong_anisotropy() {
        // log pi = -62 at T = 5, gamma = 0.75: g_perp / g_par = e^49.6
        let m = TemperedMetric::directional(bimodal(), 5.0, 0.75, vec![0.6, 0.8]).unwrap();
        let g = m.geometry_from(vec![3.0, 6.0], -62.0, vec![-20.0, -40.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let z = rand_vec(&mut rng, 2, 2.0);
            let v = m.velocity(&g, &m.momentum_from_normal(&g, &z));
            let want = 0.5 * dot(&z, &z);
            assert!((m.kinetic_from_velocity(&g, &v) - want).abs() < 1e-4 * want);
        }
    }

    #[test]
    fn volume_constraint_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: SharedTarget = Arc::new(ShellMixture::donut(4));
        for m in metrics_for(t.clone(), &mut rng) {
            for _ in 0..50 {
                let x = rand_vec(&mut rng, 4, 1.5);
                let g = m.geometry(&x).unwrap();
                let k = 1.0 - 1.0 / m.temperature();
                assert!((0.5 * m.log_det(&g) - k * g.log_density).abs() < 1e-10);
                let c = split_condition(&m, &g);
                if c < 1e12 {
                    let half_log_det = 0.5 * m.dense_metric(&g).determinant().ln();
                    assert!((half_log_det - k * g.log_density).abs() < 1e-10 * c);
                }
            }
        }
    }

    #[test]
    fn directional_at_one_over_d_is_isometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t: SharedTarget = Arc::new(ShellMixture::donut(3));
        let iso = TemperedMetric::isometric(t.clone(), 7.0).unwrap();
        let dir = TemperedMetric::directional(t, 7.0, 1.0 / 3.0, vec![1.0, 2.0, -1.0]).unwrap();
        for _ in 0..20 {
            let x = rand_vec(&mut rng, 3, 1.0);
            let a = iso.dense_metric(&iso.geometry(&x).unwrap());
            let b = dir.dense_metric(&dir.geometry(&x).unwrap());
            assert!((a - b).abs().max() < 1e-10);
        }
    }

    #[test]
    fn direction_is_normalized() {
        let m = TemperedMetric::directional(bimodal(), 2.0, 1.0, vec![3.0, 4.0]).unwrap();
        match m.kind() {
            MetricKind::Directional { direction, .. } => {
                assert!((dot(direction, direction) - 1.0).abs() < 1e-12)
            }
            _ => unreachable!(),
        }
        assert!(TemperedMetric::directional(bimodal(), 2.0, 0.2, vec![1.0, 0.0]).is_err());
        assert!(TemperedMetric::isometric(bimodal(), 0.5).is_err());
    }

    #[test]
    fn velocity_momentum_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: SharedTarget = Arc::new(GaussianMixture::bimodal_vertical());
        for m in metrics_for(t, &mut rng) {
            for _ in 0..50 {
                let g = m.geometry(&rand_vec(&mut rng, 2, 6.0)).unwrap();
                let p = rand_vec(&mut rng, 2, 2.0);
                let back = m.momentum(&g, &m.velocity(&g, &p));
                let tol = 1e-12 * split_condition(&m, &g);
                for (a, b) in p.iter().zip(&back) {
                    assert!((a - b).abs() < tol * (1.0 + a.abs()));
                }
                // kinetic energies agree across representations
                let v = m.velocity(&g, &p);
                let k1 = m.kinetic_energy(&g, &p);
                let k2 = m.kinetic_from_velocity(&g, &v);
                assert!((k1 - k2).abs() <= 1e-12 * split_condition(&m, &g) * k1.max(1.0));
            }
        }
    }

    #[test]
    fn kinetic_energy_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t: SharedTarget = Arc::new(GaussianMixture::bimodal_vertical());
        let iso = TemperedMetric::isometric(t.clone(), 15.0).unwrap();
        let g = iso.geometry(&[0.5, 1.0]).unwrap();
        let gval = g.log_g_par.exp();
        let k = iso.kinetic_energy(&g, &[gval.sqrt(), 0.0]);
        assert!((k - 0.5).abs() < 1e-12);
        for m in metrics_for(t, &mut rng) {
            let g = m.geometry(&rand_vec(&mut rng, 2, 5.0)).unwrap();
            let p = rand_vec(&mut rng, 2, 2.0);
            let dense = m.dense_metric(&g).lu().solve(&DVector::from_vec(p.clone())).unwrap();
            let expect = 0.5 * dot(&p, dense.as_slice());
            let tol = 1e-10 * split_condition(&m, &g);
            assert!((m.kinetic_energy(&g, &p) - expect).abs() <= tol * expect.max(1.0));
        }
    }

    #[test]
    fn momentum_sampling_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t: SharedTarget = Arc::new(GaussianMixture::bimodal_vertical());
        let n = 100_000;
        // T = 1: standard normal momenta
        let m = TemperedMetric::isometric(t.clone(), 1.0).unwrap();
        let g = m.geometry(&[0.3, 3.0]).unwrap();
        let (mut s, mut ss, mut sc) = ([0.0; 2], [0.0; 2], 0.0);
        for _ in 0..n {
            let p = m.sample_momentum(&g, &mut rng);
            for i in 0..2 {
                s[i] += p[i];
                ss[i] += p[i] * p[i];
            }
            sc += p[0] * p[1];
        }
        for i in 0..2 {
            assert!((s[i] / n as f64).abs() < 0.02);
            assert!((ss[i] / n as f64 - 1.0).abs() < 0.02);
        }
        assert!((sc / n as f64).abs() < 0.02);
        // any metric: mean kinetic energy d/2; directional gamma=1: var(u.p) = g_par
        for m in metrics_for(t, &mut rng) {
            let g = m.geometry(&[0.7, 1.0]).unwrap();
            let mut k = 0.0;
            let mut up2 = 0.0;
            let u = m.direction().map(|u| u.to_vec()).unwrap_or(vec![1.0, 0.0]);
            for _ in 0..n {
                let p = m.sample_momentum(&g, &mut rng);
                k += m.kinetic_energy(&g, &p);
                up2 += dot(&u, &p).powi(2);
            }
            assert!((k / n as f64 - 1.0).abs() < 0.01);
            if let MetricKind::Directional { gamma, .. } = m.kind() {
                if *gamma == 1.0 {
                    let var = up2 / n as f64;
                    let gp = g.log_g_par.exp();
                    assert!((var / gp - 1.0).abs() < 0.05);
                }
            }
        }
    }

    #[test]
    fn isometric_gamma_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t: SharedTarget = Arc::new(ShellMixture::donut(3));
        let m = TemperedMetric::isometric(t, 9.0).unwrap();
        for _ in 0..20 {
            let g = m.geometry(&rand_vec(&mut rng, 3, 1.2)).unwrap();
            let c = 2.0 * (1.0 - 1.0 / 9.0) / 3.0;
            let dlg: Vec<f64> = g.grad.iter().map(|x| c * x).collect();
            let dense = m.dense_gamma(&g);
            for k in 0..3 {
                let closed = DMatrix::from_fn(3, 3, |i, j| {
                    let eye = if i == j { 1.0 } else { 0.0 };
                    let ek_j = if j == k { 1.0 } else { 0.0 };
                    let ek_i = if i == k { 1.0 } else { 0.0 };
                    0.5 * dlg[k] * eye - 0.25 * dlg[i] * ek_j - 0.25 * ek_i * dlg[j]
                });
                assert!((&dense[k] - closed).abs().max() < 1e-10);
            }
        }
    }

    #[test]
    fn fast_contraction_matches_dense_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in [2usize, 3, 5] {
            let t: SharedTarget = Arc::new(ShellMixture::donut(d));
            let mut ms = metrics_for(t.clone(), &mut rng);
            ms.push(TemperedMetric::identity(t.clone()));
            for m in ms {
                for _ in 0..10 {
                    let g = m.geometry(&rand_vec(&mut rng, d, 1.0)).unwrap();
                    let v = rand_vec(&mut rng, d, 2.0);
                    let dense = contract_dense(&m.dense_gamma(&g), &v);
                    let fast = m.gamma_contract(&g, &v).to_dense(d);
                    let scale = 1.0 + dense.abs().max();
                    assert!((dense - fast).abs().max() < 1e-10 * scale, "{:?}", m.kind());
                }
            }
        }
    }

    #[test]
    fn gamma_is_symmetric_in_its_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t: SharedTarget = Arc::new(ShellMixture::donut(3));
        for m in metrics_for(t, &mut rng) {
            let g = m.geometry(&rand_vec(&mut rng, 3, 1.0)).unwrap();
            let gamma = m.dense_gamma(&g);
            let v = rand_vec(&mut rng, 3, 1.0);
            let w = rand_vec(&mut rng, 3, 1.0);
            for gk in &gamma {
                let a = DVector::from_vec(v.clone()).dot(&(gk * DVector::from_vec(w.clone())));
                let b = DVector::from_vec(w.clone()).dot(&(gk * DVector::from_vec(v.clone())));
                assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
            }
            // the fast contraction inherits it: (v^T Gamma) w == (w^T Gamma) v
            let a = m.gamma_contract(&g, &v).apply(&w);
            let b = m.gamma_contract(&g, &w).apply(&v);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn kahan_solve_and_log_det_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t: SharedTarget = Arc::new(GaussianMixture::bimodal_horizontal());
        let ms = vec![
            TemperedMetric::isometric(t.clone(), 15.0).unwrap(),
            TemperedMetric::directional(t.clone(), 15.0, 0.75, vec![1.0, 0.0]).unwrap(),
            TemperedMetric::directional(t.clone(), 15.0, 1.0, vec![0.6, 0.8]).unwrap(),
        ];
        for m in ms {
            for _ in 0..50 {
                let g = m.geometry(&rand_vec(&mut rng, 2, 5.0)).unwrap();
                let v = rand_vec(&mut rng, 2, 2.0);
                let vs = rand_vec(&mut rng, 2, 2.0);
                let rhs = rand_vec(&mut rng, 2, 1.0);
                let eps = rng.random_range(0.01..0.3);
                let gamma = m.dense_gamma(&g);
                let a = DMatrix::identity(2, 2) - contract_dense(&gamma, &v) * (eps / 2.0);
                let b = DMatrix::identity(2, 2) + contract_dense(&gamma, &vs) * (eps / 2.0);
                let expect = a.clone().lu().solve(&DVector::from_vec(rhs.clone())).unwrap();
                let x = m.solve_kahan_system(&g, &v, eps, &rhs).unwrap();
                let c = split_condition(&m, &g);
                let scale = 1.0 + expect.amax();
                for i in 0..2 {
                    assert!((x[i] - expect[i]).abs() <= 1e-10 * c * scale);
                }
                // solve composed with the assembled operator is the identity
                let back = &a * DVector::from_vec(x.clone());
                for i in 0..2 {
                    assert!((back[i] - rhs[i]).abs() <= 1e-10 * c * (1.0 + a.amax() * scale));
                }
                let jac = a.try_inverse().unwrap() * b;
                let ld = m.kahan_system_log_det(&g, &v, &vs, eps).unwrap();
                assert!((ld - jac.determinant().abs().ln()).abs() < 1e-8 * c);
                assert_eq!(m.kahan_system_log_det(&g, &v, &vs, 0.0).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn untempered_kahan_system_is_trivial() {
        let t: SharedTarget = Arc::new(StandardGaussian { dim: 3 });
        let m = TemperedMetric::isometric(t, 1.0).unwrap();
        let g = m.geometry(&[1.0, 2.0, 3.0]).unwrap();
        let rhs = [0.1, 0.2, 0.3];
        assert_eq!(m.solve_kahan_system(&g, &[1.0, 1.0, 1.0], 0.5, &rhs).unwrap(), rhs.to_vec());
        assert_eq!(m.kahan_system_log_det(&g, &[1.0; 3], &[2.0; 3], 0.5).unwrap(), 0.0);
        assert!(m.dense_gamma(&g).iter().all(|gk| gk.abs().max() == 0.0));
    }

    #[test]
    fn langevin_drift_reduces_for_identity_and_matches_divergence() {
        let t: SharedTarget = Arc::new(StandardGaussian { dim: 2 });
        let m = TemperedMetric::identity(t);
        let g = m.geometry(&[1.0, -2.0]).unwrap();
        assert_eq!(m.langevin_drift(&g), vec![-0.5, 1.0]);

        // tempered: compare 1/2 [G^{-1} grad + div G^{-1}] against finite differences of G^{-1}
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t: SharedTarget = Arc::new(GaussianMixture::bimodal_vertical());
        for m in metrics_for(t, &mut rng) {
            let x = rand_vec(&mut rng, 2, 3.0);
            let g = m.geometry(&x).unwrap();
            let h = 1e-5;
            let ginv_at = |y: &[f64]| {
                let gy = m.geometry(y).unwrap();
                m.dense_metric(&gy).try_inverse().unwrap()
            };
            let mut div = [0.0; 2];
            for i in 0..2 {
                for j in 0..2 {
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[j] += h;
                    b[j] -= h;
                    div[i] += (ginv_at(&a)[(i, j)] - ginv_at(&b)[(i, j)]) / (2.0 * h);
                }
            }
            let pre = m.apply_inverse(&g, &g.grad);
            let drift = m.langevin_drift(&g);
            for i in 0..2 {
                let expect = 0.5 * (pre[i] + div[i]);
                assert!((drift[i] - expect).abs() < 1e-5 * (1.0 + expect.abs()));
            }
        }
    }
}
