//! Benchmark target densities with closed-form gradients.
//!
//! Mixture densities are normalized (component densities integrate to one and
//! weights sum to one), so mode heights are O(1). The shell mixture follows the
//! unnormalized radial form `sum_i exp(-(|x| - mu_i)^2 / (2 sigma^2)) / sigma`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot, norm};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// An unnormalized log-density with an analytic gradient.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &[f64]) -> Result<f64>;

    fn grad_log_density(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.log_density_and_grad(theta).map(|(_, g)| g)
    }

    fn log_density_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

pub type SharedTarget = Arc<dyn Target>;

/// `log(sum(exp(xs)))` without overflow. Empty input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Standard normal on `R^d`, normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardGaussian {
    pub dim: usize,
}

impl Target for StandardGaussian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim, theta.len())?;
        Ok(-0.5 * self.dim as f64 * LN_2PI - 0.5 * dot(theta, theta))
    }

    fn log_density_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lp = self.log_density(theta)?;
        Ok((lp, theta.iter().map(|x| -x).collect()))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Covariance {
    Isotropic { var: f64 },
    /// Lower Cholesky factor of the covariance.
    Dense { chol: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
struct Component {
    mean: Vec<f64>,
    cov: Covariance,
    /// `log w - d/2 log(2 pi) - 1/2 log|Sigma|`
    log_norm: f64,
}

impl Component {
    /// Returns the log kernel `-1/2 r^T Sigma^{-1} r` and `Sigma^{-1} r`, `r = x - mean`.
    fn quad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let r: Vec<f64> = theta.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        match &self.cov {
            Covariance::Isotropic { var } => {
                let q = dot(&r, &r) / var;
                (-0.5 * q, r.iter().map(|ri| ri / var).collect())
            }
            Covariance::Dense { chol } => {
                let d = r.len();
                // forward solve L z = r
                let mut z = r.clone();
                for i in 0..d {
                    let s: f64 = (0..i).map(|k| chol[(i, k)] * z[k]).sum();
                    z[i] = (z[i] - s) / chol[(i, i)];
                }
                let q = dot(&z, &z);
                // back solve L^T y = z
                let mut y = z;
                for i in (0..d).rev() {
                    let s: f64 = (i + 1..d).map(|k| chol[(k, i)] * y[k]).sum();
                    y[i] = (y[i] - s) / chol[(i, i)];
                }
                (-0.5 * q, y)
            }
        }
    }

    fn variance(&self, j: usize) -> f64 {
        match &self.cov {
            Covariance::Isotropic { var } => *var,
            Covariance::Dense { chol } => (0..=j).map(|k| chol[(j, k)].powi(2)).sum(),
        }
    }
}

/// Finite mixture of multivariate Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    components: Vec<Component>,
}

impl GaussianMixture {
    /// Mixture with isotropic components `N(mean_i, sd^2 I)`.
    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, sd: f64) -> Result<Self> {
        if !(sd > 0.0) {
            return Err(Error::InvalidArgument(format!("component sd must be positive, got {sd}")));
        }
        let covs = vec![None; means.len()];
        Self::build(weights, means, covs, sd * sd)
    }

    /// Mixture with arbitrary symmetric positive-definite covariances.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        if covariances.len() != means.len() {
            return Err(Error::InvalidArgument("one covariance per component required".into()));
        }
        Self::build(weights, means, covariances.into_iter().map(Some).collect(), 1.0)
    }

    fn build(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covs: Vec<Option<DMatrix<f64>>>,
        iso_var: f64,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::InvalidArgument(
                "need a nonempty weight per component mean".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let mut components = Vec::with_capacity(means.len());
        for ((w, mean), cov) in weights.iter().zip(means).zip(covs) {
            check_dim(dim, mean.len())?;
            let (cov, log_det) = match cov {
                None => (Covariance::Isotropic { var: iso_var }, dim as f64 * iso_var.ln()),
                Some(c) => {
                    if c.nrows() != dim || c.ncols() != dim {
                        return Err(Error::DimensionMismatch { expected: dim, got: c.nrows() });
                    }
                    if (&c - c.transpose()).abs().max() > 1e-12 * (1.0 + c.abs().max()) {
                        return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                    }
                    let chol = c
                        .cholesky()
                        .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))?
                        .l();
                    let log_det = 2.0 * chol.diagonal().iter().map(|x| x.ln()).sum::<f64>();
                    (Covariance::Dense { chol }, log_det)
                }
            };
            components.push(Component {
                mean,
                cov,
                log_norm: w.ln() - 0.5 * dim as f64 * LN_2PI - 0.5 * log_det,
            });
        }
        Ok(Self { dim, weights, components })
    }

    /// Equal-weight mixture of two standard 2-d Gaussians centred at `a` and `b`.
    pub fn two_standard_modes(a: [f64; 2], b: [f64; 2]) -> Self {
        Self::isotropic(vec![0.5, 0.5], vec![a.to_vec(), b.to_vec()], 1.0)
            .expect("valid two-mode mixture")
    }

    /// Modes at (-4, 0) and (4, 0): the trajectory-illustration layout.
    pub fn bimodal_horizontal() -> Self {
        Self::two_standard_modes([-4.0, 0.0], [4.0, 0.0])
    }

    /// Modes at (0, -4) and (0, 4): the benchmark layout.
    pub fn bimodal_vertical() -> Self {
        Self::two_standard_modes([0.0, -4.0], [0.0, 4.0])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> impl Iterator<Item = &[f64]> {
        self.components.iter().map(|c| c.mean.as_slice())
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Log density by direct summation of component densities; underflows far out.
    pub fn log_density_naive(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim, theta.len())?;
        let s: f64 = self
            .components
            .iter()
            .map(|c| (c.log_norm + c.quad(theta).0).exp())
            .sum();
        Ok(s.ln())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (w, c) in self.weights.iter().zip(&self.components) {
            axpy(*w, &c.mean, &mut m);
        }
        m
    }

    /// Marginal variances of each coordinate.
    pub fn variances(&self) -> Vec<f64> {
        let mean = self.mean();
        (0..self.dim)
            .map(|j| {
                let second: f64 = self
                    .weights
                    .iter()
                    .zip(&self.components)
                    .map(|(w, c)| w * (c.variance(j) + c.mean[j] * c.mean[j]))
                    .sum();
                second - mean[j] * mean[j]
            })
            .collect()
    }

    /// CDF of the marginal distribution of coordinate `j`.
    pub fn marginal_cdf(&self, j: usize, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * normal_cdf((x - c.mean[j]) / c.variance(j).sqrt()))
            .sum()
    }

    /// Exact draw from the mixture (isotropic or dense components).
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.components.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = i;
                break;
            }
        }
        self.sample_component(idx, rng)
    }

    pub fn sample_component<R: rand::Rng + ?Sized>(&self, idx: usize, rng: &mut R) -> Vec<f64> {
        let c = &self.components[idx];
        let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        match &c.cov {
            Covariance::Isotropic { var } => {
                let s = var.sqrt();
                c.mean.iter().zip(&z).map(|(m, zi)| m + s * zi).collect()
            }
            Covariance::Dense { chol } => (0..self.dim)
                .map(|i| c.mean[i] + (0..=i).map(|k| chol[(i, k)] * z[k]).sum::<f64>())
                .collect(),
        }
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

impl Target for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim, theta.len())?;
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.log_norm + c.quad(theta).0)
            .collect();
        Ok(log_sum_exp(&terms))
    }

    fn log_density_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim, theta.len())?;
        let parts: Vec<(f64, Vec<f64>)> = self
            .components
            .iter()
            .map(|c| {
                let (q, prec_r) = c.quad(theta);
                (c.log_norm + q, prec_r)
            })
            .collect();
        let terms: Vec<f64> = parts.iter().map(|p| p.0).collect();
        let lp = log_sum_exp(&terms);
        let mut grad = vec![0.0; self.dim];
        if lp.is_finite() {
            for (t, prec_r) in &parts {
                axpy(-(t - lp).exp(), prec_r, &mut grad);
            }
        }
        Ok((lp, grad))
    }
}

/// Construction parameters of the swiss-roll mixture: equal-weight isotropic
/// components whose means lie on the spiral `r = start_radius + growth * phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwissRollParams {
    pub components: usize,
    pub sd: f64,
    pub start_radius: f64,
    pub growth: f64,
    pub max_angle: f64,
}

impl Default for SwissRollParams {
    fn default() -> Self {
        Self {
            components: 32,
            sd: 0.35,
            start_radius: 0.5,
            growth: 0.35,
            max_angle: 3.0 * PI,
        }
    }
}

impl SwissRollParams {
    pub fn angles(&self) -> Vec<f64> {
        let n = self.components;
        (0..n)
            .map(|i| if n == 1 { 0.0 } else { self.max_angle * i as f64 / (n - 1) as f64 })
            .collect()
    }
}

pub fn make_swiss_roll() -> GaussianMixture {
    make_swiss_roll_with(SwissRollParams::default()).expect("default swiss roll is valid")
}

pub fn make_swiss_roll_with(params: SwissRollParams) -> Result<GaussianMixture> {
    if params.components == 0 {
        return Err(Error::InvalidArgument("swiss roll needs at least one component".into()));
    }
    let n = params.components;
    let means = params
        .angles()
        .into_iter()
        .map(|phi| {
            let r = params.start_radius + params.growth * phi;
            vec![r * phi.cos(), r * phi.sin()]
        })
        .collect();
    GaussianMixture::isotropic(vec![1.0 / n as f64; n], means, params.sd)
}

/// Spherically symmetric mixture of Gaussian shells:
/// `pi(x) = sum_i exp(-(|x| - r_i)^2 / (2 sigma^2)) / sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellMixture {
    pub radii: Vec<f64>,
    pub sigma: f64,
    pub dim: usize,
}

impl ShellMixture {
    pub fn new(radii: Vec<f64>, sigma: f64, dim: usize) -> Result<Self> {
        if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidArgument("shell radii must be positive".into()));
        }
        if !(sigma > 0.0) || dim == 0 {
            return Err(Error::InvalidArgument("sigma and dim must be positive".into()));
        }
        Ok(Self { radii, sigma, dim })
    }

    /// Radii 0.5, 1.0, 1.5 with width 0.1.
    pub fn donut(dim: usize) -> Self {
        Self::new(vec![0.5, 1.0, 1.5], 0.1, dim).expect("valid donut")
    }

    fn log_radial(&self, r: f64) -> f64 {
        let terms: Vec<f64> = self
            .radii
            .iter()
            .map(|mu| -self.sigma.ln() - (r - mu).powi(2) / (2.0 * self.sigma * self.sigma))
            .collect();
        log_sum_exp(&terms)
    }

    /// `E[|x|^k]` under the normalized density, by composite Simpson quadrature
    /// of `r^(d-1+k) pi(r)` over `[0, max_radius + 15 sigma]`.
    pub fn radial_moment(&self, k: f64) -> f64 {
        let upper = self.radii.iter().copied().fold(0.0, f64::max) + 15.0 * self.sigma;
        let n = 40_000usize;
        let h = upper / n as f64;
        let d = self.dim as f64;
        let log_f = |r: f64, p: f64| {
            if r == 0.0 {
                if p == 0.0 { self.log_radial(0.0) } else { f64::NEG_INFINITY }
            } else {
                p * r.ln() + self.log_radial(r)
            }
        };
        // shift by the peak to stay in range
        let shift = (0..=n)
            .map(|i| log_f(i as f64 * h, d - 1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        let simpson = |p: f64| {
            let mut s = 0.0;
            for i in 0..=n {
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * (log_f(i as f64 * h, p) - shift).exp();
            }
            s * h / 3.0
        };
        simpson(d - 1.0 + k) / simpson(d - 1.0)
    }

    /// Per-coordinate variance, `E|x|^2 / d` (means are zero by symmetry).
    pub fn coordinate_variance(&self) -> f64 {
        self.radial_moment(2.0) / self.dim as f64
    }
}

impl Target for ShellMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim, theta.len())?;
        Ok(self.log_radial(norm(theta)))
    }

    fn log_density_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim, theta.len())?;
        let r = norm(theta);
        let s2 = self.sigma * self.sigma;
        let terms: Vec<f64> = self
            .radii
            .iter()
            .map(|mu| -self.sigma.ln() - (r - mu).powi(2) / (2.0 * s2))
            .collect();
        let lp = log_sum_exp(&terms);
        if r == 0.0 {
            // not differentiable at the origin; use the zero subgradient
            return Ok((lp, vec![0.0; self.dim]));
        }
        let dlp_dr: f64 = terms
            .iter()
            .zip(&self.radii)
            .map(|(t, mu)| -(t - lp).exp() * (r - mu) / s2)
            .sum();
        Ok((lp, theta.iter().map(|x| dlp_dr * x / r).collect()))
    }
}

/// Pull-back of a target through the linear map `theta = map * x`
/// (the constant Jacobian factor is dropped).
pub struct LinearlyTransformed {
    inner: SharedTarget,
    map: DMatrix<f64>,
}

impl LinearlyTransformed {
    pub fn new(inner: SharedTarget, map: DMatrix<f64>) -> Result<Self> {
        let d = inner.dim();
        if map.nrows() != d || map.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: map.nrows() });
        }
        Ok(Self { inner, map })
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        (0..d).map(|i| (0..d).map(|j| self.map[(i, j)] * x[j]).sum()).collect()
    }
}

impl Target for LinearlyTransformed {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        self.inner.log_density(&self.forward(x))
    }

    fn log_density_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim(), x.len())?;
        let (lp, g) = self.inner.log_density_and_grad(&self.forward(x))?;
        let d = x.len();
        let pulled = (0..d).map(|j| (0..d).map(|i| self.map[(i, j)] * g[i]).sum()).collect();
        Ok((lp, pulled))
    }
}
