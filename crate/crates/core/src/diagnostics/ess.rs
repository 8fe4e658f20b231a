use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{check_dim, Error, Result};
use crate::samplers::ChainRecord;

/// `a(k) = (1/M) sum_{m < M-k} (g_{m+k} - mu)(g_m - mu)`, computed directly.
pub fn autocovariance_true_mean(series: &[f64], mu: f64, k: usize) -> Result<f64> {
    let m = series.len();
    if k >= m {
        return Err(Error::InvalidArgument(format!("lag {k} out of range for length {m}")));
    }
    let s: f64 = (0..m - k).map(|i| (series[i + k] - mu) * (series[i] - mu)).sum();
    Ok(s / m as f64)
}

/// All autocovariances about the known mean `mu`, by FFT.
pub fn autocovariances(series: &[f64], mu: f64) -> Vec<f64> {
    let m = series.len();
    if m == 0 {
        return Vec::new();
    }
    let n = (2 * m).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series.iter().map(|x| Complex::new(x - mu, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / (n as f64 * m as f64);
    buf[..m].iter().map(|z| z.re * scale).collect()
}

/// Effective sample size by Geyer's initial monotone sequence, with the known
/// mean in place of the sample mean. Not capped at the chain length.
/// A constant series equal to `mu` has ESS equal to its length.
pub fn ess_geyer(series: &[f64], mu: f64) -> Result<f64> {
    let m = series.len();
    if m < 4 {
        return Err(Error::InvalidArgument("ESS needs at least 4 draws".into()));
    }
    let acov = autocovariances(series, mu);
    let a0 = acov[0];
    if !(a0 > 0.0) {
        return Ok(m as f64);
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    for j in 0..m / 2 {
        let pair = acov[2 * j] + acov[2 * j + 1];
        if !(pair > 0.0) {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
    }
    let tau = -1.0 + 2.0 * sum / a0;
    let floor = 1.0 / (m as f64).log10();
    Ok(m as f64 / tau.max(floor))
}

/// True first and second moments per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueMoments {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// A scalar function of the state with its known mean and variance. Its ESS is
/// reported for both `g` and `(g - mean)^2`.
#[derive(Clone)]
pub struct Statistic {
    pub name: String,
    pub func: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub mean: f64,
    pub variance: f64,
}

impl Statistic {
    pub fn new(name: impl Into<String>, mean: f64, variance: f64, func: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), func: Arc::new(func), mean, variance }
    }

    pub fn coordinate(j: usize, mean: f64, variance: f64) -> Self {
        Self::new(format!("theta[{j}]"), mean, variance, move |x| x[j])
    }

    /// The radial statistic `|theta|`.
    pub fn radial(mean: f64, variance: f64) -> Self {
        Self::new("radius", mean, variance, |x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssReport {
    /// `(name, raw ESS)` for every mean and variance estimator.
    pub per_statistic: Vec<(String, f64)>,
    /// Minimum ESS, capped at the chain length.
    pub min_ess: f64,
    pub min_statistic: String,
    pub ess_per_100_samples: f64,
    pub ess_per_gradient_budget: f64,
    pub gradient_budget: u64,
    pub n_samples: usize,
    pub grad_evals: u64,
}

impl EssReport {
    /// Report over arbitrary statistics.
    pub fn from_statistics(chain: &ChainRecord, stats: &[Statistic], gradient_budget: u64) -> Result<Self> {
        if stats.is_empty() {
            return Err(Error::InvalidArgument("no statistics supplied".into()));
        }
        let m = chain.len();
        let mut per_statistic = Vec::with_capacity(2 * stats.len());
        for s in stats {
            let g: Vec<f64> = chain.samples.iter().map(|x| (s.func)(x)).collect();
            per_statistic.push((format!("mean {}", s.name), ess_geyer(&g, s.mean)?));
            let sq: Vec<f64> = g.iter().map(|x| (x - s.mean).powi(2)).collect();
            per_statistic.push((format!("var {}", s.name), ess_geyer(&sq, s.variance)?));
        }
        let (min_statistic, raw_min) = per_statistic
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, e)| (n.clone(), *e))
            .expect("nonempty");
        let min_ess = raw_min.min(m as f64);
        let grad_evals = chain.grad_eval_total;
        let ess_per_gradient_budget =
            if grad_evals > 0 { min_ess * gradient_budget as f64 / grad_evals as f64 } else { 0.0 };
        Ok(Self {
            per_statistic,
            min_ess,
            min_statistic,
            ess_per_100_samples: 100.0 * min_ess / m as f64,
            ess_per_gradient_budget,
            gradient_budget,
            n_samples: m,
            grad_evals,
        })
    }
}

/// Minimum ESS over the mean and variance estimators of every coordinate.
pub fn ess_report(chain: &ChainRecord, moments: &TrueMoments, gradient_budget: u64) -> Result<EssReport> {
    let d = chain.samples.first().map_or(0, |s| s.len());
    check_dim(d, moments.means.len())?;
    check_dim(d, moments.variances.len())?;
    // the second-moment estimator (theta_j - mu_j)^2 has mean var_j
    let stats: Vec<Statistic> = (0..d)
        .map(|j| Statistic::coordinate(j, moments.means[j], moments.variances[j]))
        .collect();
    EssReport::from_statistics(chain, &stats, gradient_budget)
}
