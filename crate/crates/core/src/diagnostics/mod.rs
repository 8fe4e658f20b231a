//! Effective sample size, stationarity statistics and the energy-barrier oracle.

mod barrier;
mod ess;

pub use barrier::{energy_barrier, energy_barrier_grid, GridSpec};
pub use ess::{
    autocovariance_true_mean, autocovariances, ess_geyer, ess_report, EssReport, Statistic, TrueMoments,
};

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::normal_cdf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn ks_of_exact_draws_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        assert!(ks_statistic(&xs, normal_cdf) < 0.01);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 0.1).collect();
        assert!(ks_statistic(&shifted, normal_cdf) > 0.03);
    }

    #[test]
    fn ks_single_point() {
        assert_eq!(ks_statistic(&[0.0], normal_cdf), 0.5);
    }
}
