use super::{metropolis, standard_normal_vec, ChainRng, ChainState, Kernel, Transition};
use crate::linalg::dot;
use crate::metrics::{Geometry, TemperedMetric};
use crate::targets::SharedTarget;

/// Manifold MALA: one Euler-Maruyama step of the Langevin diffusion with
/// metric `G` as the proposal, followed by a Metropolis-Hastings correction.
/// The stationary law is the untempered target.
#[derive(Clone)]
pub struct Mmala {
    metric: TemperedMetric,
    eps: f64,
}

impl Mmala {
    pub fn new(metric: TemperedMetric, eps: f64) -> Self {
        Self { metric, eps }
    }

    fn mean(&self, g: &Geometry) -> Vec<f64> {
        let drift = self.metric.langevin_drift(g);
        g.theta.iter().zip(&drift).map(|(t, d)| t + self.eps * d).collect()
    }

    /// `log q(to | from)` up to a constant shared by both directions.
    fn log_proposal(&self, from: &Geometry, to: &[f64]) -> f64 {
        let mean = self.mean(from);
        let diff: Vec<f64> = to.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let quad = dot(&diff, &self.metric.apply_metric(from, &diff));
        0.5 * self.metric.log_det(from) - quad / (2.0 * self.eps)
    }
}

impl Kernel for Mmala {
    fn name(&self) -> String {
        "mmala".into()
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

    fn transition(&mut self, state: &mut ChainState, rng: &mut ChainRng) -> Transition {
        let energy = -state.log_density;
        let Ok(g0) = self.metric.geometry_from(state.theta.clone(), state.log_density, state.grad.clone())
        else {
            return Transition::failure(energy, 0);
        };
        let z = standard_normal_vec(rng, g0.dim());
        let noise = self.metric.apply_inverse_sqrt(&g0, &z);
        let sd = self.eps.sqrt();
        let proposal: Vec<f64> = self.mean(&g0).iter().zip(&noise).map(|(m, n)| m + sd * n).collect();
        let Ok(g1) = self.metric.geometry(&proposal) else {
            return Transition::failure(energy, 1);
        };
        let log_ratio = g1.log_density - g0.log_density + self.log_proposal(&g1, &g0.theta)
            - self.log_proposal(&g0, &g1.theta);
        let (accepted, prob) = metropolis(log_ratio, rng);
        if accepted {
            *state = ChainState { theta: g1.theta, log_density: g1.log_density, grad: g1.grad };
        }
        Transition { accepted, accept_stat: prob, energy, grad_evals: 1, failed: false, truncated: false, tree_depth: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::sample_chain;
    use crate::targets::StandardGaussian;
    use std::sync::Arc;

    #[test]
    fn identity_metric_is_mala() {
        let t: SharedTarget = Arc::new(StandardGaussian { dim: 2 });
        let m = TemperedMetric::identity(t);
        let k = Mmala::new(m.clone(), 0.1);
        let g = m.geometry(&[1.0, -2.0]).unwrap();
        // theta + eps/2 grad log pi
        assert_eq!(k.mean(&g), vec![1.0 - 0.05, -2.0 + 0.1]);
    }

    #[test]
    fn gaussian_moments() {
        let t: SharedTarget = Arc::new(StandardGaussian { dim: 1 });
        let mut k = Mmala::new(TemperedMetric::identity(t), 0.1);
        let rec = sample_chain(&mut k, vec![0.0], 1000, 200_000, 8).unwrap();
        let xs = rec.coordinate(0);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.05, "{mean}");
        assert!((var - 1.0).abs() < 0.07, "{var}");
    }
}
