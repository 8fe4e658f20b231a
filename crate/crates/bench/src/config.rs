//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use gthmc::diagnostics::Statistic;
use gthmc::targets::{
    make_swiss_roll_with, GaussianMixture, ShellMixture, SharedTarget, StandardGaussian, SwissRollParams,
};
use gthmc::tuning::log_spaced_grid;

use crate::error::{BenchError, Result};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "BENCH_OUTPUT_DIR";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Gradient count that ESS per gradient is reported against.
    #[serde(default = "default_budget")]
    pub gradient_budget: u64,
    #[serde(default = "yes")]
    pub write_chains: bool,
    pub target: TargetSpec,
    #[serde(default)]
    pub tuning: TuningSpec,
    #[serde(default)]
    pub kernels: Vec<KernelSpec>,
    #[serde(default)]
    pub trajectories: Option<TrajectorySpec>,
}

fn default_samples() -> usize {
    10_000
}

fn default_budget() -> u64 {
    1000
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TargetSpec {
    /// Two standard Gaussians at `±separation` along `axis`.
    Bimodal {
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        axis: Axis,
        #[serde(default)]
        init: Option<Vec<f64>>,
    },
    Swissroll {
        #[serde(default)]
        components: Option<usize>,
        #[serde(default)]
        sd: Option<f64>,
        #[serde(default)]
        start_radius: Option<f64>,
        #[serde(default)]
        growth: Option<f64>,
        #[serde(default)]
        max_angle: Option<f64>,
        #[serde(default)]
        init: Option<Vec<f64>>,
    },
    Donut25 {
        #[serde(default = "default_donut_dim")]
        dim: usize,
        #[serde(default)]
        init: Option<Vec<f64>>,
    },
    Gaussian {
        #[serde(default = "default_gaussian_dim")]
        dim: usize,
        #[serde(default)]
        init: Option<Vec<f64>>,
    },
}

fn default_separation() -> f64 {
    4.0
}

fn default_donut_dim() -> usize {
    25
}

fn default_gaussian_dim() -> usize {
    2
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Horizontal,
    #[default]
    Vertical,
}

/// A constructed target with everything the diagnostics need.
pub struct BuiltTarget {
    pub target: SharedTarget,
    pub dim: usize,
    pub init: Vec<f64>,
    /// Mode-separation direction, used as the default tempering direction.
    pub axis: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub radial: Option<Statistic>,
    pub modes: Vec<Vec<f64>>,
}

impl TargetSpec {
    pub fn build(&self) -> Result<BuiltTarget> {
        let built = match self {
            TargetSpec::Bimodal { separation, axis, init } => {
                if !(*separation > 0.0) {
                    return Err(BenchError::Config("bimodal separation must be positive".into()));
                }
                let s = *separation;
                let (a, b, dir) = match axis {
                    Axis::Horizontal => ([-s, 0.0], [s, 0.0], vec![1.0, 0.0]),
                    Axis::Vertical => ([0.0, -s], [0.0, s], vec![0.0, 1.0]),
                };
                let mix = GaussianMixture::two_standard_modes(a, b);
                BuiltTarget {
                    dim: 2,
                    init: init.clone().unwrap_or_else(|| b.to_vec()),
                    axis: dir,
                    means: mix.mean(),
                    variances: mix.variances(),
                    radial: None,
                    modes: vec![a.to_vec(), b.to_vec()],
                    target: Arc::new(mix),
                }
            }
            TargetSpec::Swissroll { components, sd, start_radius, growth, max_angle, init } => {
                let d = SwissRollParams::default();
                let params = SwissRollParams {
                    components: components.unwrap_or(d.components),
                    sd: sd.unwrap_or(d.sd),
                    start_radius: start_radius.unwrap_or(d.start_radius),
                    growth: growth.unwrap_or(d.growth),
                    max_angle: max_angle.unwrap_or(d.max_angle),
                };
                let mix = make_swiss_roll_with(params).map_err(|e| BenchError::Config(e.to_string()))?;
                let modes: Vec<Vec<f64>> = mix.means().map(|m| m.to_vec()).collect();
                BuiltTarget {
                    dim: 2,
                    init: init.clone().unwrap_or_else(|| modes[0].clone()),
                    axis: vec![1.0, 0.0],
                    means: mix.mean(),
                    variances: mix.variances(),
                    radial: None,
                    modes,
                    target: Arc::new(mix),
                }
            }
            TargetSpec::Donut25 { dim, init } => {
                if *dim == 0 {
                    return Err(BenchError::Config("donut dim must be positive".into()));
                }
                let donut = ShellMixture::donut(*dim);
                let m1 = donut.radial_moment(1.0);
                let m2 = donut.radial_moment(2.0);
                let mut start = vec![0.0; *dim];
                start[0] = donut.radii[0];
                BuiltTarget {
                    dim: *dim,
                    init: init.clone().unwrap_or(start),
                    axis: unit(*dim, 0),
                    means: vec![0.0; *dim],
                    variances: vec![donut.coordinate_variance(); *dim],
                    radial: Some(Statistic::radial(m1, m2 - m1 * m1)),
                    modes: Vec::new(),
                    target: Arc::new(donut),
                }
            }
            TargetSpec::Gaussian { dim, init } => {
                if *dim == 0 {
                    return Err(BenchError::Config("gaussian dim must be positive".into()));
                }
                BuiltTarget {
                    dim: *dim,
                    init: init.clone().unwrap_or_else(|| vec![0.0; *dim]),
                    axis: unit(*dim, 0),
                    means: vec![0.0; *dim],
                    variances: vec![1.0; *dim],
                    radial: None,
                    modes: vec![vec![0.0; *dim]],
                    target: Arc::new(StandardGaussian { dim: *dim }),
                }
            }
        };
        if built.init.len() != built.dim {
            return Err(BenchError::Config(format!(
                "init has {} coordinates, target has {}",
                built.init.len(),
                built.dim
            )));
        }
        Ok(built)
    }
}

fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    e
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSpec {
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_adapt")]
    pub adapt_iters: usize,
    #[serde(default = "default_pilot")]
    pub pilot_iters: usize,
    #[serde(default = "default_tau_min")]
    pub tau_min: f64,
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    #[serde(default = "default_tau_points")]
    pub tau_points: usize,
    /// Explicit path-length grid; replaces the log-spaced one.
    #[serde(default)]
    pub tau_grid: Option<Vec<f64>>,
}

fn default_rounds() -> usize {
    3
}
fn default_adapt() -> usize {
    500
}
fn default_pilot() -> usize {
    200
}
fn default_tau_min() -> f64 {
    0.25
}
fn default_tau_max() -> f64 {
    8.0
}
fn default_tau_points() -> usize {
    8
}

impl Default for TuningSpec {
    fn default() -> Self {
        Self {
            rounds: default_rounds(),
            adapt_iters: default_adapt(),
            pilot_iters: default_pilot(),
            tau_min: default_tau_min(),
            tau_max: default_tau_max(),
            tau_points: default_tau_points(),
            tau_grid: None,
        }
    }
}

impl TuningSpec {
    pub fn grid(&self) -> Vec<f64> {
        match &self.tau_grid {
            Some(g) => g.clone(),
            None => log_spaced_grid(self.tau_min, self.tau_max, self.tau_points),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(BenchError::Config("tuning.rounds must be at least 1".into()));
        }
        let g = self.grid();
        if g.is_empty() || g.iter().any(|t| !(*t > 0.0)) || g.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BenchError::Config("path-length grid must be positive and strictly ascending".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Nuts {
        #[serde(default = "default_nuts_deltas")]
        deltas: Vec<f64>,
        #[serde(default = "default_depth")]
        max_depth: usize,
        #[serde(default)]
        step_size: Option<f64>,
    },
    Hmc {
        #[serde(default = "default_nuts_deltas")]
        deltas: Vec<f64>,
        #[serde(default)]
        step_size: Option<f64>,
        #[serde(default)]
        path_length: Option<f64>,
    },
    Ithmc {
        temperatures: Vec<f64>,
        #[serde(default)]
        tempered: TemperedOptions,
    },
    Dthmc {
        temperatures: Vec<f64>,
        gamma: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
        #[serde(default)]
        random_direction: bool,
        #[serde(default)]
        tempered: TemperedOptions,
    },
    Mmala {
        temperatures: Vec<f64>,
        #[serde(default = "default_mmala_delta")]
        delta: f64,
        #[serde(default)]
        step_size: Option<f64>,
    },
}

fn default_nuts_deltas() -> Vec<f64> {
    vec![0.8]
}
fn default_depth() -> usize {
    10
}
fn default_mmala_delta() -> f64 {
    0.57
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperedOptions {
    /// Target of the accuracy statistic.
    #[serde(default = "default_accuracy")]
    pub delta: f64,
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub path_length: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Fixed-length trajectories instead of variable-length ones.
    #[serde(default)]
    pub fixed_length: bool,
}

fn default_accuracy() -> f64 {
    0.9
}
fn default_max_steps() -> usize {
    gthmc::samplers::DEFAULT_MAX_STEPS
}

impl Default for TemperedOptions {
    fn default() -> Self {
        Self {
            delta: default_accuracy(),
            step_size: None,
            path_length: None,
            max_steps: default_max_steps(),
            fixed_length: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default = "default_kinetic")]
    pub kinetic_energy: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_markers")]
    pub markers: usize,
    #[serde(default = "default_traj_eps")]
    pub step_size: f64,
    #[serde(default = "default_traj_max")]
    pub max_steps: usize,
    #[serde(default)]
    pub kernels: Vec<TrajectoryKernel>,
}

fn default_kinetic() -> f64 {
    0.8
}
fn default_duration() -> f64 {
    3.0
}
fn default_count() -> usize {
    10
}
fn default_markers() -> usize {
    30
}
fn default_traj_eps() -> f64 {
    0.01
}
fn default_traj_max() -> usize {
    1_000_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrajectoryKernel {
    Hmc,
    Ithmc {
        temperature: f64,
    },
    Dthmc {
        temperature: f64,
        gamma: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
}

impl ExperimentConfig {
    pub fn from_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|source| BenchError::Parse { path: origin.to_path_buf(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => BenchError::Config(format!("config file {} not found", path.display())),
            _ => BenchError::Io { path: path.to_path_buf(), source: e },
        })?;
        Self::from_str(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples <= self.burn_in {
            return Err(BenchError::Config(format!(
                "n_samples ({}) must exceed burn_in ({})",
                self.n_samples, self.burn_in
            )));
        }
        if self.n_samples < 4 {
            return Err(BenchError::Config("n_samples must be at least 4".into()));
        }
        if self.gradient_budget == 0 {
            return Err(BenchError::Config("gradient_budget must be positive".into()));
        }
        self.tuning.validate()?;
        let built = self.target.build()?;
        for k in &self.kernels {
            k.validate(built.dim)?;
        }
        if let Some(t) = &self.trajectories {
            t.validate()?;
        }
        Ok(())
    }

    /// Output directory: the environment override, then the config, then `out/<name>`.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(dir);
        }
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(self.name.as_deref().unwrap_or("experiment")))
    }
}

fn check_prob(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(BenchError::Config(format!("{name} must lie in (0, 1), got {x}")))
    }
}

fn check_temperatures(ts: &[f64]) -> Result<()> {
    if ts.iter().any(|t| !(*t >= 1.0 && t.is_finite())) {
        return Err(BenchError::Config("temperatures must be finite and at least 1".into()));
    }
    Ok(())
}

fn check_positive(name: &str, x: Option<f64>) -> Result<()> {
    match x {
        Some(v) if !(v > 0.0 && v.is_finite()) => Err(BenchError::Config(format!("{name} must be positive"))),
        _ => Ok(()),
    }
}

impl KernelSpec {
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            KernelSpec::Nuts { deltas, step_size, max_depth } => {
                deltas.iter().try_for_each(|d| check_prob("delta", *d))?;
                check_positive("step_size", *step_size)?;
                if *max_depth == 0 {
                    return Err(BenchError::Config("max_depth must be at least 1".into()));
                }
            }
            KernelSpec::Hmc { deltas, step_size, path_length } => {
                deltas.iter().try_for_each(|d| check_prob("delta", *d))?;
                check_positive("step_size", *step_size)?;
                check_positive("path_length", *path_length)?;
            }
            KernelSpec::Ithmc { temperatures, tempered } => {
                check_temperatures(temperatures)?;
                tempered.validate()?;
            }
            KernelSpec::Dthmc { temperatures, gamma, direction, tempered, .. } => {
                check_temperatures(temperatures)?;
                tempered.validate()?;
                let lo = 1.0 / dim as f64;
                if !(*gamma >= lo && *gamma <= 1.0) {
                    return Err(BenchError::Config(format!("gamma must lie in [{lo}, 1], got {gamma}")));
                }
                if let Some(u) = direction {
                    if u.len() != dim {
                        return Err(BenchError::Config(format!("direction has {} entries, target has {dim}", u.len())));
                    }
                }
            }
            KernelSpec::Mmala { temperatures, delta, step_size } => {
                check_temperatures(temperatures)?;
                check_prob("delta", *delta)?;
                check_positive("step_size", *step_size)?;
            }
        }
        Ok(())
    }
}

impl TemperedOptions {
    fn validate(&self) -> Result<()> {
        check_prob("tempered.delta", self.delta)?;
        check_positive("tempered.step_size", self.step_size)?;
        check_positive("tempered.path_length", self.path_length)?;
        if self.max_steps == 0 {
            return Err(BenchError::Config("tempered.max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

impl TrajectorySpec {
    fn validate(&self) -> Result<()> {
        if !(self.kinetic_energy >= 0.0) || !(self.duration > 0.0) || !(self.step_size > 0.0) {
            return Err(BenchError::Config(
                "trajectories need nonnegative kinetic energy, positive duration and positive step size".into(),
            ));
        }
        for k in &self.kernels {
            match k {
                TrajectoryKernel::Hmc => {}
                TrajectoryKernel::Ithmc { temperature } | TrajectoryKernel::Dthmc { temperature, .. } => {
                    check_temperatures(&[*temperature])?
                }
            }
        }
        Ok(())
    }
}
