//! Fixed-energy trajectory illustrations on 2-d targets.

use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};

use gthmc::integrators::{fixed_energy_start, integrate_for_time, positions_at_times, TimedPoint};
use gthmc::metrics::TemperedMetric;
use gthmc::samplers::{chain_seed, ChainRng};

use crate::config::{BuiltTarget, ExperimentConfig, TrajectoryKernel, TrajectorySpec};
use crate::error::{BenchError, Result};
use crate::svg::{color, range_of, Panel, Svg};

pub const TRAJECTORY_SVG: &str = "trajectories.svg";

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub index: usize,
    pub points: Vec<TimedPoint>,
    /// Positions at equally spaced physical times over the duration.
    pub markers: Vec<Vec<f64>>,
    /// Whether the path reaches the far side of the plane bisecting the first two modes.
    pub crossed: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct KernelTrajectories {
    pub label: String,
    pub metric: TemperedMetric,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryKernel {
    pub fn label(&self) -> String {
        match self {
            TrajectoryKernel::Hmc => "hmc".into(),
            TrajectoryKernel::Ithmc { temperature } => format!("ithmc_T{temperature}"),
            TrajectoryKernel::Dthmc { temperature, gamma, .. } => format!("dthmc_g{gamma}_T{temperature}"),
        }
    }

    fn metric(&self, built: &BuiltTarget) -> Result<TemperedMetric> {
        let t = built.target.clone();
        Ok(match self {
            TrajectoryKernel::Hmc => TemperedMetric::identity(t),
            TrajectoryKernel::Ithmc { temperature } => TemperedMetric::isometric(t, *temperature)?,
            TrajectoryKernel::Dthmc { temperature, gamma, direction } => {
                let u = direction.clone().unwrap_or_else(|| built.axis.clone());
                TemperedMetric::directional(t, *temperature, *gamma, u)?
            }
        })
    }
}

/// Signed side of `x` relative to the bisector of `a` and `b`.
fn side(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    x.iter().zip(a.iter().zip(b)).map(|(xi, (ai, bi))| (xi - 0.5 * (ai + bi)) * (bi - ai)).sum()
}

pub fn crosses_midline(points: &[TimedPoint], a: &[f64], b: &[f64]) -> bool {
    let Some(first) = points.first() else { return false };
    let s0 = side(first.point.theta(), a, b);
    points.iter().any(|p| side(p.point.theta(), a, b) * s0 < 0.0)
}

/// Integrates `spec.count` trajectories per kernel from the same seeded momentum directions.
pub fn simulate(spec: &TrajectorySpec, built: &BuiltTarget, seed: u64) -> Result<(Vec<KernelTrajectories>, Vec<String>)> {
    if built.dim != 2 {
        return Err(BenchError::Config(format!("trajectory mode needs a 2-d target, got dimension {}", built.dim)));
    }
    let start = spec.start.clone().unwrap_or_else(|| built.modes.first().cloned().unwrap_or(built.init.clone()));
    if start.len() != 2 {
        return Err(BenchError::Config("trajectory start must have 2 coordinates".into()));
    }
    let directions: Vec<Vec<f64>> = (0..spec.count)
        .map(|i| {
            let mut rng = ChainRng::seed_from_u64(chain_seed(seed, i as u64));
            let a = rng.random::<f64>() * 2.0 * PI;
            vec![a.cos(), a.sin()]
        })
        .collect();
    let times: Vec<f64> = (0..=spec.markers).map(|i| spec.duration * i as f64 / spec.markers.max(1) as f64).collect();
    let mut warnings = Vec::new();
    let mut out = Vec::new();
    for k in &spec.kernels {
        let metric = k.metric(built)?;
        let label = k.label();
        let mut trajectories = Vec::new();
        for (index, dir) in directions.iter().enumerate() {
            let p0 = fixed_energy_start(&metric, &start, dir, spec.kinetic_energy)?;
            match integrate_for_time(&metric, &p0, spec.step_size, spec.duration, spec.max_steps) {
                Ok(points) => {
                    let crossed = match built.modes.as_slice() {
                        [a, b, ..] => Some(crosses_midline(&points, a, b)),
                        _ => None,
                    };
                    let markers = positions_at_times(&points, &times);
                    trajectories.push(Trajectory { index, points, markers, crossed });
                }
                Err(e) => warnings.push(format!("{label} trajectory {index} stopped: {e}")),
            }
        }
        out.push(KernelTrajectories { label, metric, trajectories });
    }
    Ok((out, warnings))
}

/// Paths, equal-time markers and mode circles, one panel per kernel.
pub fn render(sets: &[KernelTrajectories], built: &BuiltTarget) -> String {
    let panel_w = 360.0;
    let panel_h = 300.0;
    let width = (sets.len().max(1) as f64) * (panel_w + 70.0) + 20.0;
    let height = panel_h + 90.0;
    let mut svg = Svg::new(width, height);
    if sets.is_empty() {
        return svg.finish();
    }
    let xs = built.modes.iter().map(|m| m[0]).chain(sets.iter().flat_map(|s| {
        s.trajectories.iter().flat_map(|t| t.points.iter().map(|p| p.point.theta()[0]))
    }));
    let ys = built.modes.iter().map(|m| m[1]).chain(sets.iter().flat_map(|s| {
        s.trajectories.iter().flat_map(|t| t.points.iter().map(|p| p.point.theta()[1]))
    }));
    let (x0, x1) = range_of(xs);
    let (y0, y1) = range_of(ys);
    let pad = 2.5;
    for (i, set) in sets.iter().enumerate() {
        let panel = Panel {
            left: 70.0 + i as f64 * (panel_w + 70.0),
            top: 40.0,
            width: panel_w,
            height: panel_h,
            x_range: (x0 - pad, x1 + pad),
            y_range: (y0 - pad, y1 + pad),
        };
        svg.axes(&panel, &set.label, "theta1", "theta2");
        for m in &built.modes {
            svg.circle(&panel, m[0], m[1], 1.0, "#888");
            svg.circle(&panel, m[0], m[1], 2.0, "#bbb");
        }
        for t in &set.trajectories {
            let c = color(t.index);
            let pts: Vec<(f64, f64)> = t.points.iter().map(|p| (p.point.theta()[0], p.point.theta()[1])).collect();
            svg.polyline(&panel, &pts, c, 1.2);
            for m in &t.markers {
                svg.star(&panel, m[0], m[1], 3.0, c);
            }
        }
    }
    svg.finish()
}

pub struct TrajectoryOutput {
    pub svg: PathBuf,
    pub csvs: Vec<PathBuf>,
    pub sets: Vec<KernelTrajectories>,
    pub warnings: Vec<String>,
}

/// Trajectory CSV columns: `t, theta1..thetad, v1..vd, logpi`.
fn write_csv(path: &std::path::Path, t: &Trajectory) -> Result<()> {
    let d = t.points.first().map_or(0, |p| p.point.theta().len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|j| format!("theta{j}")));
    header.extend((1..=d).map(|j| format!("v{j}")));
    header.push("logpi".into());
    w.write_record(&header)?;
    for p in &t.points {
        let mut rec = vec![p.time.to_string()];
        rec.extend(p.point.theta().iter().map(|x| x.to_string()));
        rec.extend(p.point.velocity.iter().map(|x| x.to_string()));
        rec.push(p.point.geometry.log_density.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(BenchError::io(path))?;
    Ok(())
}

pub fn run_trajectories(cfg: &ExperimentConfig) -> Result<TrajectoryOutput> {
    cfg.validate()?;
    let spec = cfg
        .trajectories
        .as_ref()
        .ok_or_else(|| BenchError::Config("config has no [trajectories] table".into()))?;
    let built = cfg.target.build()?;
    let (sets, warnings) = simulate(spec, &built, cfg.seed)?;
    let dir = cfg.output_dir();
    let traj_dir = dir.join("trajectories");
    fs::create_dir_all(&traj_dir).map_err(BenchError::io(&traj_dir))?;
    let mut csvs = Vec::new();
    for set in &sets {
        for t in &set.trajectories {
            let path = traj_dir.join(format!("{}_{}.csv", set.label, t.index));
            write_csv(&path, t)?;
            csvs.push(path);
        }
    }
    let svg = dir.join(TRAJECTORY_SVG);
    fs::write(&svg, render(&sets, &built)).map_err(BenchError::io(&svg))?;
    Ok(TrajectoryOutput { svg, csvs, sets, warnings })
}
