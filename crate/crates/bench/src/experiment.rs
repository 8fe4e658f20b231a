//! Grid runner: tune, sample and diagnose every (kernel, temperature, delta) cell.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use gthmc::diagnostics::{ess_report, EssReport, TrueMoments};
use gthmc::metrics::TemperedMetric;
use gthmc::samplers::{
    chain_seed, run_chain, ChainRecord, ChainRng, ChainState, Chmc, DirectionPolicy, Hmc, Kernel, Mmala, Nuts,
    VltChmc,
};
use gthmc::tuning::{alternate_tune, esjd_pathlength_search, TuneConfig};
use rand::SeedableRng;

use crate::config::{BuiltTarget, ExperimentConfig, KernelSpec, TemperedOptions};
use crate::error::{BenchError, Result};

/// Failure rate above which a cell is flagged.
pub const FAILURE_WARNING: f64 = 0.5;

pub const RESULTS_FILE: &str = "results.csv";

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub kernel: String,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub gamma: Option<f64>,
    pub delta: f64,
    pub statistic: String,
    pub min_ess_per_100: f64,
    pub min_ess_per_budget: f64,
    pub grad_evals: u64,
    pub epsilon: f64,
    pub tau: Option<f64>,
    pub accept_rate: f64,
    pub failure_rate: f64,
}

pub const RESULT_COLUMNS: [&str; 12] = [
    "kernel",
    "T",
    "gamma",
    "delta",
    "statistic",
    "min_ess_per_100",
    "min_ess_per_budget",
    "grad_evals",
    "epsilon",
    "tau",
    "accept_rate",
    "failure_rate",
];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Family {
    Nuts { max_depth: usize, step: Option<f64> },
    Hmc { step: Option<f64>, tau: Option<f64> },
    Ithmc,
    Dthmc { gamma: f64 },
    Mmala { step: Option<f64> },
}

/// A single grid cell.
#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub kernel: String,
    pub temperature: f64,
    pub gamma: Option<f64>,
    pub delta: f64,
    family: Family,
    direction: Option<Vec<f64>>,
    random_direction: bool,
    tempered: TemperedOptions,
}

/// Expands the kernel list into cells, in config order.
pub fn expand_grid(kernels: &[KernelSpec]) -> Vec<Cell> {
    let mut cells = Vec::new();
    let base = |kernel: &str, label: String, t: f64, gamma, delta, family| Cell {
        label,
        kernel: kernel.to_string(),
        temperature: t,
        gamma,
        delta,
        family,
        direction: None,
        random_direction: false,
        tempered: TemperedOptions::default(),
    };
    for k in kernels {
        match k {
            KernelSpec::Nuts { deltas, max_depth, step_size } => {
                for &d in deltas {
                    let f = Family::Nuts { max_depth: *max_depth, step: *step_size };
                    cells.push(base("nuts", format!("nuts_d{d}"), 1.0, None, d, f));
                }
            }
            KernelSpec::Hmc { deltas, step_size, path_length } => {
                for &d in deltas {
                    let f = Family::Hmc { step: *step_size, tau: *path_length };
                    cells.push(base("hmc", format!("hmc_d{d}"), 1.0, None, d, f));
                }
            }
            KernelSpec::Ithmc { temperatures, tempered } => {
                for &t in temperatures {
                    let mut c = base("ithmc", format!("ithmc_T{t}"), t, None, tempered.delta, Family::Ithmc);
                    c.tempered = tempered.clone();
                    cells.push(c);
                }
            }
            KernelSpec::Dthmc { temperatures, gamma, direction, random_direction, tempered } => {
                for &t in temperatures {
                    let f = Family::Dthmc { gamma: *gamma };
                    let label = format!("dthmc_g{gamma}_T{t}");
                    let mut c = base("dthmc", label, t, Some(*gamma), tempered.delta, f);
                    c.direction = direction.clone();
                    c.random_direction = *random_direction;
                    c.tempered = tempered.clone();
                    cells.push(c);
                }
            }
            KernelSpec::Mmala { temperatures, delta, step_size } => {
                for &t in temperatures {
                    let f = Family::Mmala { step: *step_size };
                    cells.push(base("mmala", format!("mmala_T{t}"), t, None, *delta, f));
                }
            }
        }
    }
    cells
}

/// Outcome of one cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub rows: Vec<ResultRow>,
    pub chain: ChainRecord,
    pub epsilon: f64,
    pub tau: Option<f64>,
}

const INITIAL_STEP: f64 = 0.1;

impl Cell {
    fn metric(&self, built: &BuiltTarget) -> Result<TemperedMetric> {
        let t = built.target.clone();
        Ok(match self.family {
            Family::Dthmc { gamma } => {
                let u = self.direction.clone().unwrap_or_else(|| built.axis.clone());
                TemperedMetric::directional(t, self.temperature, gamma, u)?
            }
            _ => TemperedMetric::isometric(t, self.temperature)?,
        })
    }

    fn policy(&self) -> DirectionPolicy {
        if self.random_direction {
            DirectionPolicy::RandomPerIteration
        } else {
            DirectionPolicy::Fixed
        }
    }

    /// Builds the kernel with its initial step size and path length, and
    /// returns which of the two are fixed by the config.
    fn kernel(&self, built: &BuiltTarget, tau0: f64) -> Result<(Box<dyn Kernel>, bool, bool)> {
        let t = built.target.clone();
        Ok(match self.family {
            Family::Nuts { max_depth, step } => {
                let k = Nuts::new(t, step.unwrap_or(INITIAL_STEP)).with_max_depth(max_depth);
                (Box::new(k), step.is_some(), true)
            }
            Family::Hmc { step, tau } => {
                let k = Hmc::with_path_length(t, step.unwrap_or(INITIAL_STEP), tau.unwrap_or(tau0));
                (Box::new(k), step.is_some(), tau.is_some())
            }
            Family::Mmala { step } => {
                let k = Mmala::new(self.metric(built)?, step.unwrap_or(INITIAL_STEP));
                (Box::new(k), step.is_some(), true)
            }
            Family::Ithmc | Family::Dthmc { .. } => {
                let o = &self.tempered;
                let eps = o.step_size.unwrap_or(INITIAL_STEP);
                let tau = o.path_length.unwrap_or(tau0);
                let m = self.metric(built)?;
                let k: Box<dyn Kernel> = if o.fixed_length {
                    Box::new(Chmc::with_path_length(m, eps, tau).with_direction_policy(self.policy()))
                } else {
                    Box::new(
                        VltChmc::new(m, eps, tau)
                            .with_direction_policy(self.policy())
                            .with_max_steps(o.max_steps)
                            .with_verification(0),
                    )
                };
                (k, o.step_size.is_some(), o.path_length.is_some())
            }
        })
    }

    pub fn run(&self, cfg: &ExperimentConfig, built: &BuiltTarget, seed: u64) -> Result<CellResult> {
        let grid = cfg.tuning.grid();
        let (mut kernel, eps_fixed, tau_fixed) = self.kernel(built, grid[0])?;
        let mut state = ChainState::new(built.target.as_ref(), built.init.clone())?;
        let has_path = kernel.path_length().is_some();
        let search = has_path && !tau_fixed;
        let tune_seed = chain_seed(seed, 0);
        if eps_fixed {
            if search {
                esjd_pathlength_search(kernel.as_mut(), &state, &grid, cfg.tuning.pilot_iters, tune_seed)?;
            }
        } else {
            let tc = TuneConfig {
                rounds: cfg.tuning.rounds,
                adapt_iters: cfg.tuning.adapt_iters,
                delta: self.delta,
                tau_grid: if search { grid.clone() } else { Vec::new() },
                pilot_iters: cfg.tuning.pilot_iters,
            };
            alternate_tune(kernel.as_mut(), &mut state, &tc, tune_seed)?;
        }
        let mut rng = ChainRng::seed_from_u64(chain_seed(seed, 1));
        for _ in 0..cfg.burn_in {
            kernel.transition(&mut state, &mut rng);
        }
        let chain = run_chain(kernel.as_mut(), &mut state, cfg.n_samples - cfg.burn_in, &mut rng, seed);
        let epsilon = kernel.step_size();
        let tau = kernel.path_length();
        let moments = TrueMoments { means: built.means.clone(), variances: built.variances.clone() };
        let mut rows = vec![self.row("coordinate-wise", &ess_report(&chain, &moments, cfg.gradient_budget)?, &chain, epsilon, tau)];
        if let Some(radial) = &built.radial {
            let rep = EssReport::from_statistics(&chain, std::slice::from_ref(radial), cfg.gradient_budget)?;
            rows.push(self.row("radial", &rep, &chain, epsilon, tau));
        }
        Ok(CellResult { cell: self.clone(), rows, chain, epsilon, tau })
    }

    fn row(&self, statistic: &str, rep: &EssReport, chain: &ChainRecord, epsilon: f64, tau: Option<f64>) -> ResultRow {
        ResultRow {
            kernel: self.kernel.clone(),
            temperature: self.temperature,
            gamma: self.gamma,
            delta: self.delta,
            statistic: statistic.to_string(),
            min_ess_per_100: rep.ess_per_100_samples,
            min_ess_per_budget: rep.ess_per_gradient_budget,
            grad_evals: chain.grad_eval_total,
            epsilon,
            tau,
            accept_rate: chain.accept_rate(),
            failure_rate: chain.failure_rate(),
        }
    }
}

/// Files written by a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub results: PathBuf,
    pub chains: Vec<PathBuf>,
    pub rows: Vec<ResultRow>,
    pub warnings: Vec<String>,
}

/// Runs every cell on the rayon pool and writes the results table and chains.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let built = cfg.target.build()?;
    let cells = expand_grid(&cfg.kernels);
    let results: Vec<Result<CellResult>> = cells
        .par_iter()
        .enumerate()
        .map(|(i, c)| c.run(cfg, &built, chain_seed(cfg.seed, i as u64)))
        .collect();
    let results: Vec<CellResult> = results.into_iter().collect::<Result<_>>()?;

    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(BenchError::io(&dir))?;
    let rows: Vec<ResultRow> = results.iter().flat_map(|r| r.rows.clone()).collect();
    let results_path = dir.join(RESULTS_FILE);
    write_results(&results_path, &rows)?;

    let mut chains = Vec::new();
    if cfg.write_chains {
        let chain_dir = dir.join("chains");
        fs::create_dir_all(&chain_dir).map_err(BenchError::io(&chain_dir))?;
        for r in &results {
            let path = chain_dir.join(format!("{}.csv", r.cell.label));
            write_chain(&path, &r.chain)?;
            chains.push(path);
        }
    }
    let warnings = results
        .iter()
        .filter(|r| r.chain.failure_rate() > FAILURE_WARNING)
        .map(|r| format!("{}: step-failure rate {:.3} exceeds {FAILURE_WARNING}", r.cell.label, r.chain.failure_rate()))
        .collect();
    Ok(RunOutput { results: results_path, chains, rows, warnings })
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(BenchError::io(path))?;
    Ok(())
}

/// Chain file columns: `iteration, theta1..thetad, accepted, accept_stat, energy`.
pub fn write_chain(path: &Path, chain: &ChainRecord) -> Result<()> {
    let d = chain.samples.first().map_or(0, |s| s.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=d).map(|j| format!("theta{j}")));
    header.extend(["accepted", "accept_stat", "energy"].map(String::from));
    w.write_record(&header)?;
    for (i, s) in chain.samples.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(s.iter().map(|x| x.to_string()));
        rec.push(u8::from(chain.accept_flags[i]).to_string());
        rec.push(chain.accept_stats[i].to_string());
        rec.push(chain.energies[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(BenchError::io(path))?;
    Ok(())
}
