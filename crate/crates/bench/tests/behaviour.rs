use std::path::Path;

use gthmc_bench::config::ExperimentConfig;
use gthmc_bench::experiment::run_experiment;
use gthmc_bench::trace::{read_coordinate, sign_changes};
use gthmc_bench::trajectories::simulate;
use tempfile::TempDir;

fn config(text: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_str(text, Path::new(".")).unwrap();
    cfg.output_dir = Some(out.to_path_buf());
    cfg
}

#[test]
fn tempered_chain_hops_between_modes_and_nuts_does_not() {
    let dir = TempDir::new().unwrap();
    let text = r#"
seed = 17
n_samples = 10000
burn_in = 0
[target]
kind = "bimodal"
[tuning]
adapt_iters = 500
[[kernels]]
kind = "nuts"
deltas = [0.7]
[[kernels]]
kind = "dthmc"
temperatures = [20.0]
gamma = 1.0
[kernels.tempered]
step_size = 0.5
path_length = 2.0
"#;
    let cfg = config(text, dir.path());
    let out = run_experiment(&cfg).unwrap();
    let chains = dir.path().join("chains");
    let nuts = sign_changes(&read_coordinate(&chains.join("nuts_d0.7.csv"), 2).unwrap());
    let dthmc = sign_changes(&read_coordinate(&chains.join("dthmc_g1_T20.csv"), 2).unwrap());
    assert!(nuts < 10, "nuts sign changes {nuts}");
    assert!(dthmc >= 50, "dthmc sign changes {dthmc}");
    assert!(out.rows.iter().all(|r| r.failure_rate < 0.5));
}

const TRAJ: &str = r#"
seed = 99
[target]
kind = "bimodal"
axis = "horizontal"
[trajectories]
start = [-4.0, 0.0]
kinetic_energy = 0.8
duration = 3.0
count = 40
markers = 60
step_size = 0.01
[[trajectories.kernels]]
kind = "hmc"
[[trajectories.kernels]]
kind = "dthmc"
temperature = 15.0
gamma = 1.0
direction = [1.0, 0.0]
"#;

#[test]
fn untempered_paths_stay_and_tempered_paths_rush_through_the_valley() {
    let dir = TempDir::new().unwrap();
    let cfg = config(TRAJ, dir.path());
    let spec = cfg.trajectories.clone().unwrap();
    let built = cfg.target.build().unwrap();
    let (sets, warnings) = simulate(&spec, &built, cfg.seed).unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");

    let hmc = &sets[0];
    assert_eq!(hmc.trajectories.len(), 40);
    assert!(hmc.trajectories.iter().all(|t| t.crossed == Some(false)));

    let dthmc = &sets[1];
    let crossing: Vec<_> = dthmc.trajectories.iter().filter(|t| t.crossed == Some(true)).collect();
    assert!(crossing.len() >= 20, "{} crossings", crossing.len());
    // Equal-width strips: the valley around x = 0 and the two mode strips.
    let (mut valley, mut modes) = (0usize, 0usize);
    for t in &crossing {
        for m in &t.markers {
            if m[0].abs() < 1.0 {
                valley += 1;
            }
            if (m[0].abs() - 4.0).abs() < 1.0 {
                modes += 1;
            }
        }
    }
    // Two mode strips against one valley strip.
    let valley_density = valley as f64;
    let mode_density = modes as f64 / 2.0;
    assert!(valley_density < 0.5 * mode_density, "valley {valley}, modes {modes}");
}
