#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;

use mfcontrol::cli::RunConfig;
use mfcontrol::ControlProblem;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

pub fn load(name: &str) -> RunConfig {
    RunConfig::load(&config_path(name)).expect("bundled config parses")
}

/// Bundled config on the coarse grid with `η_* = ω_* = tolerance`.
pub fn coarse(name: &str, tolerance: f64) -> (RunConfig, ControlProblem) {
    let mut config = load(name);
    config.alm.eta_star = tolerance;
    config.alm.omega_star = tolerance;
    let problem = config.problem().unwrap();
    (config, problem)
}
