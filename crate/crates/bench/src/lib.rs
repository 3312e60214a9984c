//! Fixtures shared by the benchmarks.

use dre_core::coupling_regen::{attach_bernoulli, CoupledTrajectory, CouplingConfig};
use dre_core::env_field::{make_environment, Environment, EnvironmentSpec};
use dre_core::sde_sim::{simulate_path, SimConfig, Trajectory};

pub const E1: [f64; 2] = [1.0, 0.0];

pub fn field(seed: u64) -> Environment {
    make_environment(EnvironmentSpec::random_field(vec![0.5, 0.0], 0.4, 1.0, 2.0, seed)).unwrap()
}

pub fn constant() -> Environment {
    make_environment(EnvironmentSpec::constant(vec![0.5, 0.0], 1.0)).unwrap()
}

pub fn path(env: &Environment, horizon: f64, seed: u64) -> Trajectory {
    simulate_path(env, &[0.0, 0.0], &SimConfig::new(1.0 / 16.0, horizon, seed).unwrap())
}

pub fn coupled(env: &Environment, horizon: f64, seed: u64) -> CoupledTrajectory {
    let cfg = SimConfig::new(1.0 / 16.0, horizon, seed).unwrap();
    attach_bernoulli(env, &[0.0, 0.0], &cfg, &E1, &CouplingConfig::default()).unwrap()
}
