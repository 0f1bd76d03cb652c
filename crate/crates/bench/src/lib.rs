//! Shared fixtures for the criterion benches.

use eosnet::harness::ScenarioSpec;
use eosnet::sensor::{assemble_observation_set, ObservationSet};
use nalgebra::Vector3;
use std::path::Path;

/// The reference scenario shipped with the repository.
pub fn reference_spec() -> ScenarioSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/reference.json");
    ScenarioSpec::load(&path).expect("reference scenario")
}

/// Observation set of the reference scenario for `seed`.
pub fn reference_observations(spec: &ScenarioSpec, seed: u64) -> ObservationSet {
    let sim = eosnet::fusion::simulate(&spec.scenario, seed).expect("simulation");
    assemble_observation_set(sim.measurements, None).expect("observation set")
}

/// `n` unit vectors spread over the sphere on a Fibonacci lattice.
pub fn sphere_directions(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
