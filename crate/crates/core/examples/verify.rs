//! Experiment branch checked against the oracle family.

use cbc_pendulum::config::RunConfig;
use cbc_pendulum::pipeline::{self, FoldSummary, OrbitSeed};

fn main() -> cbc_pendulum::Result<()> {
    let cfg = RunConfig::default();
    let run = pipeline::run_oracle(&cfg)?;
    let branch = pipeline::run_experiment(&cfg)?;
    let seeds: Vec<OrbitSeed> = run.branch.orbits.iter().map(OrbitSeed::from).collect();
    let checks = pipeline::verify(&cfg, &FoldSummary::from(&run.fold), &seeds, &pipeline::point_records(&branch));
    for c in &checks {
        println!("{c}");
    }
    Ok(())
}
