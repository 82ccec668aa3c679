//! Rotation family from the shooting oracle and its fold.

use cbc_pendulum::config::RunConfig;
use cbc_pendulum::pipeline;

fn main() -> cbc_pendulum::Result<()> {
    let cfg = RunConfig::default();
    let run = pipeline::run_oracle(&cfg)?;
    for o in run.branch.orbits.iter().step_by(6) {
        println!("p = {:.6e} m  avg phase = {:.4} rad  |mu| = {:.6}", o.p, o.avg_phase, o.dominant_multiplier().norm());
    }
    let fold = &run.fold;
    println!(
        "fold: p0 = {:.6e} m at avg phase {:.5} rad, mu = {:.7}",
        fold.p0,
        fold.orbit.avg_phase,
        fold.orbit.dominant_multiplier()
    );
    Ok(())
}
