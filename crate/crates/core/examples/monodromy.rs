//! Floquet multipliers of the fold orbit: open loop (ODE) against the
//! discretized delay operator at zero and unit gain.

use cbc_pendulum::config::RunConfig;
use cbc_pendulum::floquet::{dominant_multiplier, monodromy_dde};
use cbc_pendulum::oracle::monodromy_ode;
use cbc_pendulum::pipeline;

fn main() -> cbc_pendulum::Result<()> {
    let cfg = RunConfig::default();
    let run = pipeline::run_oracle(&cfg)?;
    let orbit = &run.fold.orbit;
    let (m, mu) = monodromy_ode(&cfg.model, orbit, cfg.oracle.oracle.steps_per_period)?;
    println!("ODE multipliers {:.7} {:.7}", mu[0], mu[1]);
    println!("det {:.10} vs exp(-bT/(m l^2)) {:.10}", m.determinant(), cfg.model.liouville_determinant());
    for g in [0.0, 1.0] {
        let control = pipeline::control(&cfg, orbit.avg_phase).with_gain(g);
        let disc = monodromy_dde(&cfg.model, orbit, &control, 64)?;
        println!("G = {g}: {} states, dominant multiplier {:.7}", disc.size(), dominant_multiplier(&disc)?);
    }
    Ok(())
}
