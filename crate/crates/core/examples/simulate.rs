//! Closed-loop run of the default pendulum from a warm-up history.

use cbc_pendulum::config::RunConfig;
use cbc_pendulum::experiment::{run_periods, warmup_history};
use cbc_pendulum::pipeline;

fn main() -> cbc_pendulum::Result<()> {
    let cfg = RunConfig::default();
    let s = cfg.simulate;
    let history = warmup_history(&cfg.model, s.p, s.phi0, cfg.sim.steps_per_period)?;
    let control = pipeline::control(&cfg, s.phi0);
    let (records, outcome) = run_periods(history, &cfg.model, s.p, &control, &cfg.sim, 20);
    outcome?;
    let m = cfg.sim.steps_per_period;
    for period in records.chunks(m).step_by(4) {
        let u_sup = period.iter().map(|r| r.u.abs()).fold(0.0, f64::max);
        let mean = period.iter().map(|r| r.phi).sum::<f64>() / period.len() as f64;
        println!("t = {:7.3} s  mean phi = {mean:.6} rad  sup|u| = {u_sup:.3e} rad", period[0].t);
    }
    Ok(())
}
