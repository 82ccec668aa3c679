//! Continuation through the fold using only closed-loop runs of the
//! simulated experiment.

use cbc_pendulum::config::RunConfig;
use cbc_pendulum::pipeline;

fn main() -> cbc_pendulum::Result<()> {
    let cfg = RunConfig::default();
    let branch = pipeline::run_experiment(&cfg)?;
    for (i, pt) in branch.points.iter().enumerate() {
        println!(
            "{i:3} p = {:.6e} m  phi0 = {:.5} rad  residual = {:.2e}  sup|u| = {:.2e}  {}",
            pt.p, pt.phi0, pt.residual_norm, pt.m1.u_sup, pt.flag
        );
    }
    println!("fold at point {:?}, {} points past it", branch.fold_index, branch.unstable_count());
    Ok(())
}
