//! Condition number of the continuation Jacobian over gain and phase.

use cbc_pendulum::config::RunConfig;
use cbc_pendulum::floquet::{condition_chart, TangentPolicy};
use cbc_pendulum::pipeline;

fn main() -> cbc_pendulum::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.charts.axes.g_cells = 6;
    cfg.charts.axes.phase_cells = 7;
    let run = pipeline::run_oracle(&cfg)?;
    let rows = pipeline::rows_for_charts(&cfg, &run)?;
    let grid = condition_chart(
        &cfg.model,
        &rows,
        &cfg.charts.axes.g_values(),
        &pipeline::control(&cfg, 0.0),
        32,
        &cfg.continuation.scaling,
        TangentPolicy::Exact,
    );
    for i in 0..grid.rows() {
        print!("{:8.4}", grid.phase_values[i]);
        for j in 0..grid.cols() {
            print!(" {:10.3e}", grid.get(i, j));
        }
        println!();
    }
    println!("median cond {:.3e}", grid.median());
    Ok(())
}
