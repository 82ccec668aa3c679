//! Coarse chart of the dominant closed-loop multiplier over gain and phase.

use cbc_pendulum::config::RunConfig;
use cbc_pendulum::floquet::{stability_chart, uniform_gain, unit_crossing_phase};
use cbc_pendulum::pipeline;

fn main() -> cbc_pendulum::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.charts.axes.g_cells = 7;
    cfg.charts.axes.phase_cells = 9;
    cfg.charts.axes.mesh = 32;
    let run = pipeline::run_oracle(&cfg)?;
    let rows = pipeline::rows_for_charts(&cfg, &run)?;
    let grid = stability_chart(&cfg.model, &rows, &cfg.charts.axes.g_values(), &pipeline::control(&cfg, 0.0), 32);
    print!("phase \\ G");
    for g in &grid.g_values {
        print!(" {g:7.3}");
    }
    println!();
    for i in 0..grid.rows() {
        print!("{:9.4}", grid.phase_values[i]);
        for j in 0..grid.cols() {
            print!(" {:7.4}", grid.get(i, j));
        }
        println!();
    }
    for j in 0..grid.cols() {
        println!("G = {:.3}: |mu| = 1 at phase {:?}", grid.g_values[j], unit_crossing_phase(&grid, j));
    }
    println!("fold phase {:.4}, uniformly stable from G = {:?}", run.fold.orbit.avg_phase, uniform_gain(&grid));
    Ok(())
}
