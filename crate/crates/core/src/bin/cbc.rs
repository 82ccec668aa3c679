use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cbc_pendulum::calibration::calibrate;
use cbc_pendulum::config::{RunConfig, SimStart};
use cbc_pendulum::experiment::{orbit_history, run_periods, warmup_history};
use cbc_pendulum::floquet::{condition_chart, stability_chart, ChartGrid};
use cbc_pendulum::io::{self, ChartFormat, Metadata};
use cbc_pendulum::oracle::solve_orbit_at_phase;
use cbc_pendulum::pipeline::{self, FoldSummary, OrbitSeed, PointRecord};
use cbc_pendulum::{Error, Result};

#[derive(Parser)]
#[command(name = "cbc", version, about = "Control-based continuation of pendulum rotations")]
struct Cli {
    /// Configuration file (`section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for chart cells and Jacobian probes.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Chart layout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Wide)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Wide,
    Long,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop trajectory.
    Simulate,
    /// Branch traced on the simulated experiment.
    ContinueExperiment,
    /// Orbit family and fold from the shooting oracle.
    ContinueBvp,
    /// Dominant multiplier over (gain, phase).
    StabilityChart,
    /// Jacobian condition number over (gain, phase).
    ConditionChart,
    /// Choose model constants that put the fold in range.
    Calibrate,
    /// Check the experiment branch against the oracle.
    Verify,
}

struct Run {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
    format: ChartFormat,
}

impl Run {
    fn meta(&self, kind: &str) -> Metadata {
        Metadata::new(kind, &self.hash)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let msg = e.to_string().replace('"', "'");
            eprintln!("error kind={} message=\"{msg}\"", e.kind());
            ExitCode::from(if matches!(e, Error::Config { .. }) { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.display().to_string();
    }
    let out = PathBuf::from(&cfg.output_dir);
    cfg.write_resolved(&out)?;
    let run = Run {
        hash: cfg.hash(),
        cfg,
        out,
        format: match cli.format {
            Format::Wide => ChartFormat::Wide,
            Format::Long => ChartFormat::Long,
        },
    };
    match cli.command {
        Command::Simulate => simulate(&run),
        Command::ContinueExperiment => continue_experiment(&run).map(|_| true),
        Command::ContinueBvp => continue_bvp(&run).map(|_| true),
        Command::StabilityChart => chart(&run, false).map(|_| true),
        Command::ConditionChart => chart(&run, true).map(|_| true),
        Command::Calibrate => run_calibrate(&run).map(|_| true),
        Command::Verify => verify(&run),
    }
}

fn simulate(run: &Run) -> Result<bool> {
    let cfg = &run.cfg;
    let s = cfg.simulate;
    let m = cfg.sim.steps_per_period;
    let (history, p) = match s.start {
        SimStart::Warmup => (warmup_history(&cfg.model, s.p, s.phi0, m)?, s.p),
        SimStart::Orbit => {
            let oracle = pipeline::run_oracle(cfg)?;
            let seed = oracle.branch.nearest_by_phase(s.phi0).ok_or(Error::NoFold)?;
            let guess = [seed.phi[0] + (s.phi0 - seed.avg_phase), seed.phi_dot[0]];
            let orbit = solve_orbit_at_phase(&cfg.model, s.phi0, guess, seed.p, &cfg.oracle.oracle)?;
            (orbit_history(&orbit, m)?, orbit.p)
        }
    };
    let control = pipeline::control(cfg, s.phi0);
    let (records, outcome) = run_periods(history, &cfg.model, p, &control, &cfg.sim, s.periods);
    let meta = run.meta("trajectory").with("p", p).with("phi0", s.phi0);
    let path = run.path("trajectory.csv");
    io::write_file(&path, |w| io::write_trajectory(w, &meta, &records))?;
    outcome?;
    println!("wrote {} ({} steps)", path.display(), records.len());
    Ok(true)
}

fn continue_bvp(run: &Run) -> Result<pipeline::OracleRun> {
    let oracle = pipeline::run_oracle(&run.cfg)?;
    let fold = FoldSummary::from(&oracle.fold);
    io::write_file(&run.path("oracle_branch.csv"), |w| {
        io::write_oracle_branch(w, &run.meta("oracle-branch"), &oracle.branch)
    })?;
    io::write_file(&run.path("fold.json"), |w| io::write_json(w, &fold))?;
    for (name, orbit) in [("start_orbit", &oracle.start), ("fold_orbit", &oracle.fold.orbit)] {
        let meta = run.meta("orbit").with("p", orbit.p).with("avg_phase", orbit.avg_phase);
        io::write_file(&run.path(&format!("{name}.csv")), |w| io::write_orbit(w, &meta, orbit))?;
        io::write_file(&run.path(&format!("{name}.json")), |w| io::write_json(w, &orbit.summary()))?;
    }
    println!(
        "oracle branch: {} orbits, fold p0 = {:.6e} m at avg phase {:.5} rad, |mu - 1| = {:.2e}",
        oracle.branch.len(),
        fold.p0,
        fold.avg_phase,
        fold.multiplier_distance_from_one()
    );
    Ok(oracle)
}

fn continue_experiment(run: &Run) -> Result<()> {
    let branch = pipeline::run_experiment(&run.cfg)?;
    let meta = run.meta("experiment-branch").with("gain", run.cfg.control.gain);
    io::write_file(&run.path("branch.csv"), |w| io::write_branch(w, &meta, &branch))?;
    println!(
        "experiment branch: {} points, fold at {:?}, {} past the fold",
        branch.points.len(),
        branch.fold_index,
        branch.unstable_count()
    );
    Ok(())
}

fn chart(run: &Run, condition: bool) -> Result<ChartGrid> {
    let cfg = &run.cfg;
    let oracle = pipeline::run_oracle(cfg)?;
    let rows = pipeline::rows_for_charts(cfg, &oracle)?;
    let g = cfg.charts.axes.g_values();
    let template = pipeline::control(cfg, 0.0);
    let mesh = cfg.charts.axes.mesh;
    let (name, grid) = if condition {
        let grid = condition_chart(&cfg.model, &rows, &g, &template, mesh, &cfg.continuation.scaling, cfg.charts.tangent);
        ("condition", grid)
    } else {
        ("stability", stability_chart(&cfg.model, &rows, &g, &template, mesh))
    };
    let meta = run.meta(&format!("{name}-chart")).with("mesh", mesh);
    io::write_file(&run.path(&format!("{name}.csv")), |w| io::write_chart(w, &meta, &grid, run.format))?;
    let axes = io::ChartAxesJson {
        quantity: if condition { "cond2_J" } else { "abs_dominant_multiplier" },
        g_values: &grid.g_values,
        phase_values: &grid.phase_values,
        mesh,
        fold_phase: oracle.fold.orbit.avg_phase,
        config_sha256: &run.hash,
    };
    io::write_file(&run.path(&format!("{name}_axes.json")), |w| io::write_json(w, &axes))?;
    println!("{name} chart: {}x{} cells, median {:.4e}", grid.rows(), grid.cols(), grid.median());
    Ok(grid)
}

fn run_calibrate(run: &Run) -> Result<()> {
    let cal = calibrate(&run.cfg.model, &run.cfg.calibrate)?;
    let mut cfg = run.cfg.clone();
    cfg.model = cal.params;
    let path = run.path("defaults.cfg");
    io::write_file(&path, |w| {
        writeln!(w, "# calibrated: fold p0 = {} m at avg phase {} rad", cal.p0, cal.fold_phase)?;
        writeln!(w, "# fold multiplier {}", cal.fold_multiplier)?;
        writeln!(w, "# config_sha256: {}", run.hash)?;
        w.write_all(cfg.render().as_bytes())?;
        Ok(())
    })?;
    println!(
        "calibrated length {} m, damping {} N m s: p0 = {:.6e} m",
        cal.params.length, cal.params.damping, cal.p0
    );
    Ok(())
}

fn load_or<T>(path: &Path, compute: impl FnOnce() -> Result<T>, read: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    if path.exists() {
        read(path)
    } else {
        compute()
    }
}

fn verify(run: &Run) -> Result<bool> {
    let cfg = &run.cfg;
    let oracle_path = run.path("oracle_branch.csv");
    let fold_path = run.path("fold.json");
    if !(oracle_path.exists() && fold_path.exists()) {
        continue_bvp(run)?;
    }
    let fold: FoldSummary = serde_json::from_str(&std::fs::read_to_string(&fold_path)?)
        .map_err(|e| Error::Io(format!("{}: {e}", fold_path.display())))?;
    let table = io::read_table_file(&oracle_path)?;
    let (p, ph, a, b) = (
        table.f64_column("p")?,
        table.f64_column("avg_phase")?,
        table.f64_column("phi_start")?,
        table.f64_column("phi_dot_start")?,
    );
    let seeds: Vec<OrbitSeed> = (0..p.len())
        .map(|i| OrbitSeed {
            p: p[i],
            avg_phase: ph[i],
            start: [a[i], b[i]],
        })
        .collect();
    let branch_path = run.path("branch.csv");
    let points = load_or(
        &branch_path,
        || pipeline::run_experiment(cfg).map(|b| pipeline::point_records(&b)),
        |path| {
            let t = io::read_table_file(path)?;
            let (p, phi0, res, u) = (t.f64_column("p")?, t.f64_column("phi0")?, t.f64_column("residual")?, t.f64_column("u_sup")?);
            let flags = t.str_column("flag")?;
            (0..p.len())
                .map(|i| {
                    Ok(PointRecord {
                        p: p[i],
                        phi0: phi0[i],
                        residual: res[i],
                        u_sup: u[i],
                        flag: flags[i].parse()?,
                    })
                })
                .collect()
        },
    )?;
    let checks = pipeline::verify(cfg, &fold, &seeds, &points);
    for c in &checks {
        println!("{c}");
    }
    Ok(checks.iter().all(|c| c.passed))
}
