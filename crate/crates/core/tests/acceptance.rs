//! End-to-end acceptance run on the default model. Prints one PASS/FAIL line
//! per criterion and fails if any criterion fails.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cbc_pendulum::config::RunConfig;
use cbc_pendulum::continuation::{Branch, PointFlag};
use cbc_pendulum::delay::{ptdf_update, ptdf_update_scalar, ControlConfig, DelayStepper, Pendulum};
use cbc_pendulum::experiment::warmup_history;
use cbc_pendulum::floquet::{
    analyze_cell, contour_cells, nonlinear_contraction, stability_and_condition, uniform_gain, unit_crossing_phase,
    CellFlag, ChartGrid, ChartRow, TangentPolicy,
};
use cbc_pendulum::oracle::monodromy_ode;
use cbc_pendulum::pipeline::{self, OracleRun, OrbitSeed};
use cbc_pendulum::spectral::{project, reconstruct, SpectralCoeffs};

const FOLD_MU_TOL: f64 = 1e-2;
const MIN_UNSTABLE_POINTS: usize = 10;
const RESIDUAL_TOL: f64 = 5e-3;
const ORACLE_SIGMAS: f64 = 3.0;
const U_SUP_FACTOR: f64 = 10.0;
const TIGHTENING: f64 = 10.0;
const MIN_U_REDUCTION: f64 = 5.0;
const FOLD_PHASE_TOL: f64 = 2e-2;
const NONLINEAR_CHECK_CELLS: usize = 5;
const INV_NORM_TOL: f64 = 1e-10;
const COND_SPIKE_FACTOR: f64 = 10.0;
const CONTOUR_BAND: i64 = 2;
const MESH_CELLS: usize = 10;
const MESH_TOL: f64 = 1e-3;
const CONTRACTION_TOL: f64 = 0.05;
const KICK: f64 = 1e-5;
const DET_TOL: f64 = 1e-6;
const ROUND_TRIP_TOL: f64 = 1e-10;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(n: usize, title: &str, limit: Duration, elapsed: Duration, mut out: Outcome) -> bool {
    if elapsed > limit {
        out.passed = false;
        out.detail.push_str(&format!("; runtime {elapsed:.1?} over {limit:?}"));
    }
    println!(
        "criterion {n} {} {title}: {} [{elapsed:.1?}]",
        if out.passed { "PASS" } else { "FAIL" },
        out.detail
    );
    out.passed
}

fn accepted(branch: &Branch) -> Vec<&cbc_pendulum::continuation::BranchPoint> {
    branch.points.iter().filter(|p| p.flag != PointFlag::Lost).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion1(run: &OracleRun) -> Outcome {
    let i = run.fold.index;
    let interior = i > 0 && i + 1 < run.branch.len();
    let dist = (run.fold.orbit.dominant_multiplier() - 1.0).norm();
    Outcome {
        passed: interior && dist <= FOLD_MU_TOL,
        detail: format!(
            "{} orbits, interior minimum at {i}, p0 = {:.6e} m, avg phase {:.5}, |mu - 1| = {dist:.2e}",
            run.branch.len(),
            run.fold.p0,
            run.fold.orbit.avg_phase
        ),
    }
}

fn criterion2(branch: &Branch) -> Outcome {
    let acc = accepted(branch);
    let unstable = branch.unstable_count();
    let worst = acc.iter().map(|p| p.residual_norm).fold(0.0, f64::max);
    Outcome {
        passed: branch.fold_index.is_some() && unstable >= MIN_UNSTABLE_POINTS && worst <= RESIDUAL_TOL,
        detail: format!(
            "{} accepted, fold at {:?}, {unstable} past the fold, max scaled residual {worst:.2e}",
            acc.len(),
            branch.fold_index
        ),
    }
}

fn criterion3(cfg: &RunConfig, run: &OracleRun, branch: &Branch) -> Outcome {
    let seeds: Vec<OrbitSeed> = run.branch.orbits.iter().map(OrbitSeed::from).collect();
    let mut worst = (0.0f64, 0.0f64);
    let mut unmatched = 0;
    let acc = accepted(branch);
    for pt in &acc {
        match pipeline::match_oracle(cfg, &seeds, pt.p, pt.phi0) {
            Ok(m) => {
                worst.0 = worst.0.max(m.dp_scaled.abs());
                worst.1 = worst.1.max(m.dphase_scaled.abs());
            }
            Err(_) => unmatched += 1,
        }
    }
    Outcome {
        passed: unmatched == 0 && worst.0 <= ORACLE_SIGMAS && worst.1 <= ORACLE_SIGMAS,
        detail: format!(
            "{} points, max |dp|/sigma_p {:.2e}, max |dphase|/sigma_phi {:.2e}, unmatched {unmatched}",
            acc.len(),
            worst.0,
            worst.1
        ),
    }
}

fn criterion4(cfg: &RunConfig, branch: &Branch) -> Outcome {
    let bound = U_SUP_FACTOR * cfg.sim.eps_trans;
    let u: Vec<f64> = accepted(branch).iter().map(|p| p.m1.u_sup).collect();
    let worst = u.iter().copied().fold(0.0, f64::max);
    let base = median(u);
    // tighter Newton tolerance; the transient tolerance that bounds the
    // precision of each M1 evaluation is tightened with it
    let mut tight = cfg.clone();
    tight.continuation.newton_tol /= TIGHTENING;
    tight.sim.eps_trans /= TIGHTENING;
    let tight_branch = pipeline::run_experiment(&tight);
    let (tight_median, tight_note) = match &tight_branch {
        Ok(b) => (
            median(accepted(b).iter().map(|p| p.m1.u_sup).collect()),
            format!("{} points", accepted(b).len()),
        ),
        Err(e) => (f64::NAN, format!("failed: {e}")),
    };
    // the same with only the Newton tolerance tightened, for the record
    let mut newton_only = cfg.clone();
    newton_only.continuation.newton_tol /= TIGHTENING;
    let literal = match pipeline::run_experiment(&newton_only) {
        Ok(b) => {
            let acc = accepted(&b);
            format!(
                "{} points ({} past the fold), median {:.2e}",
                acc.len(),
                b.unstable_count(),
                median(acc.iter().map(|p| p.m1.u_sup).collect())
            )
        }
        Err(e) => format!("failed: {e}"),
    };
    let ratio = base / tight_median;
    Outcome {
        passed: worst <= bound && ratio >= MIN_U_REDUCTION,
        detail: format!(
            "max sup|u| {worst:.2e} (bound {bound:.1e}); median {base:.2e} -> {tight_median:.2e} ({tight_note}), \
             reduction {ratio:.1}x; Newton-only tightening: {literal}"
        ),
    }
}

fn chebyshev_to_contour(contour: &[(usize, usize)], i: usize, j: usize) -> i64 {
    contour
        .iter()
        .map(|&(a, b)| (a as i64 - i as i64).abs().max((b as i64 - j as i64).abs()))
        .min()
        .unwrap_or(i64::MAX)
}

fn criterion5(
    cfg: &RunConfig,
    run: &OracleRun,
    rows: &[ChartRow],
    stab: &ChartGrid,
    rng: &mut ChaCha8Rng,
) -> Outcome {
    let fold_phase = run.fold.orbit.avg_phase;
    let crossing0 = unit_crossing_phase(stab, 0);
    let fold_ok = crossing0.is_some_and(|c| (c - fold_phase).abs() <= FOLD_PHASE_TOL);
    let crossings: Vec<(f64, f64)> = (0..stab.cols())
        .map_while(|j| unit_crossing_phase(stab, j).map(|c| (stab.g_values[j], c)))
        .collect();
    let monotone = crossings.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    let moved = crossings.len() >= 2 && crossings.last().unwrap().1 < crossings[0].1;
    let lost = stab.flags.iter().filter(|f| **f != CellFlag::Ok).count();
    let g_star = uniform_gain(stab);
    // nonlinear re-check of cells at or above G*
    let mut nonlinear = Vec::new();
    if let Some(g_star) = g_star {
        let cols: Vec<usize> = (0..stab.cols()).filter(|&j| stab.g_values[j] >= g_star).collect();
        for _ in 0..NONLINEAR_CHECK_CELLS {
            let i = rng.gen_range(0..stab.rows());
            let j = *cols.choose(rng).unwrap();
            let control = pipeline::control(cfg, rows[i].orbit.avg_phase).with_gain(stab.g_values[j]);
            let rate = nonlinear_contraction(&cfg.model, &rows[i].orbit, &control, &cfg.sim, KICK, 3, 60);
            nonlinear.push(rate.map_or(f64::NAN, |r| r));
        }
    }
    let nonlinear_ok = !nonlinear.is_empty() && nonlinear.iter().all(|r| *r < 1.0);
    Outcome {
        passed: fold_ok && monotone && moved && g_star.is_some() && nonlinear_ok && lost == 0,
        detail: format!(
            "G=0 crossing {:?} vs fold {fold_phase:.5}; contour phases {:.4} -> {:.4} over G {:.3}..{:.3} (monotone {monotone}); \
             G* = {g_star:?}; nonlinear contraction at {} cells >= G*: max {:.3}; lost cells {lost}",
            crossing0.map(|c| (c * 1e5).round() / 1e5),
            crossings.first().map_or(f64::NAN, |c| c.1),
            crossings.last().map_or(f64::NAN, |c| c.1),
            crossings.first().map_or(f64::NAN, |c| c.0),
            crossings.last().map_or(f64::NAN, |c| c.0),
            nonlinear.len(),
            nonlinear.iter().copied().fold(f64::NAN, f64::max)
        ),
    }
}

fn criterion6(stab: &ChartGrid, cond: &ChartGrid) -> Outcome {
    let mut inv_checked = 0;
    let mut inv_worst = 0.0f64;
    for k in 0..cond.values.len() {
        if cond.flags[k] == CellFlag::Ok && cond.row2_norms[k] >= 1.0 {
            inv_checked += 1;
            inv_worst = inv_worst.max((cond.inv_norms[k] - 1.0).abs());
        }
    }
    let med = cond.median();
    let contour = contour_cells(stab);
    let mut spikes = 0;
    let mut far = Vec::new();
    for i in 0..cond.rows() {
        for j in 0..cond.cols() {
            if cond.get(i, j) > COND_SPIKE_FACTOR * med {
                spikes += 1;
                let d = chebyshev_to_contour(&contour, i, j);
                if d > CONTOUR_BAND {
                    far.push(format!(
                        "(G {:.3}, phase {:.4}, cond {:.3e}, {d} cells)",
                        cond.g_values[j],
                        cond.phase_values[i],
                        cond.get(i, j)
                    ));
                }
            }
        }
    }
    Outcome {
        passed: inv_checked > 0 && inv_worst <= INV_NORM_TOL && far.is_empty(),
        detail: format!(
            "||J^-1|| = 1 within {inv_worst:.1e} on {inv_checked} cells; median cond {med:.3e}, {spikes} cells above \
             {COND_SPIKE_FACTOR}x median, {} farther than {CONTOUR_BAND} cells from the |mu| = 1 contour {}",
            far.len(),
            far.join(" ")
        ),
    }
}

fn same_multiplier(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm().min((a - b.conj()).norm())
}

fn criterion7(cfg: &RunConfig, run: &OracleRun, rows: &[ChartRow], stab: &ChartGrid, rng: &mut ChaCha8Rng) -> Outcome {
    let template = pipeline::control(cfg, 0.0);
    let mesh = cfg.charts.axes.mesh;
    let cells: Vec<(usize, usize)> = (0..stab.rows()).flat_map(|i| (0..stab.cols()).map(move |j| (i, j))).collect();
    let mut mesh_worst = 0.0f64;
    for &(i, j) in cells.choose_multiple(rng, MESH_CELLS) {
        let g = stab.g_values[j];
        let a = analyze_cell(&cfg.model, &rows[i], &template, g, mesh, None).multiplier;
        let b = analyze_cell(&cfg.model, &rows[i], &template, g, 2 * mesh, None).multiplier;
        mesh_worst = mesh_worst.max(match (a, b) {
            (Some(a), Some(b)) => same_multiplier(a, b),
            _ => f64::INFINITY,
        });
    }
    let mut contraction_worst = 0.0f64;
    let mut worst_cell = String::new();
    for &(i, j) in cells.choose_multiple(rng, MESH_CELLS) {
        let mu = stab.get(i, j);
        let control = template.with_gain(stab.g_values[j]);
        let rate = nonlinear_contraction(&cfg.model, &rows[i].orbit, &control, &cfg.sim, KICK, 3, 60)
            .unwrap_or(f64::INFINITY);
        let rel = (rate - mu).abs() / mu;
        if rel >= contraction_worst {
            contraction_worst = rel;
            worst_cell = format!("|mu| {mu:.4} vs {rate:.4} at G {:.3}, phase {:.4}", stab.g_values[j], stab.phase_values[i]);
        }
    }
    let expected = cfg.model.liouville_determinant();
    let mut det_worst = 0.0f64;
    for orbit in [&run.start, &run.fold.orbit] {
        let (m, _) = monodromy_ode(&cfg.model, orbit, cfg.oracle.oracle.steps_per_period).unwrap();
        det_worst = det_worst.max((m.determinant() - expected).abs());
    }
    Outcome {
        passed: mesh_worst <= MESH_TOL && contraction_worst <= CONTRACTION_TOL && det_worst <= DET_TOL,
        detail: format!(
            "mesh {mesh} vs {}: max |dmu| {mesh_worst:.2e}; linear vs nonlinear contraction at {MESH_CELLS} cells: max rel. diff \
             {contraction_worst:.2e} ({worst_cell}); det(monodromy) vs exp(-bT/ml^2): {det_worst:.2e}",
            2 * mesh
        ),
    }
}

fn criterion8(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Outcome {
    let period = cfg.model.period();
    let mut round_trip = 0.0f64;
    for order in 0..=4usize {
        let n = 64;
        let coeffs: Vec<f64> = (0..2 * order + 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = SpectralCoeffs::from_vec(coeffs, period).unwrap();
        let samples: Vec<f64> = (0..n).map(|i| reconstruct(&x, i as f64 * period / n as f64)).collect();
        let back = project(&samples, period, order).unwrap().scale(period);
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            round_trip = round_trip.max((a - b).abs());
        }
        for i in 0..n {
            let t = (i as f64 + 0.37) * period / n as f64;
            round_trip = round_trip.max((reconstruct(&back, t) - reconstruct(&x, t)).abs());
        }
    }
    // both update paths at every node of a closed-loop run
    let m = 128;
    let control = ControlConfig::scalar(1.0, 4.0, period);
    let hist = warmup_history(&cfg.model, 0.02, 4.0, m).unwrap();
    let plant = Pendulum { params: cfg.model, p: 0.02 };
    let mut stepper = DelayStepper::new(plant, &control, m, hist).unwrap();
    let mut compared = 0;
    let mut mismatched = 0;
    for _ in 0..3 * m {
        stepper.step().unwrap();
        let h = stepper.history();
        let t = h.last_index() as f64 * h.dt();
        for r in [1.0, 0.5] {
            let c = ControlConfig {
                relaxation: r,
                ..control.clone()
            };
            let a = ptdf_update(h, &c, t, period).unwrap();
            let b = ptdf_update_scalar(h, r, t, period).unwrap();
            compared += 1;
            if a.to_bits() != b.to_bits() {
                mismatched += 1;
            }
        }
    }
    Outcome {
        passed: round_trip <= ROUND_TRIP_TOL && mismatched == 0 && compared > 0,
        detail: format!(
            "round trip max error {round_trip:.1e}; N=0 general vs scalar update: {mismatched} of {compared} differ bitwise"
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let cfg = RunConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut results = Vec::new();

    let t = Instant::now();
    let run = pipeline::run_oracle(&cfg).expect("oracle branch");
    let c1 = criterion1(&run);
    results.push(report(1, "fold reproduction", Duration::from_secs(60), t.elapsed(), c1));

    let t = Instant::now();
    let branch = pipeline::run_experiment(&cfg).expect("experiment branch");
    let c2 = criterion2(&branch);
    results.push(report(2, "experiment-side continuation", Duration::from_secs(600), t.elapsed(), c2));

    let t = Instant::now();
    let c3 = criterion3(&cfg, &run, &branch);
    results.push(report(3, "oracle equivalence", Duration::from_secs(120), t.elapsed(), c3));

    let t = Instant::now();
    let c4 = criterion4(&cfg, &branch);
    results.push(report(4, "noninvasiveness", Duration::from_secs(900), t.elapsed(), c4));

    let t = Instant::now();
    let rows = pipeline::rows_for_charts(&cfg, &run).expect("chart orbits");
    let template = pipeline::control(&cfg, 0.0);
    let (stab, cond) = stability_and_condition(
        &cfg.model,
        &rows,
        &cfg.charts.axes.g_values(),
        &template,
        cfg.charts.axes.mesh,
        &cfg.continuation.scaling,
        TangentPolicy::Exact,
    );
    let chart_time = t.elapsed();
    let t = Instant::now();
    let c5 = criterion5(&cfg, &run, &rows, &stab, &mut rng);
    results.push(report(5, "uniform stability chart", Duration::from_secs(1200), chart_time + t.elapsed(), c5));
    let c6 = criterion6(&stab, &cond);
    results.push(report(6, "conditioning", Duration::from_secs(1200), chart_time, c6));

    let t = Instant::now();
    let c7 = criterion7(&cfg, &run, &rows, &stab, &mut rng);
    results.push(report(7, "numerical self-consistency", Duration::from_secs(300), t.elapsed(), c7));

    let t = Instant::now();
    let c8 = criterion8(&cfg, &mut rng);
    results.push(report(8, "spectral identities", Duration::from_secs(1), t.elapsed(), c8));

    let failed: Vec<usize> = (1..=8).filter(|n| !results[n - 1]).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
