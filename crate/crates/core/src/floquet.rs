//! Floquet analysis of the controlled delay system about an uncontrolled
//! periodic orbit.
//!
//! The period map of the closed loop linearized about `(phi*, u = 0)` is
//! discretized by running the same delay stepper as the simulator on a
//! linear plant: each column of the operator is the history after one
//! period, started from a unit history vector. The state is the sampled
//! `(phi, phi_dot)` over `[-2T, 0]` on `2M + 1` nodes, plus the reference
//! trace over `[-T, 0]` when `R < 1`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::continuation::Scaling;
use crate::delay::{ControlConfig, DelayStepper, Plant};
use crate::eig::dominant_eigenvalue;
use crate::error::{Error, Result};
use crate::experiment::SimSettings;
use crate::history::{HistoryNode, HistorySegment};
use crate::model::PendulumParams;
use crate::oracle::{solve_orbit_at_phase, OracleBranch, OracleSettings};
use crate::orbit::PeriodicOrbit;

/// The plant linearized about a periodic orbit, with an optional
/// inhomogeneous term for a unit change of the amplitude `p`.
#[derive(Debug, Clone)]
pub struct LinearizedPlant {
    params: PendulumParams,
    half: f64,
    a_phi: Vec<f64>,
    a_p: Vec<f64>,
    pub forcing_gain: f64,
}

impl LinearizedPlant {
    /// Coefficients tabulated at the half-steps of a mesh with `mesh` steps
    /// per period.
    pub fn new(params: &PendulumParams, orbit: &PeriodicOrbit, mesh: usize) -> Self {
        let period = params.period();
        let half = 0.5 * period / mesh as f64;
        let w = params.omega;
        let (a_phi, a_p) = (0..2 * mesh)
            .map(|k| {
                let t = k as f64 * half;
                let (phi, _) = orbit.eval(t);
                let (s_wt, _) = (w * t).sin_cos();
                let (s_arg, c_arg) = (phi + w * t).sin_cos();
                let forcing = params.gravity + w * w * orbit.p * s_wt;
                (-forcing * c_arg / params.length, -w * w * s_wt * s_arg / params.length)
            })
            .unzip();
        LinearizedPlant {
            params: *params,
            half,
            a_phi,
            a_p,
            forcing_gain: 0.0,
        }
    }

    #[inline]
    fn index(&self, t: f64) -> usize {
        let k = (t / self.half).round() as i64;
        k.rem_euclid(self.a_phi.len() as i64) as usize
    }
}

impl Plant for LinearizedPlant {
    fn params(&self) -> &PendulumParams {
        &self.params
    }

    #[inline]
    fn accel(&self, t: f64, phi: f64, phi_dot: f64, torque: f64) -> f64 {
        let k = self.index(t);
        self.a_phi[k] * phi - self.params.damping_rate() * phi_dot
            + torque / self.params.inertia()
            + self.forcing_gain * self.a_p[k]
    }
}

impl<P: Plant> Plant for &P {
    fn params(&self) -> &PendulumParams {
        (*self).params()
    }

    #[inline]
    fn accel(&self, t: f64, phi: f64, phi_dot: f64, torque: f64) -> f64 {
        (*self).accel(t, phi, phi_dot, torque)
    }
}

/// Discretized period map of the linearized closed loop.
#[derive(Debug, Clone)]
pub struct MonodromyDiscretization {
    pub mesh: usize,
    pub relaxed: bool,
    pub operator: DMatrix<f64>,
}

impl MonodromyDiscretization {
    pub fn size(&self) -> usize {
        self.operator.nrows()
    }
}

/// Length of the discretized state.
pub fn state_len(mesh: usize, relaxed: bool) -> usize {
    2 * (2 * mesh + 1) + if relaxed { 2 * (mesh + 1) } else { 0 }
}

fn seed_history(state: &[f64], mesh: usize, dt: f64, relaxed: bool) -> Result<HistorySegment> {
    let m = mesh as i64;
    let base = 2 * (2 * mesh + 1);
    let nodes = (0..=2 * mesh)
        .map(|i| {
            let mut node = HistoryNode::new(state[2 * i], state[2 * i + 1]);
            if relaxed && i >= mesh {
                let j = i - mesh;
                node.tilde = state[base + 2 * j];
                node.tilde_dot = state[base + 2 * j + 1];
            }
            node
        })
        .collect();
    HistorySegment::new(dt, -2 * m, nodes)
}

fn read_state(history: &HistorySegment, mesh: usize, relaxed: bool, out: &mut [f64]) {
    let last = history.last_index();
    let first = last - 2 * mesh as i64;
    let base = 2 * (2 * mesh + 1);
    for i in 0..=2 * mesh {
        let node = history.node(first + i as i64).expect("history spans 2T");
        out[2 * i] = node.phi;
        out[2 * i + 1] = node.phi_dot;
        if relaxed && i >= mesh {
            let j = i - mesh;
            out[base + 2 * j] = node.tilde;
            out[base + 2 * j + 1] = node.tilde_dot;
        }
    }
}

fn linear_control(template: &ControlConfig, gain: f64, reference: f64, period: f64) -> ControlConfig {
    let mut c = template.with_gain(gain);
    c.reference = vec![0.0; 2 * c.projection_order + 1];
    c.set_scalar_reference(reference, period);
    c
}

/// One period of the linear closed loop from `state`.
fn propagate(plant: &LinearizedPlant, control: &ControlConfig, mesh: usize, state: &[f64]) -> Result<Vec<f64>> {
    let relaxed = control.relaxation < 1.0;
    let dt = plant.params.period() / mesh as f64;
    let hist = seed_history(state, mesh, dt, relaxed)?;
    let mut stepper = DelayStepper::new(plant, control, mesh, hist)?;
    for _ in 0..mesh {
        stepper.step()?;
    }
    let mut out = vec![0.0; state.len()];
    read_state(stepper.history(), mesh, relaxed, &mut out);
    Ok(out)
}

/// Period map of the closed loop with gain and structure from `config`,
/// linearized about `orbit`.
pub fn monodromy_dde(params: &PendulumParams, orbit: &PeriodicOrbit, config: &ControlConfig, mesh: usize) -> Result<MonodromyDiscretization> {
    let plant = LinearizedPlant::new(params, orbit, mesh);
    monodromy_with(&plant, config, mesh)
}

fn monodromy_with(plant: &LinearizedPlant, config: &ControlConfig, mesh: usize) -> Result<MonodromyDiscretization> {
    let control = linear_control(config, config.gain, 0.0, plant.params.period());
    control.validate()?;
    let relaxed = control.relaxation < 1.0;
    let n = state_len(mesh, relaxed);
    let mut operator = DMatrix::zeros(n, n);
    let mut seed = vec![0.0; n];
    for c in 0..n {
        seed[c] = 1.0;
        let col = propagate(plant, &control, mesh, &seed)?;
        seed[c] = 0.0;
        operator.set_column(c, &DVector::from_vec(col));
    }
    Ok(MonodromyDiscretization {
        mesh,
        relaxed,
        operator,
    })
}

/// Eigenvalue of largest modulus of the discretized period map.
pub fn dominant_multiplier(disc: &MonodromyDiscretization) -> Result<Complex64> {
    dominant_eigenvalue(&disc.operator).ok_or(Error::NoConvergence {
        iterations: 0,
        residual: f64::NAN,
    })
}

/// Linearized sensitivities of the asymptotic average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct M1Sensitivity {
    pub dm1_dp: f64,
    pub dm1_dphi0: f64,
}

/// `dM1/dp` and `dM1/dphi0` from the steady response `(I - A) x = b` to a
/// constant unit input; `None` when `I - A` is singular.
pub fn m1_sensitivity(plant: &LinearizedPlant, config: &ControlConfig, disc: &MonodromyDiscretization) -> Result<Option<M1Sensitivity>> {
    let mesh = disc.mesh;
    let n = disc.size();
    let zero = vec![0.0; n];
    let period = plant.params.period();
    let b_phi = propagate(plant, &linear_control(config, config.gain, 1.0, period), mesh, &zero)?;
    let mut forced = plant.clone();
    forced.forcing_gain = 1.0;
    let b_p = propagate(&forced, &linear_control(config, config.gain, 0.0, period), mesh, &zero)?;
    let lhs = DMatrix::identity(n, n) - &disc.operator;
    let lu = lhs.lu();
    let (Some(x_phi), Some(x_p)) = (lu.solve(&DVector::from_vec(b_phi)), lu.solve(&DVector::from_vec(b_p))) else {
        return Ok(None);
    };
    // trapezoid mean of phi over the last period, nodes -M..=0
    let mean = |x: &DVector<f64>| {
        let mut s = 0.5 * (x[2 * mesh] + x[4 * mesh]);
        for i in (mesh + 1)..(2 * mesh) {
            s += x[2 * i];
        }
        s / mesh as f64
    };
    let out = M1Sensitivity {
        dm1_dp: mean(&x_p),
        dm1_dphi0: mean(&x_phi),
    };
    if !out.dm1_dp.is_finite() || !out.dm1_dphi0.is_finite() {
        return Ok(None);
    }
    Ok(Some(out))
}

/// How the first Jacobian row is chosen in the condition chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TangentPolicy {
    /// Unit vector orthogonal to the linearized second row.
    Exact,
    /// Tangent of the uncontrolled orbit family in `(p, avg_phase)`.
    Oracle,
}

/// 2-norm quantities of `J = [t; row2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianCondition {
    pub cond: f64,
    pub inv_norm: f64,
    pub row2_norm: f64,
}

pub fn jacobian_condition(tangent: [f64; 2], row2: [f64; 2]) -> JacobianCondition {
    // 2x2 singular values from the Frobenius norm and the determinant; the
    // small one via det / s_max keeps full relative accuracy
    let frob2 = tangent[0].powi(2) + tangent[1].powi(2) + row2[0].powi(2) + row2[1].powi(2);
    let det = (tangent[0] * row2[1] - tangent[1] * row2[0]).abs();
    let disc = ((frob2 - 2.0 * det) * (frob2 + 2.0 * det)).max(0.0).sqrt();
    let smax = (0.5 * (frob2 + disc)).sqrt();
    let smin = if smax > 0.0 { det / smax } else { 0.0 };
    JacobianCondition {
        cond: if smin > 0.0 { smax / smin } else { f64::INFINITY },
        inv_norm: if smin > 0.0 { 1.0 / smin } else { f64::INFINITY },
        row2_norm: row2[0].hypot(row2[1]),
    }
}

/// Scaled second row `[dM1/dp * sigma_p / sigma_phi, dM1/dphi0 - 1]`.
pub fn scaled_row2(s: &M1Sensitivity, scaling: &Scaling) -> [f64; 2] {
    [s.dm1_dp * scaling.sigma_p / scaling.sigma_phi, s.dm1_dphi0 - 1.0]
}

pub fn exact_tangent(row2: [f64; 2]) -> [f64; 2] {
    let n = row2[0].hypot(row2[1]);
    [-row2[1] / n, row2[0] / n]
}

/// Scaled unit tangent of the orbit family given `dp / d(avg_phase)`.
pub fn family_tangent(dp_dphase: f64, scaling: &Scaling) -> [f64; 2] {
    let t = [dp_dphase / scaling.sigma_p, 1.0 / scaling.sigma_phi];
    let n = t[0].hypot(t[1]);
    [t[0] / n, t[1] / n]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CellFlag {
    Ok,
    /// Singular `I - A` or `J`: the condition number is infinite.
    Singular,
    /// Cell could not be evaluated.
    Lost,
}

impl std::fmt::Display for CellFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CellFlag::Ok => "ok",
            CellFlag::Singular => "singular",
            CellFlag::Lost => "lost",
        })
    }
}

/// Values over `(phase, G)`, stored row-major by phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartGrid {
    pub g_values: Vec<f64>,
    pub phase_values: Vec<f64>,
    pub values: Vec<f64>,
    pub flags: Vec<CellFlag>,
    /// `||J^-1||_2` per cell (condition charts only).
    pub inv_norms: Vec<f64>,
    /// `||row2||_2` per cell (condition charts only).
    pub row2_norms: Vec<f64>,
}

impl ChartGrid {
    pub fn rows(&self) -> usize {
        self.phase_values.len()
    }

    pub fn cols(&self) -> usize {
        self.g_values.len()
    }

    #[inline]
    pub fn idx(&self, i_phase: usize, j_g: usize) -> usize {
        i_phase * self.cols() + j_g
    }

    pub fn get(&self, i_phase: usize, j_g: usize) -> f64 {
        self.values[self.idx(i_phase, j_g)]
    }

    pub fn flag(&self, i_phase: usize, j_g: usize) -> CellFlag {
        self.flags[self.idx(i_phase, j_g)]
    }

    pub fn median(&self) -> f64 {
        let mut v: Vec<f64> = self.values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

/// Uniform axis including both ends.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartAxes {
    pub g_min: f64,
    pub g_max: f64,
    pub g_cells: usize,
    /// Phase axis is `center +/- phase_half_width`.
    pub phase_half_width: f64,
    pub phase_cells: usize,
    pub mesh: usize,
}

impl ChartAxes {
    pub fn g_values(&self) -> Vec<f64> {
        linspace(self.g_min, self.g_max, self.g_cells)
    }

    pub fn phase_values(&self, center: f64) -> Vec<f64> {
        linspace(center - self.phase_half_width, center + self.phase_half_width, self.phase_cells)
    }
}

/// One row of a chart: an orbit at a prescribed average phase and the local
/// slope of the family.
#[derive(Debug, Clone)]
pub struct ChartRow {
    pub orbit: PeriodicOrbit,
    pub dp_dphase: f64,
}

/// Orbits at the requested phases, seeded from the nearest branch orbit.
pub fn chart_rows(params: &PendulumParams, branch: &OracleBranch, phases: &[f64], settings: &OracleSettings) -> Result<Vec<ChartRow>> {
    let eps = 1e-5;
    phases
        .par_iter()
        .map(|&phase| {
            let seed = branch.nearest_by_phase(phase).ok_or(Error::NoFold)?;
            let guess = [seed.phi[0] + (phase - seed.avg_phase), seed.phi_dot[0]];
            let orbit = solve_orbit_at_phase(params, phase, guess, seed.p, settings)?;
            let g = [orbit.phi[0], orbit.phi_dot[0]];
            let hi = solve_orbit_at_phase(params, phase + eps, g, orbit.p, settings)?;
            let lo = solve_orbit_at_phase(params, phase - eps, g, orbit.p, settings)?;
            Ok(ChartRow {
                dp_dphase: (hi.p - lo.p) / (2.0 * eps),
                orbit,
            })
        })
        .collect()
}

/// Everything computed for one chart cell.
#[derive(Debug, Clone, Copy)]
pub struct CellResult {
    pub multiplier: Option<Complex64>,
    pub condition: Option<JacobianCondition>,
}

pub fn analyze_cell(
    params: &PendulumParams,
    row: &ChartRow,
    template: &ControlConfig,
    gain: f64,
    mesh: usize,
    condition: Option<(&Scaling, TangentPolicy)>,
) -> CellResult {
    let plant = LinearizedPlant::new(params, &row.orbit, mesh);
    let config = template.with_gain(gain);
    let Ok(disc) = monodromy_with(&plant, &config, mesh) else {
        return CellResult {
            multiplier: None,
            condition: None,
        };
    };
    let multiplier = dominant_multiplier(&disc).ok();
    let condition = condition.map(|(scaling, policy)| match m1_sensitivity(&plant, &config, &disc) {
        Ok(Some(s)) => {
            let row2 = scaled_row2(&s, scaling);
            let t = match policy {
                TangentPolicy::Exact => exact_tangent(row2),
                TangentPolicy::Oracle => family_tangent(row.dp_dphase, scaling),
            };
            jacobian_condition(t, row2)
        }
        _ => JacobianCondition {
            cond: f64::INFINITY,
            inv_norm: f64::INFINITY,
            row2_norm: f64::NAN,
        },
    });
    CellResult { multiplier, condition }
}

fn cells(
    params: &PendulumParams,
    rows: &[ChartRow],
    g_values: &[f64],
    template: &ControlConfig,
    mesh: usize,
    condition: Option<(&Scaling, TangentPolicy)>,
) -> Vec<CellResult> {
    let n = rows.len() * g_values.len();
    (0..n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / g_values.len(), k % g_values.len());
            analyze_cell(params, &rows[i], template, g_values[j], mesh, condition)
        })
        .collect()
}

fn stability_grid(rows: &[ChartRow], g_values: &[f64], results: &[CellResult]) -> ChartGrid {
    let (values, flags) = results
        .iter()
        .map(|r| match r.multiplier {
            Some(mu) if mu.norm().is_finite() => (mu.norm(), CellFlag::Ok),
            _ => (f64::NAN, CellFlag::Lost),
        })
        .unzip();
    ChartGrid {
        g_values: g_values.to_vec(),
        phase_values: rows.iter().map(|r| r.orbit.avg_phase).collect(),
        values,
        flags,
        inv_norms: vec![],
        row2_norms: vec![],
    }
}

fn condition_grid(rows: &[ChartRow], g_values: &[f64], results: &[CellResult]) -> ChartGrid {
    let mut grid = ChartGrid {
        g_values: g_values.to_vec(),
        phase_values: rows.iter().map(|r| r.orbit.avg_phase).collect(),
        values: Vec::with_capacity(results.len()),
        flags: Vec::with_capacity(results.len()),
        inv_norms: Vec::with_capacity(results.len()),
        row2_norms: Vec::with_capacity(results.len()),
    };
    for r in results {
        let (v, f, inv, row2) = match r.condition {
            Some(c) if c.cond.is_finite() => (c.cond, CellFlag::Ok, c.inv_norm, c.row2_norm),
            Some(c) => (f64::INFINITY, CellFlag::Singular, c.inv_norm, c.row2_norm),
            None => (f64::NAN, CellFlag::Lost, f64::NAN, f64::NAN),
        };
        grid.values.push(v);
        grid.flags.push(f);
        grid.inv_norms.push(inv);
        grid.row2_norms.push(row2);
    }
    grid
}

/// Dominant `|mu|` over `(phase, G)`; cells are evaluated in parallel and
/// stored in grid order.
pub fn stability_chart(params: &PendulumParams, rows: &[ChartRow], g_values: &[f64], template: &ControlConfig, mesh: usize) -> ChartGrid {
    stability_grid(rows, g_values, &cells(params, rows, g_values, template, mesh, None))
}

/// `cond_2(J)` over `(phase, G)` with `J` from the linearized response.
pub fn condition_chart(
    params: &PendulumParams,
    rows: &[ChartRow],
    g_values: &[f64],
    template: &ControlConfig,
    mesh: usize,
    scaling: &Scaling,
    policy: TangentPolicy,
) -> ChartGrid {
    condition_grid(rows, g_values, &cells(params, rows, g_values, template, mesh, Some((scaling, policy))))
}

/// Both charts from one pass over the grid.
pub fn stability_and_condition(
    params: &PendulumParams,
    rows: &[ChartRow],
    g_values: &[f64],
    template: &ControlConfig,
    mesh: usize,
    scaling: &Scaling,
    policy: TangentPolicy,
) -> (ChartGrid, ChartGrid) {
    let results = cells(params, rows, g_values, template, mesh, Some((scaling, policy)));
    (stability_grid(rows, g_values, &results), condition_grid(rows, g_values, &results))
}

/// Phase where column `j` crosses `|mu| = 1` from unstable (below) to stable
/// (above), by linear interpolation; the highest such crossing.
pub fn unit_crossing_phase(grid: &ChartGrid, j: usize) -> Option<f64> {
    (0..grid.rows().saturating_sub(1)).rev().find_map(|i| {
        let (a, b) = (grid.get(i, j), grid.get(i + 1, j));
        (a >= 1.0 && b < 1.0).then(|| {
            let s = (a - 1.0) / (a - b);
            grid.phase_values[i] + s * (grid.phase_values[i + 1] - grid.phase_values[i])
        })
    })
}

/// Cells with a 4-neighbour on the other side of `|mu| = 1`.
pub fn contour_cells(grid: &ChartGrid) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let side = |i: usize, j: usize| grid.get(i, j) >= 1.0;
    for i in 0..grid.rows() {
        for j in 0..grid.cols() {
            let s = side(i, j);
            let mut diff = false;
            if i > 0 {
                diff |= side(i - 1, j) != s;
            }
            if i + 1 < grid.rows() {
                diff |= side(i + 1, j) != s;
            }
            if j > 0 {
                diff |= side(i, j - 1) != s;
            }
            if j + 1 < grid.cols() {
                diff |= side(i, j + 1) != s;
            }
            if diff {
                out.push((i, j));
            }
        }
    }
    out
}

/// Smallest `G` on the axis such that every cell at that or larger `G` is
/// stable.
pub fn uniform_gain(grid: &ChartGrid) -> Option<f64> {
    let stable_col = |j: usize| (0..grid.rows()).all(|i| grid.flag(i, j) == CellFlag::Ok && grid.get(i, j) < 1.0);
    let mut first = None;
    for j in (0..grid.cols()).rev() {
        if stable_col(j) {
            first = Some(j);
        } else {
            break;
        }
    }
    first.map(|j| grid.g_values[j])
}

/// Per-period contraction of a small kick of the latest history node in the
/// nonlinear closed loop, measured against an unkicked twin run.
///
/// Each period after `skip` gives a snapshot of the differences in `phi` and
/// `phi_dot / omega` at `SNAPSHOT_POINTS` fixed points of the period; the
/// one-period map between successive snapshots is fitted in the subspace the
/// snapshots span (dynamic mode decomposition), which resolves a real
/// multiplier next to a complex pair of similar modulus. The result is the
/// largest eigenvalue modulus of that map.
///
/// The window stops early once the difference leaves `[FLOOR, CEILING]`:
/// above, the response is no longer linear; below, roundoff dominates (the
/// running window integrals carry a neutral direction that accumulates it at
/// around 1e-11 rad). A response that grows to the ceiling is measured again
/// from a kick 1000 times smaller.
pub fn nonlinear_contraction(
    params: &PendulumParams,
    orbit: &PeriodicOrbit,
    config: &ControlConfig,
    settings: &SimSettings,
    amplitude: f64,
    skip: usize,
    periods: usize,
) -> Result<f64> {
    let (mut snaps, grew) = kicked_differences(params, orbit, config, settings, amplitude, skip, periods)?;
    if grew {
        let small = (amplitude * 1e-3).max(10.0 * CONTRACTION_FLOOR);
        snaps = kicked_differences(params, orbit, config, settings, small, skip, periods)?.0;
    }
    if snaps.len() < 4 {
        return Err(Error::InvalidParameter("contraction window too short".into()));
    }
    dmd_radius(&snaps)
}

const CONTRACTION_FLOOR: f64 = 1e-9;

/// Kicked-minus-twin snapshots per period after `skip`; the flag tells
/// whether the window ended on the ceiling.
fn kicked_differences(
    params: &PendulumParams,
    orbit: &PeriodicOrbit,
    config: &ControlConfig,
    settings: &SimSettings,
    amplitude: f64,
    skip: usize,
    periods: usize,
) -> Result<(Vec<DVector<f64>>, bool)> {
    use crate::delay::Pendulum;
    use crate::experiment::orbit_history;
    const CEILING: f64 = 1e-3;
    const SNAPSHOT_POINTS: usize = 8;
    let m = settings.steps_per_period;
    let hist = orbit_history(orbit, m)?;
    let mut nodes: Vec<HistoryNode> = hist.nodes().map(|(_, n)| *n).collect();
    nodes.last_mut().expect("nonempty").phi += amplitude;
    let kicked = HistorySegment::new(hist.dt(), hist.first_index(), nodes)?;
    let mut control = config.clone();
    control.set_scalar_reference(orbit.avg_phase, params.period());
    let plant = Pendulum { params: *params, p: orbit.p };
    let mut base = DelayStepper::new(plant, &control, m, hist)?.with_blowup_bound(settings.blowup_bound);
    let mut pert = DelayStepper::new(plant, &control, m, kicked)?.with_blowup_bound(settings.blowup_bound);
    let stride = (m / SNAPSHOT_POINTS).max(1);
    let mut snaps = Vec::with_capacity(periods);
    for k in 0..(skip + periods) {
        let mut s = Vec::with_capacity(2 * SNAPSHOT_POINTS);
        for i in 0..m {
            let a = base.step()?;
            let b = pert.step()?;
            if i % stride == 0 {
                s.push(b.phi - a.phi);
                s.push((b.phi_dot - a.phi_dot) / params.omega);
            }
        }
        let s = DVector::from_vec(s);
        let size = s.amax();
        if k >= skip {
            snaps.push(s);
            if size < CONTRACTION_FLOOR {
                break;
            }
        }
        if size > CEILING {
            return Ok((snaps, true));
        }
    }
    Ok((snaps, false))
}

/// Spectral radius of the least-squares map `s[k] -> s[k+1]` restricted to
/// the span of the snapshots. Each pair is normalised by `|s[k]|` so early,
/// large snapshots do not drown the late ones.
fn dmd_radius(snaps: &[DVector<f64>]) -> Result<f64> {
    const RANK_TOL: f64 = 1e-3;
    let d = snaps[0].len();
    let n = snaps.len() - 1;
    let mut x = DMatrix::zeros(d, n);
    let mut y = DMatrix::zeros(d, n);
    for k in 0..n {
        let w = 1.0 / snaps[k].norm();
        x.set_column(k, &(&snaps[k] * w));
        y.set_column(k, &(&snaps[k + 1] * w));
    }
    let svd = x.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let top = svd.singular_values.max();
    let r = svd.singular_values.iter().filter(|s| **s > RANK_TOL * top).count().max(1);
    let ur = u.columns(0, r);
    let mut reduced = ur.transpose() * &y * vt.rows(0, r).transpose();
    for j in 0..r {
        let inv = 1.0 / svd.singular_values[j];
        reduced.column_mut(j).scale_mut(inv);
    }
    let eig = crate::eig::eigenvalues(&reduced).ok_or(Error::NoConvergence {
        iterations: 0,
        residual: f64::NAN,
    })?;
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{seed_rotation, OracleSettings};

    fn setup() -> (PendulumParams, PeriodicOrbit) {
        let pr = PendulumParams::default();
        let orbit = seed_rotation(&pr, 0.02, &OracleSettings::default(), 200).unwrap();
        (pr, orbit)
    }

    #[test]
    fn zero_gain_recovers_uncontrolled_multipliers() {
        let (pr, orbit) = setup();
        let config = ControlConfig::scalar(0.0, 0.0, pr.period());
        let disc = monodromy_dde(&pr, &orbit, &config, 64).unwrap();
        assert_eq!(disc.size(), state_len(64, false));
        let mut eig = crate::eig::eigenvalues(&disc.operator).unwrap();
        eig.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        let ode = crate::oracle::monodromy_ode(&pr, &orbit, 64).unwrap().1;
        for mu in ode {
            assert!(eig[..2].iter().any(|e| (e - mu).norm() < 1e-6), "{mu} not in {:?}", &eig[..2]);
        }
        assert!(eig[2].norm() < 1e-8);
    }

    #[test]
    fn relaxed_operator_carries_the_trace() {
        let (pr, orbit) = setup();
        let mut config = ControlConfig::scalar(0.5, 0.0, pr.period());
        config.relaxation = 0.7;
        let disc = monodromy_dde(&pr, &orbit, &config, 16).unwrap();
        assert!(disc.relaxed);
        assert_eq!(disc.size(), 2 * 33 + 2 * 17);
    }

    #[test]
    fn exact_tangent_gives_unit_inverse_norm() {
        for row2 in [[3.0, -4.0], [1.0, 0.0], [0.2, 7.5]] {
            let c = jacobian_condition(exact_tangent(row2), row2);
            assert!((c.inv_norm - 1.0).abs() < 1e-12);
            assert!((c.cond - c.row2_norm).abs() < 1e-12 * c.row2_norm);
        }
        let c = jacobian_condition(exact_tangent([0.1, 0.2]), [0.1, 0.2]);
        assert!(c.inv_norm > 1.0);
        // badly conditioned but orthogonal rows stay exact
        let c = jacobian_condition(exact_tangent([3e8, -1.0]), [3e8, -1.0]);
        assert!((c.inv_norm - 1.0).abs() < 1e-14);
        // agrees with a general SVD on a generic matrix
        let (t, r) = ([0.6, 0.8], [2.0, -0.5]);
        let sv = nalgebra::Matrix2::new(t[0], t[1], r[0], r[1]).singular_values();
        let c = jacobian_condition(t, r);
        assert!((c.cond - sv.max() / sv.min()).abs() < 1e-12 * c.cond);
    }

    #[test]
    fn sensitivity_matches_nonlinear_m1() {
        use crate::experiment::evaluate_m1;
        let (pr, orbit) = setup();
        let config = ControlConfig::scalar(1.0, orbit.avg_phase, pr.period());
        let plant = LinearizedPlant::new(&pr, &orbit, 128);
        let disc = monodromy_with(&plant, &config, 128).unwrap();
        let s = m1_sensitivity(&plant, &config, &disc).unwrap().unwrap();
        let settings = SimSettings {
            eps_trans: 1e-10,
            max_periods: 2000,
            ..SimSettings::default()
        };
        let m1 = |p: f64, phi0: f64| {
            let mut c = config.clone();
            c.set_scalar_reference(phi0, pr.period());
            let (r, _) = evaluate_m1(&pr, p, &c, &settings, None).unwrap();
            r.value
        };
        let d = 1e-4;
        let fd_phi = (m1(orbit.p, orbit.avg_phase + d) - m1(orbit.p, orbit.avg_phase - d)) / (2.0 * d);
        let dp = 1e-5;
        let fd_p = (m1(orbit.p + dp, orbit.avg_phase) - m1(orbit.p - dp, orbit.avg_phase)) / (2.0 * dp);
        assert!((fd_phi - s.dm1_dphi0).abs() < 2e-3 * fd_phi.abs().max(1.0), "{fd_phi} vs {}", s.dm1_dphi0);
        assert!((fd_p - s.dm1_dp).abs() < 2e-3 * fd_p.abs(), "{fd_p} vs {}", s.dm1_dp);
    }

    #[test]
    fn contour_helpers_on_synthetic_grid() {
        // |mu| = 1 + (c_j - phase) with crossing c_j = 0.5 - 0.1 j
        let g = linspace(0.0, 1.0, 6);
        let ph = linspace(0.0, 1.0, 11);
        let mut values = vec![];
        for &p in &ph {
            for j in 0..g.len() {
                values.push(1.0 + (0.5 - 0.1 * j as f64) - p);
            }
        }
        let grid = ChartGrid {
            g_values: g.clone(),
            flags: vec![CellFlag::Ok; values.len()],
            values,
            phase_values: ph,
            inv_norms: vec![],
            row2_norms: vec![],
        };
        assert!((unit_crossing_phase(&grid, 0).unwrap() - 0.5).abs() < 1e-12);
        assert!((unit_crossing_phase(&grid, 3).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(uniform_gain(&grid), None);
        assert!(!contour_cells(&grid).is_empty());
        assert_eq!(linspace(0.0, 1.0, 1), vec![0.5]);
    }
}
