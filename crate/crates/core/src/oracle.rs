//! Periodic rotations of the uncontrolled pendulum by single shooting.
//!
//! The shooting map integrates the state together with its variational
//! matrix and parameter sensitivity using the same fixed-step RK4 as the
//! simulator, so Newton Jacobians are exact derivatives of the discrete map.
//! Branches are traced with the functional pseudo-arclength condition
//!
//! ```text
//! (1/T) int_0^T phi_t (phi - phi_old) + phid_t (phid - phid_old) dt + p_t (p - p_old) = h
//! ```
//!
//! discretized with the trapezoid rule on the integrator nodes.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use num_complex::Complex64;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::model::PendulumParams;
use crate::orbit::PeriodicOrbit;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    pub steps_per_period: usize,
    /// Acceptance threshold on the shooting residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            steps_per_period: 512,
            tol: 1e-10,
            max_iter: 30,
        }
    }
}

/// One integration over `[0, T]` with first-order sensitivities.
#[derive(Debug, Clone)]
pub struct Shot {
    pub end: [f64; 2],
    /// `d y(T) / d y(0)`.
    pub monodromy: Matrix2<f64>,
    /// `d y(T) / d p`.
    pub dp: Vector2<f64>,
    /// States at the nodes `0..=n` (only when recorded).
    pub nodes: Vec<[f64; 2]>,
    /// Sensitivity `[d y / d y0 | d y / d p]` at the nodes (only when recorded).
    pub sens: Vec<[[f64; 3]; 2]>,
}

#[inline]
fn augmented_rhs(t: f64, z: &[f64; 8], params: &PendulumParams, p: f64) -> [f64; 8] {
    let wt = params.omega * t;
    let (s_wt, _) = wt.sin_cos();
    let (s_arg, c_arg) = (z[0] + wt).sin_cos();
    let forcing = params.gravity + params.omega * params.omega * p * s_wt;
    let inv = 1.0 / params.length;
    let rate = params.damping_rate();
    let acc = -rate * z[1] - rate * params.omega - forcing * inv * s_arg;
    let a_phi = -forcing * inv * c_arg;
    let a_p = -params.omega * params.omega * s_wt * inv * s_arg;
    [
        z[1],
        acc,
        z[4],
        z[5],
        a_phi * z[2] - rate * z[4],
        a_phi * z[3] - rate * z[5],
        z[7],
        a_phi * z[6] - rate * z[7] + a_p,
    ]
}

#[inline]
fn axpy8(y: &[f64; 8], a: f64, k: &[f64; 8]) -> [f64; 8] {
    let mut out = *y;
    for i in 0..8 {
        out[i] += a * k[i];
    }
    out
}

fn record(z: &[f64; 8]) -> ([f64; 2], [[f64; 3]; 2]) {
    ([z[0], z[1]], [[z[2], z[3], z[6]], [z[4], z[5], z[7]]])
}

/// Integrate one period from `y0` at amplitude `p` with sensitivities.
pub fn shoot(params: &PendulumParams, p: f64, y0: [f64; 2], steps: usize, keep_nodes: bool) -> Result<Shot> {
    let period = params.period();
    let h = period / steps as f64;
    let half = 0.5 * h;
    let mut z = [y0[0], y0[1], 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let mut nodes = Vec::new();
    let mut sens = Vec::new();
    if keep_nodes {
        nodes.reserve(steps + 1);
        sens.reserve(steps + 1);
        let (y, s) = record(&z);
        nodes.push(y);
        sens.push(s);
    }
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = augmented_rhs(t, &z, params, p);
        let k2 = augmented_rhs(t + half, &axpy8(&z, half, &k1), params, p);
        let k3 = augmented_rhs(t + half, &axpy8(&z, half, &k2), params, p);
        let k4 = augmented_rhs(t + h, &axpy8(&z, h, &k3), params, p);
        for i in 0..8 {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !z[0].is_finite() || !z[1].is_finite() {
            return Err(Error::NoConvergence {
                iterations: 0,
                residual: f64::INFINITY,
            });
        }
        if keep_nodes {
            let (y, s) = record(&z);
            nodes.push(y);
            sens.push(s);
        }
    }
    Ok(Shot {
        end: [z[0], z[1]],
        monodromy: Matrix2::new(z[2], z[3], z[4], z[5]),
        dp: Vector2::new(z[6], z[7]),
        nodes,
        sens,
    })
}

/// Boundary mismatch `(phi(T) - phi(0), phi_dot(T) - phi_dot(0))`.
pub fn shoot_residual(params: &PendulumParams, p: f64, init: [f64; 2], steps: usize) -> Result<[f64; 2]> {
    let s = shoot(params, p, init, steps, false)?;
    Ok([s.end[0] - init[0], s.end[1] - init[1]])
}

/// Eigenvalues of a real 2x2 matrix.
pub fn eigenvalues2(m: &Matrix2<f64>) -> [Complex64; 2] {
    let tr = m.trace();
    let det = m.determinant();
    let disc = Complex64::new(0.25 * tr * tr - det, 0.0).sqrt();
    let c = Complex64::new(0.5 * tr, 0.0);
    [c + disc, c - disc]
}

/// Monodromy matrix and multipliers of the uncontrolled orbit.
pub fn monodromy_ode(params: &PendulumParams, orbit: &PeriodicOrbit, steps: usize) -> Result<(Matrix2<f64>, [Complex64; 2])> {
    let s = shoot(params, orbit.p, [orbit.phi[0], orbit.phi_dot[0]], steps, false)?;
    Ok((s.monodromy, eigenvalues2(&s.monodromy)))
}

fn finalize(params: &PendulumParams, p: f64, y0: [f64; 2], shot: &Shot) -> PeriodicOrbit {
    let n = shot.nodes.len() - 1;
    let phi: Vec<f64> = shot.nodes[..n].iter().map(|y| y[0]).collect();
    let phi_dot: Vec<f64> = shot.nodes[..n].iter().map(|y| y[1]).collect();
    let avg_phase = phi.iter().sum::<f64>() / n as f64;
    let residual = ((shot.end[0] - y0[0]).powi(2) + (shot.end[1] - y0[1]).powi(2)).sqrt();
    PeriodicOrbit {
        p,
        period: params.period(),
        phi,
        phi_dot,
        avg_phase,
        multipliers: eigenvalues2(&shot.monodromy),
        monodromy: shot.monodromy,
        residual,
    }
}

/// Newton on the shooting residual at fixed `p`. Returns the orbit and the
/// number of Newton iterations taken.
pub fn solve_orbit_counted(params: &PendulumParams, p: f64, guess: [f64; 2], settings: &OracleSettings) -> Result<(PeriodicOrbit, usize)> {
    let mut y = guess;
    let mut last = f64::INFINITY;
    for iter in 0..=settings.max_iter {
        let shot = shoot(params, p, y, settings.steps_per_period, false)?;
        let r = Vector2::new(shot.end[0] - y[0], shot.end[1] - y[1]);
        last = r.norm();
        if last <= settings.tol {
            let shot = shoot(params, p, y, settings.steps_per_period, true)?;
            return Ok((finalize(params, p, y, &shot), iter));
        }
        let j = shot.monodromy - Matrix2::identity();
        let dx = j
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::SingularJacobian(format!("shooting at p = {p}")))?;
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian(format!("shooting at p = {p}")));
        }
        y[0] -= dx[0];
        y[1] -= dx[1];
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iter,
        residual: last,
    })
}

pub fn solve_orbit(params: &PendulumParams, p: f64, guess: [f64; 2], settings: &OracleSettings) -> Result<PeriodicOrbit> {
    solve_orbit_counted(params, p, guess, settings).map(|(o, _)| o)
}

/// Orbit with prescribed average phase; `p` is an unknown. Well posed through
/// the fold, where the phase still parametrizes the family.
pub fn solve_orbit_at_phase(
    params: &PendulumParams,
    phase: f64,
    guess: [f64; 2],
    p_guess: f64,
    settings: &OracleSettings,
) -> Result<PeriodicOrbit> {
    let n = settings.steps_per_period;
    let mut z = Vector3::new(guess[0], guess[1], p_guess);
    let mut last = f64::INFINITY;
    for _ in 0..=settings.max_iter {
        let y0 = [z[0], z[1]];
        let shot = shoot(params, z[2], y0, n, true)?;
        let avg = shot.nodes[..n].iter().map(|y| y[0]).sum::<f64>() / n as f64;
        let mut davg = [0.0; 3];
        for s in &shot.sens[..n] {
            for k in 0..3 {
                davg[k] += s[0][k] / n as f64;
            }
        }
        let r = Vector3::new(shot.end[0] - y0[0], shot.end[1] - y0[1], avg - phase);
        last = r.norm();
        if last <= settings.tol {
            return Ok(finalize(params, z[2], y0, &shot));
        }
        let m = shot.monodromy;
        let j = Matrix3::new(
            m[(0, 0)] - 1.0,
            m[(0, 1)],
            shot.dp[0],
            m[(1, 0)],
            m[(1, 1)] - 1.0,
            shot.dp[1],
            davg[0],
            davg[1],
            davg[2],
        );
        let dx = j
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::SingularJacobian(format!("phase condition at {phase}")))?;
        z -= dx;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian(format!("phase condition at {phase}")));
        }
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iter,
        residual: last,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvpSettings {
    pub oracle: OracleSettings,
    /// Initial arclength step in the functional norm.
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_points: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// Stop once the average phase leaves this window.
    pub phase_min: f64,
    pub phase_max: f64,
    /// Sign of the initial `p` direction.
    pub initial_direction: f64,
    pub newton_iter: usize,
}

impl Default for BvpSettings {
    fn default() -> Self {
        BvpSettings {
            oracle: OracleSettings::default(),
            h0: 0.05,
            h_min: 1e-5,
            h_max: 0.2,
            max_points: 400,
            p_min: 0.0,
            p_max: 0.05,
            phase_min: f64::NEG_INFINITY,
            phase_max: f64::INFINITY,
            initial_direction: -1.0,
            newton_iter: 8,
        }
    }
}

/// Orbits along a branch with their unit tangents in `(phi0, phi_dot0, p)`.
#[derive(Debug, Clone)]
pub struct OracleBranch {
    pub orbits: Vec<PeriodicOrbit>,
    pub tangents: Vec<[f64; 3]>,
    /// Arclength step that produced each point (0 for the start).
    pub steps: Vec<f64>,
}

impl OracleBranch {
    pub fn len(&self) -> usize {
        self.orbits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbits.is_empty()
    }

    /// Index of the interior minimum of `p`, if any.
    pub fn fold_index(&self) -> Option<usize> {
        let (i, _) = self
            .orbits
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.p.total_cmp(&b.1.p))?;
        (i > 0 && i + 1 < self.len()).then_some(i)
    }

    /// Orbit whose average phase is closest to `phase`.
    pub fn nearest_by_phase(&self, phase: f64) -> Option<&PeriodicOrbit> {
        self.orbits
            .iter()
            .min_by(|a, b| (a.avg_phase - phase).abs().total_cmp(&(b.avg_phase - phase).abs()))
    }
}

/// Trajectory tangents `S_i t` at the nodes, and trapezoid weights `dt/T`.
fn node_tangents(shot: &Shot, t: &[f64; 3]) -> Vec<[f64; 2]> {
    shot.sens
        .iter()
        .map(|s| {
            [
                s[0][0] * t[0] + s[0][1] * t[1] + s[0][2] * t[2],
                s[1][0] * t[0] + s[1][1] * t[1] + s[1][2] * t[2],
            ]
        })
        .collect()
}

fn trapezoid_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i == n {
        0.5 / n as f64
    } else {
        1.0 / n as f64
    }
}

/// Null direction of `[M - I | dp]`, normalized in the functional norm and
/// oriented by `orient`.
fn branch_tangent(shot: &Shot, orient: impl Fn(&[f64; 3], &[[f64; 2]]) -> f64) -> [f64; 3] {
    let m = shot.monodromy;
    let r1 = Vector3::new(m[(0, 0)] - 1.0, m[(0, 1)], shot.dp[0]);
    let r2 = Vector3::new(m[(1, 0)], m[(1, 1)] - 1.0, shot.dp[1]);
    let c = r1.cross(&r2);
    let mut t = [c[0], c[1], c[2]];
    let traj = node_tangents(shot, &t);
    let n = traj.len() - 1;
    let mut norm2 = t[2] * t[2];
    for (i, v) in traj.iter().enumerate() {
        norm2 += trapezoid_weight(i, n) * (v[0] * v[0] + v[1] * v[1]);
    }
    let mut scale = 1.0 / norm2.sqrt();
    let scaled: Vec<[f64; 2]> = traj.iter().map(|v| [v[0] * scale, v[1] * scale]).collect();
    for x in t.iter_mut() {
        *x *= scale;
    }
    if orient(&t, &scaled) < 0.0 {
        scale = -1.0;
        for x in t.iter_mut() {
            *x *= scale;
        }
    }
    t
}

struct Anchor {
    z: Vector3<f64>,
    t: [f64; 3],
    nodes: Vec<[f64; 2]>,
    traj_tangent: Vec<[f64; 2]>,
}

fn arclength_inner(a: &[f64; 3], ta: &[[f64; 2]], b: &[f64; 3], tb: &[[f64; 2]]) -> f64 {
    let n = ta.len() - 1;
    let mut s = a[2] * b[2];
    for i in 0..=n {
        s += trapezoid_weight(i, n) * (ta[i][0] * tb[i][0] + ta[i][1] * tb[i][1]);
    }
    s
}

fn correct(
    params: &PendulumParams,
    anchor: &Anchor,
    h: f64,
    settings: &BvpSettings,
) -> Result<(Vector3<f64>, Shot)> {
    let steps = settings.oracle.steps_per_period;
    let mut z = anchor.z + Vector3::from(anchor.t) * h;
    let mut last = f64::INFINITY;
    for _ in 0..=settings.newton_iter {
        let shot = shoot(params, z[2], [z[0], z[1]], steps, true)?;
        let mut arc = anchor.t[2] * (z[2] - anchor.z[2]) - h;
        let mut darc = [0.0, 0.0, anchor.t[2]];
        for (i, (y, s)) in shot.nodes.iter().zip(&shot.sens).enumerate() {
            let w = trapezoid_weight(i, steps);
            let tg = anchor.traj_tangent[i];
            let old = anchor.nodes[i];
            arc += w * (tg[0] * (y[0] - old[0]) + tg[1] * (y[1] - old[1]));
            for k in 0..3 {
                darc[k] += w * (tg[0] * s[0][k] + tg[1] * s[1][k]);
            }
        }
        let r = Vector3::new(shot.end[0] - z[0], shot.end[1] - z[1], arc);
        last = r.norm();
        if last <= settings.oracle.tol {
            return Ok((z, shot));
        }
        let m = shot.monodromy;
        let j = Matrix3::new(
            m[(0, 0)] - 1.0,
            m[(0, 1)],
            shot.dp[0],
            m[(1, 0)],
            m[(1, 1)] - 1.0,
            shot.dp[1],
            darc[0],
            darc[1],
            darc[2],
        );
        let dx = j
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::SingularJacobian("arclength system".into()))?;
        z -= dx;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian("arclength system".into()));
        }
    }
    Err(Error::NoConvergence {
        iterations: settings.newton_iter,
        residual: last,
    })
}

/// Pseudo-arclength continuation of the orbit family from a converged start.
pub fn continue_branch_bvp(params: &PendulumParams, start: &PeriodicOrbit, settings: &BvpSettings) -> Result<OracleBranch> {
    let steps = settings.oracle.steps_per_period;
    if start.residual > 10.0 * settings.oracle.tol.max(1e-9) {
        return Err(Error::StartNotConverged(format!(
            "shooting residual {:.3e}",
            start.residual
        )));
    }
    let y0 = [start.phi[0], start.phi_dot[0]];
    let shot = shoot(params, start.p, y0, steps, true)?;
    let dir = settings.initial_direction;
    let t = branch_tangent(&shot, |t, _| t[2] * dir);
    let start_orbit = finalize(params, start.p, y0, &shot);

    let mut anchor = Anchor {
        z: Vector3::new(y0[0], y0[1], start.p),
        t,
        traj_tangent: node_tangents(&shot, &t),
        nodes: shot.nodes,
    };
    let mut branch = OracleBranch {
        orbits: vec![start_orbit],
        tangents: vec![t],
        steps: vec![0.0],
    };
    let mut h = settings.h0;
    let mut streak = 0;
    while branch.len() < settings.max_points {
        match correct(params, &anchor, h, settings) {
            Ok((z, shot)) => {
                let y0 = [z[0], z[1]];
                let prev_t = anchor.t;
                let prev_traj = anchor.traj_tangent.clone();
                let t = branch_tangent(&shot, |t, traj| arclength_inner(t, traj, &prev_t, &prev_traj));
                let orbit = finalize(params, z[2], y0, &shot);
                let done = orbit.p < settings.p_min
                    || orbit.p > settings.p_max
                    || orbit.avg_phase < settings.phase_min
                    || orbit.avg_phase > settings.phase_max;
                anchor = Anchor {
                    z,
                    t,
                    traj_tangent: node_tangents(&shot, &t),
                    nodes: shot.nodes,
                };
                branch.orbits.push(orbit);
                branch.tangents.push(t);
                branch.steps.push(h);
                if done {
                    break;
                }
                streak += 1;
                if streak >= 2 {
                    h = (h * 1.3).min(settings.h_max);
                    streak = 0;
                }
            }
            Err(_) => {
                streak = 0;
                h *= 0.5;
                if h < settings.h_min {
                    break;
                }
            }
        }
    }
    Ok(branch)
}

/// Refined saddle-node of the orbit family.
#[derive(Debug, Clone)]
pub struct Fold {
    pub p0: f64,
    pub orbit: PeriodicOrbit,
    /// Branch index of the coarse minimum.
    pub index: usize,
}

fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> Option<f64> {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let curv = (d2 - d1) / (x[2] - x[0]);
    if curv <= 0.0 || !curv.is_finite() {
        return None;
    }
    // y = y0 + d1 (x - x0) + curv (x - x0)(x - x1)
    Some(0.5 * (x[0] + x[1]) - d1 / (2.0 * curv))
}

/// Locate the fold: quadratic fit of `p` over arclength around the coarse
/// minimum, then parabolic refinement of `p(avg_phase)` with orbits solved at
/// prescribed phase.
pub fn locate_fold(params: &PendulumParams, branch: &OracleBranch, settings: &OracleSettings) -> Result<Fold> {
    let i = branch.fold_index().ok_or(Error::NoFold)?;
    let o = &branch.orbits;
    let s1 = branch.steps[i];
    let s2 = s1 + branch.steps[i + 1];
    let arc = [0.0, s1, s2];
    let s_star = parabola_vertex(arc, [o[i - 1].p, o[i].p, o[i + 1].p]).unwrap_or(s1);
    // phase along arclength by the same quadratic interpolation
    let ph = [o[i - 1].avg_phase, o[i].avg_phase, o[i + 1].avg_phase];
    let lag = |k: usize, x: f64| {
        let (a, b) = match k {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        (x - arc[a]) * (x - arc[b]) / ((arc[k] - arc[a]) * (arc[k] - arc[b]))
    };
    let mut psi = (0..3).map(|k| ph[k] * lag(k, s_star)).sum::<f64>();
    let mut delta = 0.25 * (ph[2] - ph[0]).abs().max(1e-6);
    let seed = &o[i];
    let mut guess = ([seed.phi[0], seed.phi_dot[0]], seed.p);
    let solve = |phase: f64, guess: &mut ([f64; 2], f64)| -> Result<PeriodicOrbit> {
        let orbit = solve_orbit_at_phase(params, phase, guess.0, guess.1, settings)?;
        *guess = ([orbit.phi[0], orbit.phi_dot[0]], orbit.p);
        Ok(orbit)
    };
    for _ in 0..6 {
        let xs = [psi - delta, psi, psi + delta];
        let mut ps = [0.0; 3];
        for k in 0..3 {
            ps[k] = solve(xs[k], &mut guess)?.p;
        }
        match parabola_vertex(xs, ps) {
            Some(v) if (v - psi).abs() < 4.0 * delta => psi = v,
            _ => {
                let k = (0..3).min_by(|&a, &b| ps[a].total_cmp(&ps[b])).unwrap();
                psi = xs[k];
            }
        }
        delta *= 0.1;
        if delta < 1e-9 {
            break;
        }
    }
    let orbit = solve(psi, &mut guess)?;
    Ok(Fold {
        p0: orbit.p,
        orbit,
        index: i,
    })
}

/// State on a period-1 rotation at amplitude `p`, found like a lab would:
/// release the pendulum at synchronous speed from a few start angles and
/// keep the first run that settles to a rotation (no net slip per period).
pub fn spin_up(params: &PendulumParams, p: f64, steps: usize, periods: usize) -> Result<[f64; 2]> {
    let h = params.period() / steps as f64;
    for k in 0..8 {
        let mut y = [k as f64 * TAU / 8.0, 0.0];
        let mut slip = f64::INFINITY;
        for n in 0..periods {
            let traj = crate::model::integrate_rotating(params, p, y, (n * steps) as i64, h, steps);
            let last = traj.last().expect("nonempty");
            if !last.is_finite() {
                break;
            }
            slip = last.phi - y[0];
            y = [last.phi.rem_euclid(TAU), last.phi_dot];
        }
        if slip.abs() < 1e-6 {
            return Ok(y);
        }
    }
    Err(Error::StartNotConverged(format!("no settled rotation at p = {p} after {periods} periods")))
}

/// Orbit on the rotation family at amplitude `p`, seeded by [`spin_up`].
pub fn seed_rotation(params: &PendulumParams, p: f64, settings: &OracleSettings, periods: usize) -> Result<PeriodicOrbit> {
    let y = spin_up(params, p, settings.steps_per_period, periods)?;
    let orbit = solve_orbit(params, p, y, settings)?;
    let turns = (orbit.avg_phase / TAU).floor();
    Ok(orbit.shifted(-turns * TAU))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PendulumParams;

    fn params() -> PendulumParams {
        PendulumParams::default()
    }

    #[test]
    fn eigenvalues_of_known_matrices() {
        let e = eigenvalues2(&Matrix2::new(2.0, 0.0, 0.0, 0.5));
        assert!((e[0].re - 2.0).abs() < 1e-15 && (e[1].re - 0.5).abs() < 1e-15);
        let e = eigenvalues2(&Matrix2::new(0.0, -1.0, 1.0, 0.0));
        assert!((e[0].im.abs() - 1.0).abs() < 1e-15 && e[0].re.abs() < 1e-15);
    }

    #[test]
    fn residual_jacobian_is_monodromy_minus_identity() {
        let pr = params();
        let p = 0.015;
        let y0 = [0.3, 0.2];
        let shot = shoot(&pr, p, y0, 256, false).unwrap();
        let eps = 1e-6;
        for j in 0..2 {
            let mut a = y0;
            let mut b = y0;
            a[j] += eps;
            b[j] -= eps;
            let ra = shoot_residual(&pr, p, a, 256).unwrap();
            let rb = shoot_residual(&pr, p, b, 256).unwrap();
            for i in 0..2 {
                let fd = (ra[i] - rb[i]) / (2.0 * eps);
                let exact = shot.monodromy[(i, j)] - if i == j { 1.0 } else { 0.0 };
                assert!((fd - exact).abs() < 1e-6 * (1.0 + exact.abs()), "{i}{j}: {fd} vs {exact}");
            }
        }
        let ra = shoot_residual(&pr, p + eps * 1e-2, y0, 256).unwrap();
        let rb = shoot_residual(&pr, p - eps * 1e-2, y0, 256).unwrap();
        for i in 0..2 {
            let fd = (ra[i] - rb[i]) / (2.0 * eps * 1e-2);
            assert!((fd - shot.dp[i]).abs() < 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn hanging_state_is_not_periodic_in_rotating_frame() {
        let mut pr = params();
        pr.damping = 0.0;
        let r = shoot_residual(&pr, 0.0, [0.0, -pr.omega], 256).unwrap();
        assert!(r[0].abs() > 1.0);
    }

    #[test]
    fn liouville_determinant() {
        let pr = params();
        let s = shoot(&pr, 0.01, [0.1, 0.5], 512, false).unwrap();
        assert!((s.monodromy.determinant() - pr.liouville_determinant()).abs() < 1e-6);
        let mut free = pr;
        free.damping = 0.0;
        let s = shoot(&free, 0.0, [0.1, 0.5], 512, false).unwrap();
        assert!((s.monodromy.determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn multipliers_match_stroboscopic_differences() {
        let pr = params();
        let orbit = seed_rotation(&pr, 0.02, &OracleSettings::default(), 200).unwrap();
        let y0 = [orbit.phi[0], orbit.phi_dot[0]];
        let eps = 1e-6;
        let mut fd = Matrix2::zeros();
        for j in 0..2 {
            let mut a = y0;
            let mut b = y0;
            a[j] += eps;
            b[j] -= eps;
            let ea = shoot(&pr, orbit.p, a, 512, false).unwrap().end;
            let eb = shoot(&pr, orbit.p, b, 512, false).unwrap().end;
            for i in 0..2 {
                fd[(i, j)] = (ea[i] - eb[i]) / (2.0 * eps);
            }
        }
        let mut a = eigenvalues2(&fd).map(|c| (c.re, c.im));
        let mut b = orbit.multipliers.map(|c| (c.re, c.im));
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for k in 0..2 {
            assert!((a[k].0 - b[k].0).abs() < 1e-6 && (a[k].1 - b[k].1).abs() < 1e-6);
        }
    }

    #[test]
    fn seeded_solve_at_two_centimetres_is_stable_and_reconverges_immediately() {
        let pr = params();
        let settings = OracleSettings::default();
        let orbit = seed_rotation(&pr, 0.02, &settings, 200).unwrap();
        assert!(orbit.residual <= 1e-9);
        assert!(orbit.is_stable(), "{:?}", orbit.multipliers);
        let prod = orbit.multipliers[0] * orbit.multipliers[1];
        assert!((prod.re - pr.liouville_determinant()).abs() < 1e-6);
        let (_, iters) = solve_orbit_counted(&pr, orbit.p, [orbit.phi[0], orbit.phi_dot[0]], &settings).unwrap();
        assert_eq!(iters, 0);
    }

    #[test]
    fn phase_solve_reproduces_fixed_p_orbit() {
        let pr = params();
        let settings = OracleSettings::default();
        let orbit = seed_rotation(&pr, 0.02, &settings, 200).unwrap();
        let guess = [orbit.phi[0] + 0.01, orbit.phi_dot[0]];
        let again = solve_orbit_at_phase(&pr, orbit.avg_phase, guess, 0.019, &settings).unwrap();
        assert!((again.p - 0.02).abs() < 1e-9);
    }

    #[test]
    fn vertex_of_parabola() {
        let v = parabola_vertex([0.0, 1.0, 3.0], [4.0, 1.0, 1.0]).unwrap();
        // y = (x - 2)^2 exactly through (0,4),(1,1),(3,1)
        assert!((v - 2.0).abs() < 1e-14);
        assert!(parabola_vertex([0.0, 1.0, 2.0], [0.0, 1.0, 0.0]).is_none());
    }
}
