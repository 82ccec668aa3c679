//! End-to-end runs shared by the command-line tool, the examples and the
//! integration tests.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::continuation::{continue_branch, Branch, ControlledExperiment, PointFlag};
use crate::delay::ControlConfig;
use crate::error::{Error, Result};
use crate::experiment::{evaluate_m1, Experiment};
use crate::history::{HistoryNode, HistorySegment};
use crate::model::integrate_rotating;
use crate::floquet::{chart_rows, ChartRow};
use crate::oracle::{continue_branch_bvp, locate_fold, seed_rotation, spin_up, solve_orbit_at_phase, Fold, OracleBranch};
use crate::orbit::PeriodicOrbit;

/// Uncontrolled periods used to settle onto the start rotation.
pub const SEED_PERIODS: usize = 300;

#[derive(Debug, Clone)]
pub struct OracleRun {
    pub start: PeriodicOrbit,
    pub branch: OracleBranch,
    pub fold: Fold,
}

/// Scalar summary of a located fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub p0: f64,
    pub avg_phase: f64,
    pub multiplier: [f64; 2],
    pub residual: f64,
}

impl From<&Fold> for FoldSummary {
    fn from(f: &Fold) -> Self {
        let mu = f.orbit.dominant_multiplier();
        FoldSummary {
            p0: f.p0,
            avg_phase: f.orbit.avg_phase,
            multiplier: [mu.re, mu.im],
            residual: f.orbit.residual,
        }
    }
}

impl FoldSummary {
    pub fn multiplier_distance_from_one(&self) -> f64 {
        (self.multiplier[0] - 1.0).hypot(self.multiplier[1])
    }
}

/// Oracle branch from the stable rotation at `continuation.start_p`, with
/// its fold.
pub fn run_oracle(cfg: &RunConfig) -> Result<OracleRun> {
    let start = seed_rotation(&cfg.model, cfg.start_p, &cfg.oracle.oracle, SEED_PERIODS)?;
    let branch = continue_branch_bvp(&cfg.model, &start, &cfg.oracle)?;
    let fold = locate_fold(&cfg.model, &branch, &cfg.oracle.oracle)?;
    Ok(OracleRun { start, branch, fold })
}

pub fn control(cfg: &RunConfig, phi0: f64) -> ControlConfig {
    cfg.control.control(phi0, cfg.model.period())
}

/// Average phase the uncontrolled plant settles to at `p`, measured like
/// the experiment would: spin up a rotation, then measure with zero gain
/// until the average settles.
pub fn natural_average(cfg: &RunConfig, p: f64) -> Result<f64> {
    let m = cfg.sim.steps_per_period;
    let h = cfg.model.period() / m as f64;
    let y = spin_up(&cfg.model, p, m, SEED_PERIODS)?;
    let traj = integrate_rotating(&cfg.model, p, y, -2 * m as i64, h, 2 * m);
    let nodes = traj.iter().map(|s| HistoryNode::new(s.phi, s.phi_dot)).collect();
    let history = HistorySegment::new(h, -2 * m as i64, nodes)?;
    let c = control(cfg, 0.0).with_gain(0.0);
    let (res, _) = evaluate_m1(&cfg.model, p, &c, &cfg.sim, Some(history))?;
    if !res.converged {
        return Err(Error::StartNotConverged(format!(
            "uncontrolled average still changing after {} periods",
            res.periods_used
        )));
    }
    Ok(res.value)
}

/// Experiment-side branch starting from the naturally stable rotation at
/// `continuation.start_p`.
pub fn run_experiment(cfg: &RunConfig) -> Result<Branch> {
    let phi0 = natural_average(cfg, cfg.start_p)?;
    run_experiment_from(cfg, phi0)
}

pub fn run_experiment_from(cfg: &RunConfig, phi0: f64) -> Result<Branch> {
    let mut oracle = ControlledExperiment::new(Experiment::new(cfg.model, cfg.sim), control(cfg, phi0));
    continue_branch((cfg.start_p, phi0), &mut oracle, &cfg.continuation)
}

/// An oracle orbit usable as a seed: amplitude, phase and start state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitSeed {
    pub p: f64,
    pub avg_phase: f64,
    pub start: [f64; 2],
}

impl From<&PeriodicOrbit> for OrbitSeed {
    fn from(o: &PeriodicOrbit) -> Self {
        OrbitSeed {
            p: o.p,
            avg_phase: o.avg_phase,
            start: [o.phi[0], o.phi_dot[0]],
        }
    }
}

/// Difference between an experiment point and the oracle orbit with the
/// same average phase, in units of the scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleMatch {
    pub dp_scaled: f64,
    pub dphase_scaled: f64,
}

pub fn match_oracle(cfg: &RunConfig, seeds: &[OrbitSeed], p: f64, phi0: f64) -> Result<OracleMatch> {
    let seed = seeds
        .iter()
        .min_by(|a, b| (a.avg_phase - phi0).abs().total_cmp(&(b.avg_phase - phi0).abs()))
        .ok_or(Error::NoFold)?;
    let guess = [seed.start[0] + (phi0 - seed.avg_phase), seed.start[1]];
    let orbit = solve_orbit_at_phase(&cfg.model, phi0, guess, seed.p, &cfg.oracle.oracle)?;
    let s = cfg.continuation.scaling;
    Ok(OracleMatch {
        dp_scaled: (p - orbit.p) / s.sigma_p,
        dphase_scaled: (phi0 - orbit.avg_phase) / s.sigma_phi,
    })
}

/// Chart rows centred on the fold phase.
pub fn rows_for_charts(cfg: &RunConfig, run: &OracleRun) -> Result<Vec<ChartRow>> {
    let phases = cfg.charts.axes.phase_values(run.fold.orbit.avg_phase);
    chart_rows(&cfg.model, &run.branch, &phases, &cfg.oracle.oracle)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {:<28} {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Experiment branch point as stored in a branch file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub p: f64,
    pub phi0: f64,
    pub residual: f64,
    pub u_sup: f64,
    pub flag: PointFlag,
}

/// Consistency of an experiment branch with the oracle.
pub fn verify(cfg: &RunConfig, fold: &FoldSummary, seeds: &[OrbitSeed], points: &[PointRecord]) -> Vec<Check> {
    let mut checks = Vec::new();
    let dist = fold.multiplier_distance_from_one();
    checks.push(Check {
        name: "fold multiplier",
        passed: dist <= 1e-2,
        detail: format!("p0 = {:.6e} m, |mu - 1| = {dist:.2e}", fold.p0),
    });
    let accepted: Vec<&PointRecord> = points.iter().filter(|p| p.flag != PointFlag::Lost).collect();
    let unstable = accepted.iter().filter(|p| p.flag == PointFlag::UnstableGuess).count();
    let crossed = accepted.iter().any(|p| p.flag == PointFlag::Fold);
    checks.push(Check {
        name: "fold traversed",
        passed: crossed && unstable >= 10,
        detail: format!("{} accepted, {unstable} past the fold", accepted.len()),
    });
    let worst_res = accepted.iter().map(|p| p.residual).fold(0.0, f64::max);
    checks.push(Check {
        name: "fixed-point residual",
        passed: worst_res <= cfg.continuation.newton_tol,
        detail: format!("max scaled residual {worst_res:.2e}"),
    });
    let bound = 10.0 * cfg.sim.eps_trans;
    let worst_u = accepted.iter().map(|p| p.u_sup).fold(0.0, f64::max);
    checks.push(Check {
        name: "noninvasive control",
        passed: worst_u <= bound,
        detail: format!("max sup|u| {worst_u:.2e} rad (bound {bound:.1e})"),
    });
    let mut worst = (0.0f64, 0.0f64);
    let mut failures = 0;
    for pt in &accepted {
        match match_oracle(cfg, seeds, pt.p, pt.phi0) {
            Ok(m) => {
                worst.0 = worst.0.max(m.dp_scaled.abs());
                worst.1 = worst.1.max(m.dphase_scaled.abs());
            }
            Err(_) => failures += 1,
        }
    }
    checks.push(Check {
        name: "oracle agreement",
        passed: failures == 0 && worst.0 <= 3.0 && worst.1 <= 3.0,
        detail: format!(
            "max |dp|/sigma_p {:.2e}, max |dphase|/sigma_phi {:.2e}, unmatched {failures}",
            worst.0, worst.1
        ),
    });
    checks
}

pub fn point_records(branch: &Branch) -> Vec<PointRecord> {
    branch
        .points
        .iter()
        .map(|p| PointRecord {
            p: p.p,
            phi0: p.phi0,
            residual: p.residual_norm,
            u_sup: p.m1.u_sup,
            flag: p.flag,
        })
        .collect()
}
