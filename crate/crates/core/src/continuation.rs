//! Pseudo-arclength continuation of fixed points of `phi0 -> M1(p, phi0)`.
//!
//! Unknowns are `(p, phi0)`; the residual is
//!
//! ```text
//! r1 = p_t (p - p_old) + phi_t (phi0 - phi0_old) - h
//! r2 = M1(p, phi0) - phi0
//! ```
//!
//! in scaled variables `p / sigma_p`, `phi0 / sigma_phi`. Each evaluation of
//! `M1` is a controlled run that continues from the previous one.

use std::fmt;

use crate::delay::ControlConfig;
use crate::error::{Error, Result};
use crate::experiment::{Experiment, M1Result};

/// Measurement scales used to make `p` and `phi0` commensurate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub sigma_p: f64,
    pub sigma_phi: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Scaling {
            sigma_p: 2e-4,
            sigma_phi: 1e-4,
        }
    }
}

impl Scaling {
    pub fn to_scaled(&self, p: f64, phi0: f64) -> [f64; 2] {
        [p / self.sigma_p, phi0 / self.sigma_phi]
    }
}

/// Anything that returns `M1(p, phi0)`; cloning must give an independent
/// instance in the same state (used for parallel Jacobian probes).
pub trait M1Evaluator: Clone + Send {
    fn evaluate(&mut self, p: f64, phi0: f64) -> Result<M1Result>;
}

/// A running experiment with a fixed controller; `phi0` sets the constant
/// part of the reference.
#[derive(Debug, Clone)]
pub struct ControlledExperiment {
    pub experiment: Experiment,
    pub control: ControlConfig,
}

impl ControlledExperiment {
    pub fn new(experiment: Experiment, control: ControlConfig) -> Self {
        ControlledExperiment { experiment, control }
    }
}

impl M1Evaluator for ControlledExperiment {
    fn evaluate(&mut self, p: f64, phi0: f64) -> Result<M1Result> {
        let mut control = self.control.clone();
        control.set_scalar_reference(phi0, self.experiment.params.period());
        self.experiment.evaluate(p, &control)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFlag {
    StableGuess,
    Fold,
    UnstableGuess,
    Lost,
}

impl fmt::Display for PointFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PointFlag::StableGuess => "stable-guess",
            PointFlag::Fold => "fold",
            PointFlag::UnstableGuess => "unstable-guess",
            PointFlag::Lost => "lost",
        })
    }
}

impl std::str::FromStr for PointFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable-guess" => Ok(PointFlag::StableGuess),
            "fold" => Ok(PointFlag::Fold),
            "unstable-guess" => Ok(PointFlag::UnstableGuess),
            "lost" => Ok(PointFlag::Lost),
            _ => Err(Error::Io(format!("unknown point flag `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct M1Summary {
    pub value: f64,
    pub converged: bool,
    pub periods_used: usize,
    pub u_sup: f64,
}

impl From<&M1Result> for M1Summary {
    fn from(m: &M1Result) -> Self {
        M1Summary {
            value: m.value,
            converged: m.converged,
            periods_used: m.periods_used,
            u_sup: m.residual_u_sup,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub p: f64,
    pub phi0: f64,
    /// Unit tangent in scaled variables.
    pub tangent: [f64; 2],
    /// Scaled residual norm at acceptance.
    pub residual_norm: f64,
    pub m1: M1Summary,
    /// Arclength step (scaled) that produced this point.
    pub step_h: f64,
    pub iterations: usize,
    pub flag: PointFlag,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub fold_index: Option<usize>,
}

impl Branch {
    /// Accepted (not lost) points.
    pub fn accepted(&self) -> impl Iterator<Item = &BranchPoint> {
        self.points.iter().filter(|p| p.flag != PointFlag::Lost)
    }

    /// Interior minimum of `p` among accepted points.
    pub fn locate_fold(&self) -> Option<usize> {
        let acc: Vec<usize> = (0..self.points.len())
            .filter(|&i| self.points[i].flag != PointFlag::Lost)
            .collect();
        let k = (0..acc.len()).min_by(|&a, &b| self.points[acc[a]].p.total_cmp(&self.points[acc[b]].p))?;
        (k > 0 && k + 1 < acc.len()).then_some(acc[k])
    }

    /// Assign stable/fold/unstable flags from the position of the fold.
    pub fn classify(&mut self) {
        self.fold_index = self.locate_fold();
        for (i, pt) in self.points.iter_mut().enumerate() {
            if pt.flag == PointFlag::Lost {
                continue;
            }
            pt.flag = match self.fold_index {
                Some(f) if i == f => PointFlag::Fold,
                Some(f) if i > f => PointFlag::UnstableGuess,
                _ => PointFlag::StableGuess,
            };
        }
    }

    pub fn unstable_count(&self) -> usize {
        self.points.iter().filter(|p| p.flag == PointFlag::UnstableGuess).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationSettings {
    pub scaling: Scaling,
    pub newton_tol: f64,
    pub max_iter: usize,
    /// Step-halvings of the Newton update before giving up on descent.
    pub damping_halvings: usize,
    /// Jacobian probe offsets (m, rad).
    pub fd_dp: f64,
    pub fd_dphi: f64,
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub grow: f64,
    pub max_points: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// Consecutive loss-of-control failures that end the run.
    pub max_lost: usize,
    /// Fixed-point sweeps at the start amplitude.
    pub start_sweeps: usize,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        let scaling = Scaling::default();
        ContinuationSettings {
            scaling,
            newton_tol: 5e-3,
            max_iter: 8,
            damping_halvings: 4,
            fd_dp: scaling.sigma_p,
            fd_dphi: 10.0 * scaling.sigma_phi,
            h0: 100.0,
            h_min: 1.0,
            h_max: 400.0,
            grow: 1.3,
            max_points: 120,
            p_min: 0.0,
            p_max: 0.03,
            max_lost: 3,
            start_sweeps: 20,
        }
    }
}

/// Previous point data needed by the arclength condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub p: f64,
    pub phi0: f64,
    pub tangent: [f64; 2],
}

impl From<&BranchPoint> for Anchor {
    fn from(b: &BranchPoint) -> Self {
        Anchor {
            p: b.p,
            phi0: b.phi0,
            tangent: b.tangent,
        }
    }
}

fn arclength(p: f64, phi0: f64, prev: &Anchor, h: f64, s: &Scaling) -> f64 {
    prev.tangent[0] * (p - prev.p) / s.sigma_p + prev.tangent[1] * (phi0 - prev.phi0) / s.sigma_phi - h
}

/// `(r1, r2)` in scaled units together with the run that produced `r2`.
pub fn residual<E: M1Evaluator>(
    p: f64,
    phi0: f64,
    prev: &Anchor,
    h: f64,
    oracle: &mut E,
    scaling: &Scaling,
) -> Result<([f64; 2], M1Result)> {
    let m1 = oracle.evaluate(p, phi0)?;
    if !m1.converged {
        return Err(Error::NoConvergence {
            iterations: m1.periods_used,
            residual: f64::NAN,
        });
    }
    let r1 = arclength(p, phi0, prev, h, scaling);
    let r2 = (m1.value - phi0) / scaling.sigma_phi;
    Ok(([r1, r2], m1))
}

/// Forward-difference Jacobian in scaled variables. Row 1 is the tangent;
/// row 2 is sampled with two probes started from the oracle's current state,
/// run concurrently. `base_r2` is the scaled `r2` at `(p, phi0)`.
pub fn fd_jacobian<E: M1Evaluator>(
    p: f64,
    phi0: f64,
    base_r2: f64,
    prev: &Anchor,
    oracle: &E,
    settings: &ContinuationSettings,
) -> Result<[[f64; 2]; 2]> {
    let s = &settings.scaling;
    let (dp, dphi) = (settings.fd_dp, settings.fd_dphi);
    let mut probe_p = oracle.clone();
    let mut probe_phi = oracle.clone();
    let (a, b) = rayon::join(
        move || probe_p.evaluate(p + dp, phi0),
        move || probe_phi.evaluate(p, phi0 + dphi),
    );
    let r2_p = (a?.value - phi0) / s.sigma_phi;
    let r2_phi = (b?.value - (phi0 + dphi)) / s.sigma_phi;
    Ok([
        prev.tangent,
        [
            (r2_p - base_r2) / (dp / s.sigma_p),
            (r2_phi - base_r2) / (dphi / s.sigma_phi),
        ],
    ])
}

fn norm(r: &[f64; 2]) -> f64 {
    r[0].hypot(r[1])
}

fn solve2(j: &[[f64; 2]; 2], r: &[f64; 2]) -> Result<[f64; 2]> {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let scale = (j[0][0].abs() + j[0][1].abs()) * (j[1][0].abs() + j[1][1].abs());
    if det.abs() <= 1e-14 * scale || !det.is_finite() {
        return Err(Error::SingularJacobian(format!("det = {det:e}")));
    }
    Ok([
        (j[1][1] * r[0] - j[0][1] * r[1]) / det,
        (j[0][0] * r[1] - j[1][0] * r[0]) / det,
    ])
}

/// Damped Newton from `predictor` on `(r1, r2)`.
pub fn newton_correct<E: M1Evaluator>(
    predictor: (f64, f64),
    prev: &Anchor,
    h: f64,
    oracle: &mut E,
    settings: &ContinuationSettings,
) -> Result<BranchPoint> {
    let s = settings.scaling;
    let (mut p, mut phi0) = predictor;
    let (mut r, mut m1) = residual(p, phi0, prev, h, oracle, &s)?;
    let mut iterations = 0;
    while norm(&r) > settings.newton_tol {
        if iterations >= settings.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: norm(&r),
            });
        }
        iterations += 1;
        let j = fd_jacobian(p, phi0, r[1], prev, oracle, settings)?;
        let d = solve2(&j, &r)?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.damping_halvings {
            let cand_p = p - lambda * d[0] * s.sigma_p;
            let cand_phi = phi0 - lambda * d[1] * s.sigma_phi;
            let mut trial = oracle.clone();
            if let Ok((rn, mn)) = residual(cand_p, cand_phi, prev, h, &mut trial, &s) {
                if norm(&rn) < norm(&r) {
                    accepted = Some((cand_p, cand_phi, rn, mn, trial));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((np, nphi, rn, mn, trial)) => {
                p = np;
                phi0 = nphi;
                r = rn;
                m1 = mn;
                *oracle = trial;
            }
            None => {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: norm(&r),
                })
            }
        }
    }
    Ok(BranchPoint {
        p,
        phi0,
        tangent: prev.tangent,
        residual_norm: norm(&r),
        m1: M1Summary::from(&m1),
        step_h: h,
        iterations,
        flag: PointFlag::StableGuess,
    })
}

/// Normalized secant from `prev` to `new` in scaled variables, oriented to
/// agree with `prev_tangent`.
pub fn update_tangent(prev_tangent: [f64; 2], new: (f64, f64), prev: (f64, f64), scaling: &Scaling) -> Result<[f64; 2]> {
    let d = [
        (new.0 - prev.0) / scaling.sigma_p,
        (new.1 - prev.1) / scaling.sigma_phi,
    ];
    let n = norm(&d);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::CoincidentPoints);
    }
    let mut t = [d[0] / n, d[1] / n];
    if t[0] * prev_tangent[0] + t[1] * prev_tangent[1] < 0.0 {
        t = [-t[0], -t[1]];
    }
    Ok(t)
}

/// Initial tangent: decreasing amplitude at fixed phase.
pub const INITIAL_TANGENT: [f64; 2] = [-1.0, 0.0];

/// Settle the start point at fixed `p` by iterating `phi0 := M1(p, phi0)`.
pub fn start_point<E: M1Evaluator>(p: f64, phi0_guess: f64, oracle: &mut E, settings: &ContinuationSettings) -> Result<BranchPoint> {
    let s = settings.scaling;
    let mut phi0 = phi0_guess;
    for _ in 0..settings.start_sweeps.max(1) {
        let m1 = oracle
            .evaluate(p, phi0)
            .map_err(|e| Error::StartNotConverged(e.to_string()))?;
        if !m1.converged {
            return Err(Error::StartNotConverged(format!(
                "no settled average after {} periods",
                m1.periods_used
            )));
        }
        let r2 = (m1.value - phi0) / s.sigma_phi;
        if r2.abs() <= settings.newton_tol {
            return Ok(BranchPoint {
                p,
                phi0,
                tangent: INITIAL_TANGENT,
                residual_norm: r2.abs(),
                m1: M1Summary::from(&m1),
                step_h: 0.0,
                iterations: 0,
                flag: PointFlag::StableGuess,
            });
        }
        phi0 = m1.value;
    }
    Err(Error::StartNotConverged(format!(
        "fixed-point sweeps did not settle at p = {p}"
    )))
}

/// Predictor-corrector loop with adaptive step.
pub fn continue_branch<E: M1Evaluator>(start: (f64, f64), oracle: &mut E, settings: &ContinuationSettings) -> Result<Branch> {
    let s = settings.scaling;
    let first = start_point(start.0, start.1, oracle, settings)?;
    let mut branch = Branch {
        points: vec![first],
        fold_index: None,
    };
    let mut h = settings.h0;
    let mut successes = 0;
    let mut lost = 0;
    while branch.points.len() < settings.max_points {
        let prev = branch.points.last().expect("nonempty");
        let anchor = Anchor::from(prev);
        let predictor = (
            prev.p + h * anchor.tangent[0] * s.sigma_p,
            prev.phi0 + h * anchor.tangent[1] * s.sigma_phi,
        );
        let mut attempt = oracle.clone();
        match newton_correct(predictor, &anchor, h, &mut attempt, settings) {
            Ok(mut point) => {
                point.tangent = update_tangent(anchor.tangent, (point.p, point.phi0), (anchor.p, anchor.phi0), &s)?;
                *oracle = attempt;
                lost = 0;
                let out_of_range = point.p < settings.p_min || point.p > settings.p_max;
                branch.points.push(point);
                if out_of_range {
                    break;
                }
                successes += 1;
                if successes >= 2 {
                    h = (h * settings.grow).min(settings.h_max);
                    successes = 0;
                }
            }
            Err(err) => {
                successes = 0;
                if matches!(err, Error::LossOfControl { .. }) {
                    lost += 1;
                }
                h *= 0.5;
                if h < settings.h_min || lost >= settings.max_lost {
                    let prev = branch.points.last().expect("nonempty").clone();
                    branch.points.push(BranchPoint {
                        p: predictor.0,
                        phi0: predictor.1,
                        residual_norm: f64::NAN,
                        m1: M1Summary {
                            value: f64::NAN,
                            converged: false,
                            periods_used: 0,
                            u_sup: f64::NAN,
                        },
                        step_h: 2.0 * h,
                        iterations: 0,
                        flag: PointFlag::Lost,
                        ..prev
                    });
                    break;
                }
            }
        }
    }
    branch.classify();
    Ok(branch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::M1Result;
    use crate::orbit::PeriodicOrbit;
    use nalgebra::Matrix2;
    use num_complex::Complex64;

    /// Synthetic experiment with a known fixed-point curve
    /// `p = p0 + c (phi0 - f)^2` and contraction `k` per evaluation.
    #[derive(Clone)]
    struct Parabola {
        k: f64,
        calls: usize,
    }

    const P0: f64 = 0.01;
    const C: f64 = 0.01;
    const F: f64 = 3.0;

    fn result(value: f64) -> M1Result {
        M1Result {
            value,
            converged: true,
            periods_used: 4,
            residual_u_sup: 0.0,
            final_orbit: PeriodicOrbit {
                p: 0.0,
                period: 1.0,
                phi: vec![],
                phi_dot: vec![],
                avg_phase: value,
                multipliers: [Complex64::new(0.0, 0.0); 2],
                monodromy: Matrix2::zeros(),
                residual: 0.0,
            },
        }
    }

    impl M1Evaluator for Parabola {
        fn evaluate(&mut self, p: f64, phi0: f64) -> Result<M1Result> {
            self.calls += 1;
            // g(p, phi) = 0 on the curve; M1 = phi0 + k * g
            let g = p - P0 - C * (phi0 - F).powi(2);
            Ok(result(phi0 + self.k * g))
        }
    }

    fn settings() -> ContinuationSettings {
        ContinuationSettings {
            h0: 200.0,
            max_points: 60,
            ..ContinuationSettings::default()
        }
    }

    #[test]
    fn residual_vanishes_on_predictor_along_tangent() {
        let s = Scaling::default();
        let prev = Anchor {
            p: P0,
            phi0: F,
            tangent: [0.0, 1.0],
        };
        let h = 50.0;
        let phi = F + h * s.sigma_phi;
        let p = P0 + C * (phi - F).powi(2);
        let mut o = Parabola { k: 1.0, calls: 0 };
        let (r, _) = residual(p, phi, &prev, 0.0, &mut o, &s).unwrap();
        assert!(r[1].abs() < 1e-9);
        let (r, _) = residual(P0, F, &prev, 0.0, &mut o, &s).unwrap();
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn jacobian_first_row_is_tangent_and_second_matches_slope() {
        let st = settings();
        let prev = Anchor {
            p: 0.02,
            phi0: 4.0,
            tangent: [0.6, 0.8],
        };
        let o = Parabola { k: 2.0, calls: 0 };
        let (p, phi) = (0.02, 4.0);
        let mut base = o.clone();
        let (r, _) = residual(p, phi, &prev, 0.0, &mut base, &st.scaling).unwrap();
        let j = fd_jacobian(p, phi, r[1], &prev, &o, &st).unwrap();
        assert_eq!(j[0], prev.tangent);
        // dr2/dP = k sigma_p / sigma_phi ; dr2/dPhi = -2 k C (phi - F) sigma_phi/sigma_phi ...
        let s = st.scaling;
        assert!((j[1][0] - 2.0 * s.sigma_p / s.sigma_phi).abs() < 1e-6);
        let exact = -2.0 * 2.0 * C * (phi - F);
        assert!((j[1][1] - exact).abs() < 1e-3 * exact.abs().max(1.0));
    }

    #[test]
    fn newton_returns_immediately_on_a_solution() {
        let st = settings();
        let prev = Anchor {
            p: P0 + C,
            phi0: F + 1.0,
            tangent: [0.0, 1.0],
        };
        let mut o = Parabola { k: 1.0, calls: 0 };
        let pt = newton_correct((P0 + C, F + 1.0), &prev, 0.0, &mut o, &st).unwrap();
        assert_eq!(pt.iterations, 0);
        assert_eq!(o.calls, 1);
    }

    #[test]
    fn tangent_cases() {
        let s = Scaling::default();
        let t = update_tangent([0.0, 1.0], (0.01, 1.2), (0.01, 1.0), &s).unwrap();
        assert_eq!(t, [0.0, 1.0]);
        let t = update_tangent([0.0, 1.0], (0.01, 0.8), (0.01, 1.0), &s).unwrap();
        assert_eq!(t, [0.0, 1.0]);
        assert!(matches!(
            update_tangent([1.0, 0.0], (0.01, 1.0), (0.01, 1.0), &s),
            Err(Error::CoincidentPoints)
        ));
        assert_eq!(INITIAL_TANGENT, [-1.0, 0.0]);
    }

    #[test]
    fn synthetic_branch_traverses_fold() {
        let st = settings();
        let mut o = Parabola { k: 1.0, calls: 0 };
        let phi_start = F + 0.5;
        let p_start = P0 + C * 0.25;
        let branch = continue_branch((p_start, phi_start), &mut o, &st).unwrap();
        let f = branch.fold_index.expect("fold");
        assert!(f > 0);
        assert!(branch.unstable_count() >= 10);
        for w in branch.points.windows(2) {
            let d = w[0].tangent[0] * w[1].tangent[0] + w[0].tangent[1] * w[1].tangent[1];
            assert!(d > 0.0);
        }
        for pt in branch.accepted() {
            let g = pt.p - P0 - C * (pt.phi0 - F).powi(2);
            assert!((g / st.scaling.sigma_phi).abs() <= st.newton_tol);
            assert!((pt.tangent[0].hypot(pt.tangent[1]) - 1.0).abs() < 1e-12);
        }
        // tangent p-component changes sign across the fold
        assert!(branch.points[f - 1].tangent[0] < 0.0);
        assert!(branch.points[f + 1].tangent[0] > 0.0);
    }
}
