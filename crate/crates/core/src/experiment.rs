//! The simulated experiment: closed-loop runs and the asymptotic-average
//! map `M1(p, phi0)`.

use num_complex::Complex64;
use nalgebra::Matrix2;

use crate::delay::{ControlConfig, DelayStepper, Pendulum, StepRecord};
use crate::error::{Error, Result};
use crate::history::{HistoryNode, HistorySegment};
use crate::model::{integrate_rotating, PendulumParams};
use crate::orbit::PeriodicOrbit;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub steps_per_period: usize,
    /// Per-period change of the average below which a period counts as settled.
    pub eps_trans: f64,
    /// Settled periods required in a row.
    pub consecutive: usize,
    pub max_periods: usize,
    /// Loss of control once `|phi_dot|` exceeds this (rad/s).
    pub blowup_bound: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            steps_per_period: 512,
            eps_trans: 1e-6,
            consecutive: 3,
            max_periods: 500,
            blowup_bound: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct M1Result {
    pub value: f64,
    pub converged: bool,
    pub periods_used: usize,
    /// `sup |u|` over the final period.
    pub residual_u_sup: f64,
    /// The final period as sampled; multipliers are not measured and are NaN.
    pub final_orbit: PeriodicOrbit,
}

/// History over `[-2T, 0]` from an uncontrolled run started at `(phi0, 0)`.
/// The reference trace is initialised to `phi` minus its last-period mean.
pub fn warmup_history(params: &PendulumParams, p: f64, phi0: f64, steps_per_period: usize) -> Result<HistorySegment> {
    let m = steps_per_period;
    let h = params.period() / m as f64;
    let traj = integrate_rotating(params, p, [phi0, 0.0], -2 * m as i64, h, 2 * m);
    if traj.iter().any(|s| !s.is_finite()) {
        return Err(Error::LossOfControl {
            t: 0.0,
            reason: "warm-up diverged".into(),
        });
    }
    let last = &traj[m..];
    let mean = (0.5 * (last[0].phi + last[m].phi) + last[1..m].iter().map(|s| s.phi).sum::<f64>()) / m as f64;
    let nodes = traj
        .iter()
        .map(|s| HistoryNode {
            phi: s.phi,
            phi_dot: s.phi_dot,
            tilde: s.phi - mean,
            tilde_dot: s.phi_dot,
        })
        .collect();
    HistorySegment::new(h, -2 * m as i64, nodes)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub history: HistorySegment,
}

/// Closed-loop integration for `duration` seconds (rounded to whole steps).
pub fn integrate_controlled(
    history: HistorySegment,
    params: &PendulumParams,
    p: f64,
    control: &ControlConfig,
    settings: &SimSettings,
    duration: f64,
) -> Result<Trajectory> {
    let plant = Pendulum { params: *params, p };
    let mut stepper = DelayStepper::new(plant, control, settings.steps_per_period, history)?
        .with_blowup_bound(settings.blowup_bound);
    let steps = (duration / stepper.dt()).round() as usize;
    let mut records = Vec::with_capacity(steps);
    for _ in 0..steps {
        records.push(stepper.step()?);
    }
    Ok(Trajectory {
        records,
        history: stepper.into_history(),
    })
}

/// Closed-loop run of whole periods that also stops once the rotation
/// stops (mean rate below `omega / 2` over a period). Returns the records
/// up to the stop and the outcome.
pub fn run_periods(
    history: HistorySegment,
    params: &PendulumParams,
    p: f64,
    control: &ControlConfig,
    settings: &SimSettings,
    periods: usize,
) -> (Vec<StepRecord>, Result<HistorySegment>) {
    let plant = Pendulum { params: *params, p };
    let mut stepper = match DelayStepper::new(plant, control, settings.steps_per_period, history) {
        Ok(s) => s.with_blowup_bound(settings.blowup_bound),
        Err(e) => return (Vec::new(), Err(e)),
    };
    let m = settings.steps_per_period;
    let mut records = Vec::with_capacity(periods * m);
    for _ in 0..periods {
        let start = stepper.history().latest().phi;
        for _ in 0..m {
            match stepper.step() {
                Ok(r) => records.push(r),
                Err(e) => return (records, Err(e)),
            }
        }
        let hist = stepper.history();
        let rate = (hist.latest().phi - start) / params.period() + params.omega;
        if rate < 0.5 * params.omega {
            let err = Error::LossOfControl {
                t: hist.latest_time(),
                reason: format!("rotation stopped (mean rate {rate:.3} rad/s)"),
            };
            return (records, Err(err));
        }
    }
    (records, Ok(stepper.into_history()))
}

/// History over `[-2T, 0]` lying exactly on `orbit`, sampled every
/// `T / steps_per_period`, with the reference trace already settled.
pub fn orbit_history(orbit: &PeriodicOrbit, steps_per_period: usize) -> Result<HistorySegment> {
    let m = steps_per_period;
    if m == 0 || !orbit.samples().is_multiple_of(m) {
        return Err(Error::InvalidParameter(format!(
            "orbit has {} samples, not a multiple of {m}",
            orbit.samples()
        )));
    }
    let stride = orbit.samples() / m;
    let nodes = (0..=2 * m)
        .map(|i| {
            let k = (i % m) * stride;
            HistoryNode {
                phi: orbit.phi[k],
                phi_dot: orbit.phi_dot[k],
                tilde: orbit.phi[k] - orbit.avg_phase,
                tilde_dot: orbit.phi_dot[k],
            }
        })
        .collect();
    HistorySegment::new(orbit.period / m as f64, -2 * m as i64, nodes)
}

fn nan_orbit(p: f64, period: f64, phi: Vec<f64>, phi_dot: Vec<f64>, avg: f64) -> PeriodicOrbit {
    let nan = Complex64::new(f64::NAN, f64::NAN);
    PeriodicOrbit {
        p,
        period,
        phi,
        phi_dot,
        avg_phase: avg,
        multipliers: [nan, nan],
        monodromy: Matrix2::repeat(f64::NAN),
        residual: f64::NAN,
    }
}

/// Run period by period until the average settles. Continues from `warm`
/// when given (a running experiment); otherwise warms up from the reference.
/// Returns the result and the final history for the next evaluation.
pub fn evaluate_m1(
    params: &PendulumParams,
    p: f64,
    control: &ControlConfig,
    settings: &SimSettings,
    warm: Option<HistorySegment>,
) -> Result<(M1Result, HistorySegment)> {
    control.validate()?;
    let period = params.period();
    let m = settings.steps_per_period;
    let history = match warm {
        Some(h) => h,
        None => warmup_history(params, p, control.scalar_reference(period), m)?,
    };
    let plant = Pendulum { params: *params, p };
    let mut stepper = DelayStepper::new(plant, control, m, history)?.with_blowup_bound(settings.blowup_bound);
    let mut previous: Option<f64> = None;
    let mut streak = 0;
    let mut phi = Vec::with_capacity(m);
    let mut phi_dot = Vec::with_capacity(m);
    for k in 1..=settings.max_periods {
        let start = stepper.current_index();
        let first = *stepper.history().latest();
        phi.clear();
        phi_dot.clear();
        phi.push(first.phi);
        phi_dot.push(first.phi_dot);
        let mut u_sup = stepper.control_error().0.abs();
        for i in 0..m {
            let rec = stepper.step()?;
            u_sup = u_sup.max(rec.u.abs());
            if i + 1 < m {
                phi.push(rec.phi);
                phi_dot.push(rec.phi_dot);
            }
        }
        let hist = stepper.history();
        let mean_rate = (hist.latest().phi - first.phi) / period + params.omega;
        if mean_rate < 0.5 * params.omega {
            return Err(Error::LossOfControl {
                t: hist.latest_time(),
                reason: format!("rotation stopped (mean rate {mean_rate:.3} rad/s)"),
            });
        }
        let avg = hist.trapezoid_mean(start, m)?;
        if let Some(prev) = previous {
            if (avg - prev).abs() < settings.eps_trans {
                streak += 1;
            } else {
                streak = 0;
            }
        }
        previous = Some(avg);
        if streak >= settings.consecutive || k == settings.max_periods {
            let converged = streak >= settings.consecutive;
            let orbit = nan_orbit(p, period, phi.clone(), phi_dot.clone(), avg);
            return Ok((
                M1Result {
                    value: avg,
                    converged,
                    periods_used: k,
                    residual_u_sup: u_sup,
                    final_orbit: orbit,
                },
                stepper.into_history(),
            ));
        }
    }
    Err(Error::InvalidParameter("max_periods must be positive".into()))
}

/// A running experiment: keeps the plant state between evaluations. A failed
/// evaluation leaves the stored state untouched.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub params: PendulumParams,
    pub settings: SimSettings,
    state: Option<HistorySegment>,
    evaluations: usize,
}

impl Experiment {
    pub fn new(params: PendulumParams, settings: SimSettings) -> Self {
        Experiment {
            params,
            settings,
            state: None,
            evaluations: 0,
        }
    }

    pub fn state(&self) -> Option<&HistorySegment> {
        self.state.as_ref()
    }

    pub fn set_state(&mut self, state: Option<HistorySegment>) {
        self.state = state;
    }

    /// Number of successful evaluations so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn evaluate(&mut self, p: f64, control: &ControlConfig) -> Result<M1Result> {
        let (res, hist) = evaluate_m1(&self.params, p, control, &self.settings, self.state.clone())?;
        self.state = Some(hist);
        self.evaluations += 1;
        Ok(res)
    }
}
