//! Projected time-delayed feedback (PTDF) and the fixed-step integrator for
//! the closed loop.
//!
//! The feedback block keeps a reference trace
//!
//! ```text
//! tilde(t) = (1 - R) tilde(t - T) + R [phi(t - T) - Pi(t)]
//! ```
//!
//! where `Pi(t)` is the band-limited part (order `N`) of `phi` over the window
//! `[t - 2T, t - T]`, evaluated at `t`. For `N = 0` it is the window average.
//! The PD controller sees `u = phi - tilde - ref`, with `ref = Q_N x` the
//! external reference.
//!
//! Window integrals `W_w(t) = int_{t-2T}^{t-T} w phi` are advanced with
//! `W_w' = w(t) [phi(t - T) - phi(t - 2T)]` for `T`-periodic weights, using
//! Hermite quadrature in time. This telescopes to the Hermite-corrected
//! trapezoid sum over the window, so in-loop values agree with a fresh
//! quadrature of the stored history.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::history::{
    hermite_half_integral, hermite_integral, hermite_mid, hermite_mid_slope, HistorySegment, Weight,
};
use crate::model::{rotating_accel, PdLaw, PendulumParams, DEFAULT_DERIV_RATIO};
use crate::spectral::{reconstruct, reconstruct_derivative, SpectralCoeffs, WindowProjection};

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    /// Common factor `G` of the PD gains.
    pub gain: f64,
    pub deriv_ratio: f64,
    /// `R` in `(0, 1]`.
    pub relaxation: f64,
    pub projection_order: usize,
    /// Reference coefficients `x`, length `2N + 1`. For `N = 0` this is
    /// `phi0 sqrt(T)`; use [`ControlConfig::scalar`] to build from radians.
    pub reference: Vec<f64>,
}

impl ControlConfig {
    /// `N = 0`, `R = 1` with constant reference `phi0` (rad).
    pub fn scalar(gain: f64, phi0: f64, period: f64) -> Self {
        ControlConfig {
            gain,
            deriv_ratio: DEFAULT_DERIV_RATIO,
            relaxation: 1.0,
            projection_order: 0,
            reference: SpectralCoeffs::from_scalar(phi0, period).into_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "relaxation must satisfy 0 < R <= 1, got {}",
                self.relaxation
            )));
        }
        if self.reference.len() != 2 * self.projection_order + 1 {
            return Err(Error::InvalidParameter(format!(
                "reference needs 2N+1 = {} coefficients, got {}",
                2 * self.projection_order + 1,
                self.reference.len()
            )));
        }
        if !self.gain.is_finite() || !self.deriv_ratio.is_finite() {
            return Err(Error::InvalidParameter("gain must be finite".into()));
        }
        Ok(())
    }

    pub fn reference_coeffs(&self, period: f64) -> SpectralCoeffs {
        SpectralCoeffs::from_vec(self.reference.clone(), period)
            .expect("reference length validated")
    }

    /// Constant part of the reference in radians.
    pub fn scalar_reference(&self, period: f64) -> f64 {
        self.reference[self.projection_order] / period.sqrt()
    }

    pub fn set_scalar_reference(&mut self, phi0: f64, period: f64) {
        self.reference[self.projection_order] = phi0 * period.sqrt();
    }

    pub fn with_gain(&self, gain: f64) -> Self {
        ControlConfig {
            gain,
            ..self.clone()
        }
    }

    pub fn pd(&self) -> PdLaw {
        PdLaw {
            gain: self.gain,
            deriv_ratio: self.deriv_ratio,
        }
    }
}

/// Plant driven by the delay stepper: angular acceleration under a torque.
pub trait Plant {
    fn params(&self) -> &PendulumParams;
    fn accel(&self, t: f64, phi: f64, phi_dot: f64, torque: f64) -> f64;
}

/// The nonlinear pendulum in the rotating frame at excitation amplitude `p`.
#[derive(Debug, Clone, Copy)]
pub struct Pendulum {
    pub params: PendulumParams,
    pub p: f64,
}

impl Plant for Pendulum {
    fn params(&self) -> &PendulumParams {
        &self.params
    }

    #[inline]
    fn accel(&self, t: f64, phi: f64, phi_dot: f64, torque: f64) -> f64 {
        rotating_accel(t, phi, phi_dot, &self.params, self.p, torque)
    }
}

/// Output of the feedback block at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Feedback {
    /// Total reference `tilde + ref` seen by the PD law.
    pub reference: f64,
    pub reference_dot: f64,
    pub tilde: f64,
    pub tilde_dot: f64,
}

/// One integrator node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub phi: f64,
    pub phi_dot: f64,
    pub phi_ref: f64,
    pub u: f64,
    pub torque: f64,
}

/// Number of integrator steps per period when `dt` divides `T`.
pub fn steps_per_period(dt: f64, period: f64) -> Result<usize> {
    let m = (period / dt).round();
    if m < 2.0 || ((m * dt - period) / period).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "step {dt} does not divide the period {period}"
        )));
    }
    Ok(m as usize)
}

struct Delayed {
    a: f64,
    a_dot: f64,
    b: f64,
    trace: f64,
    trace_dot: f64,
}

fn combine(
    control: &ControlConfig,
    reference: &SpectralCoeffs,
    period: f64,
    tau: f64,
    windows: &[f64],
    d: &Delayed,
) -> Feedback {
    let diff = d.a - d.b;
    let two_over_t = 2.0 / period;
    let mut pi = windows[0] / period;
    let mut pi_dot = diff / period;
    for j in 1..=control.projection_order {
        let rate = 2.0 * PI * j as f64 / period;
        let (s, c) = (rate * tau).sin_cos();
        let cj = two_over_t * windows[2 * j - 1];
        let sj = two_over_t * windows[2 * j];
        pi += cj * c + sj * s;
        pi_dot += two_over_t * diff + rate * (sj * c - cj * s);
    }
    let r = control.relaxation;
    let (tilde, tilde_dot) = if r == 1.0 {
        (d.a - pi, d.a_dot - pi_dot)
    } else {
        (
            (1.0 - r) * d.trace + r * (d.a - pi),
            (1.0 - r) * d.trace_dot + r * (d.a_dot - pi_dot),
        )
    };
    let (ext, ext_dot) = if reference.order == 0 {
        (reference.scalar(), 0.0)
    } else {
        (
            reconstruct(reference, tau),
            reconstruct_derivative(reference, tau),
        )
    };
    Feedback {
        reference: tilde + ext,
        reference_dot: tilde_dot + ext_dot,
        tilde,
        tilde_dot,
    }
}

/// Fixed-step RK4 integrator for the closed loop with delayed feedback.
///
/// The history must hold at least `2M + 1` nodes ending at the current node,
/// where `M` is the number of steps per period.
#[derive(Debug, Clone)]
pub struct DelayStepper<P: Plant> {
    plant: P,
    control: ControlConfig,
    reference: SpectralCoeffs,
    weights: Vec<Weight>,
    period: f64,
    m: i64,
    dt: f64,
    history: HistorySegment,
    windows: Vec<f64>,
    feedback: Feedback,
    blowup_bound: f64,
}

impl<P: Plant> DelayStepper<P> {
    pub fn new(plant: P, control: &ControlConfig, steps_per_period: usize, history: HistorySegment) -> Result<Self> {
        control.validate()?;
        let period = plant.params().period();
        let dt = period / steps_per_period as f64;
        if ((history.dt() - dt) / dt).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "history spacing {} does not match step {dt}",
                history.dt()
            )));
        }
        let m = steps_per_period as i64;
        let needed = 2 * steps_per_period + 1;
        if history.len() < needed.max(4) {
            return Err(Error::HistoryUnderrun {
                lag: 2.0 * period,
                span: history.span(),
            });
        }
        let history = history.with_capacity_limit(needed + 3);
        let weights = Weight::projection_set(control.projection_order);
        let n = history.last_index();
        let windows = weights
            .iter()
            .map(|w| history.window_integral(n - m, steps_per_period, *w, period))
            .collect::<Result<Vec<_>>>()?;
        let reference = control.reference_coeffs(period);
        let mut stepper = DelayStepper {
            plant,
            control: control.clone(),
            reference,
            weights,
            period,
            m,
            dt,
            history,
            windows,
            feedback: Feedback::default(),
            blowup_bound: f64::INFINITY,
        };
        stepper.feedback = stepper.node_feedback(n, n as f64 * dt, &stepper.windows.clone());
        Ok(stepper)
    }

    /// Abort with loss of control once `|phi_dot|` exceeds `bound`.
    pub fn with_blowup_bound(mut self, bound: f64) -> Self {
        self.blowup_bound = bound;
        self
    }

    pub fn history(&self) -> &HistorySegment {
        &self.history
    }

    pub fn into_history(self) -> HistorySegment {
        self.history
    }

    pub fn plant(&self) -> &P {
        &self.plant
    }

    pub fn feedback(&self) -> Feedback {
        self.feedback
    }

    pub fn steps_per_period(&self) -> usize {
        self.m as usize
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn current_index(&self) -> i64 {
        self.history.last_index()
    }

    fn node_feedback(&self, n: i64, tau: f64, windows: &[f64]) -> Feedback {
        let h = &self.history;
        let a = h.at(n - self.m);
        let b = h.at(n - 2 * self.m);
        let delayed = Delayed {
            a: a.phi,
            a_dot: a.phi_dot,
            b: b.phi,
            trace: a.tilde,
            trace_dot: a.tilde_dot,
        };
        combine(&self.control, &self.reference, self.period, tau, windows, &delayed)
    }

    /// Current `(u, u_dot)`.
    pub fn control_error(&self) -> (f64, f64) {
        let node = self.history.latest();
        (
            node.phi - self.feedback.reference,
            node.phi_dot - self.feedback.reference_dot,
        )
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let h = self.dt;
        let half = 0.5 * h;
        let m = self.m;
        let n = self.history.last_index();
        let t0 = n as f64 * h;
        let hist = &self.history;
        let a0 = *hist.at(n - m);
        let a1 = *hist.at(n + 1 - m);
        let b0 = *hist.at(n - 2 * m);
        let b1 = *hist.at(n + 1 - 2 * m);
        let diff0 = a0.phi - b0.phi;
        let diff_dot0 = a0.phi_dot - b0.phi_dot;
        let diff1 = a1.phi - b1.phi;
        let diff_dot1 = a1.phi_dot - b1.phi_dot;

        let relaxed = self.control.relaxation < 1.0;
        let mid = Delayed {
            a: hermite_mid(a0.phi, a0.phi_dot, a1.phi, a1.phi_dot, h),
            a_dot: hermite_mid_slope(a0.phi, a0.phi_dot, a1.phi, a1.phi_dot, h),
            b: hermite_mid(b0.phi, b0.phi_dot, b1.phi, b1.phi_dot, h),
            trace: if relaxed {
                hermite_mid(a0.tilde, a0.tilde_dot, a1.tilde, a1.tilde_dot, h)
            } else {
                0.0
            },
            trace_dot: if relaxed {
                hermite_mid_slope(a0.tilde, a0.tilde_dot, a1.tilde, a1.tilde_dot, h)
            } else {
                0.0
            },
        };
        let end = Delayed {
            a: a1.phi,
            a_dot: a1.phi_dot,
            b: b1.phi,
            trace: a1.tilde,
            trace_dot: a1.tilde_dot,
        };

        let t_end = t0 + h;
        let mut w_half = self.windows.clone();
        let mut w_full = self.windows.clone();
        for (k, w) in self.weights.iter().enumerate() {
            let (w0, dw0) = w.eval(t0, self.period);
            let (w1, dw1) = w.eval(t_end, self.period);
            let q0 = w0 * diff0;
            let dq0 = dw0 * diff0 + w0 * diff_dot0;
            let q1 = w1 * diff1;
            let dq1 = dw1 * diff1 + w1 * diff_dot1;
            w_half[k] += hermite_half_integral(q0, dq0, q1, dq1, h);
            w_full[k] += hermite_integral(q0, dq0, q1, dq1, h);
        }

        let fb0 = self.feedback;
        let fb_mid = combine(&self.control, &self.reference, self.period, t0 + half, &w_half, &mid);
        let fb1 = combine(&self.control, &self.reference, self.period, t_end, &w_full, &end);

        let pd = self.control.pd();
        let plant = &self.plant;
        let f = |tau: f64, fb: &Feedback, z: [f64; 2]| -> [f64; 2] {
            let torque = pd.torque(z[0] - fb.reference, z[1] - fb.reference_dot, plant.params());
            [z[1], plant.accel(tau, z[0], z[1], torque)]
        };

        let cur = hist.latest();
        let y = [cur.phi, cur.phi_dot];
        let k1 = f(t0, &fb0, y);
        let k2 = f(t0 + half, &fb_mid, [y[0] + half * k1[0], y[1] + half * k1[1]]);
        let k3 = f(t0 + half, &fb_mid, [y[0] + half * k2[0], y[1] + half * k2[1]]);
        let k4 = f(t0 + h, &fb1, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        let phi = y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        let phi_dot = y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);

        if !phi.is_finite() || !phi_dot.is_finite() || phi_dot.abs() > self.blowup_bound {
            return Err(Error::LossOfControl {
                t: t_end,
                reason: format!("|phi_dot| = {:.3e} exceeds bound", phi_dot.abs()),
            });
        }

        self.history.push(crate::history::HistoryNode {
            phi,
            phi_dot,
            tilde: fb1.tilde,
            tilde_dot: fb1.tilde_dot,
        });
        self.windows = w_full;
        self.feedback = fb1;
        let u = phi - fb1.reference;
        let u_dot = phi_dot - fb1.reference_dot;
        Ok(StepRecord {
            t: t_end,
            phi,
            phi_dot,
            phi_ref: fb1.reference,
            u,
            torque: pd.torque(u, u_dot, self.plant.params()),
        })
    }
}

/// Number of nodes per period implied by the history spacing.
fn period_nodes(history: &HistorySegment, period: f64) -> Result<i64> {
    Ok(steps_per_period(history.dt(), period)? as i64)
}

fn node_at(history: &HistorySegment, t: f64) -> Result<i64> {
    let pos = t / history.dt();
    let n = pos.round();
    if (pos - n).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "time {t} is not on the history grid"
        )));
    }
    Ok(n as i64)
}

fn delayed_at_node(history: &HistorySegment, n: i64, m: i64, t: f64) -> Result<Delayed> {
    let lo = n - 2 * m;
    if lo < history.first_index() || n > history.last_index() {
        return Err(Error::HistoryUnderrun {
            lag: history.latest_time() - t + 2.0 * m as f64 * history.dt(),
            span: history.span(),
        });
    }
    let a = history.at(n - m);
    let b = history.at(lo);
    Ok(Delayed {
        a: a.phi,
        a_dot: a.phi_dot,
        b: b.phi,
        trace: a.tilde,
        trace_dot: a.tilde_dot,
    })
}

/// Projection `Pi(t)` of the window `[t - 2T, t - T]` for a node time `t`.
pub fn window_projection(history: &HistorySegment, order: usize, t: f64, period: f64) -> Result<WindowProjection> {
    let m = period_nodes(history, period)?;
    let n = node_at(history, t)?;
    let end = n - m;
    let mean = history.window_integral(end, m as usize, Weight::One, period)?;
    let mut cos = Vec::with_capacity(order);
    let mut sin = Vec::with_capacity(order);
    for j in 1..=order {
        cos.push(history.window_integral(end, m as usize, Weight::Cos(j), period)?);
        sin.push(history.window_integral(end, m as usize, Weight::Sin(j), period)?);
    }
    Ok(WindowProjection::from_integrals(period, mean, &cos, &sin))
}

/// Generalized PTDF value `tilde(t)` at a node time `t`; for `R < 1` the
/// history's trace supplies `tilde(t - T)`.
pub fn ptdf_update(history: &HistorySegment, config: &ControlConfig, t: f64, period: f64) -> Result<f64> {
    config.validate()?;
    let m = period_nodes(history, period)?;
    let n = node_at(history, t)?;
    let d = delayed_at_node(history, n, m, t)?;
    let projection = window_projection(history, config.projection_order, t, period)?;
    let r = config.relaxation;
    Ok((1.0 - r) * d.trace + r * (d.a - projection.value(t)))
}

/// The same recursion written with the scalar period average of the window.
pub fn ptdf_update_scalar(history: &HistorySegment, relaxation: f64, t: f64, period: f64) -> Result<f64> {
    let m = period_nodes(history, period)?;
    let n = node_at(history, t)?;
    let d = delayed_at_node(history, n, m, t)?;
    let avg = history.window_integral(n - m, m as usize, Weight::One, period)? / period;
    let r = relaxation;
    Ok((1.0 - r) * d.trace + r * (d.a - avg))
}

/// `(u, u_dot)` at a node time `t`, with `u_dot` from the analytic derivative
/// of the recursion.
pub fn control_input(history: &HistorySegment, config: &ControlConfig, t: f64, period: f64) -> Result<(f64, f64)> {
    config.validate()?;
    let m = period_nodes(history, period)?;
    let n = node_at(history, t)?;
    let d = delayed_at_node(history, n, m, t)?;
    let end = n - m;
    let weights = Weight::projection_set(config.projection_order);
    let windows = weights
        .iter()
        .map(|w| history.window_integral(end, m as usize, *w, period))
        .collect::<Result<Vec<_>>>()?;
    let reference = config.reference_coeffs(period);
    let fb = combine(config, &reference, period, t, &windows, &d);
    let node = history.at(n);
    Ok((node.phi - fb.reference, node.phi_dot - fb.reference_dot))
}
