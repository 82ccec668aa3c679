//! The vertically excited pendulum: lab-frame and rotating-frame dynamics,
//! and the PD torque that closes the control loop.
//!
//! Angles are stored unwrapped. In the rotating frame `phi = theta - omega t`
//! a period-`T` rotation of the pendulum is a `T`-periodic orbit.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Derivative weight of the PD law, `PD[u] = -m l G (u + 0.5 u')`.
pub const DEFAULT_DERIV_RATIO: f64 = 0.5;

/// Physical constants of the pendulum. Only the products `m l` and `m l^2`
/// enter the dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    /// Effective mass (kg).
    pub mass: f64,
    /// Effective length (m).
    pub length: f64,
    /// Viscous damping (N m s).
    pub damping: f64,
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
    /// Excitation angular frequency (rad/s).
    pub omega: f64,
}

impl Default for PendulumParams {
    /// The calibrated model shipped in `config/defaults.cfg`.
    fn default() -> Self {
        PendulumParams {
            mass: 1.0,
            length: crate::calibration::DEFAULT_LENGTH,
            damping: crate::calibration::DEFAULT_DAMPING,
            gravity: 9.81,
            omega: 6.0 * PI,
        }
    }
}

impl PendulumParams {
    pub fn new(mass: f64, length: f64, damping: f64, gravity: f64, omega: f64) -> Result<Self> {
        let params = PendulumParams {
            mass,
            length,
            damping,
            gravity,
            omega,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mass > 0.0
            && self.length > 0.0
            && self.damping >= 0.0
            && self.gravity > 0.0
            && self.omega > 0.0
            && [self.mass, self.length, self.damping, self.gravity, self.omega]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "pendulum parameters must satisfy m > 0, l > 0, b >= 0, g > 0, omega > 0 (got {self:?})"
            )))
        }
    }

    /// Forcing period `T = 2 pi / omega`.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    /// Moment of inertia `m l^2`.
    pub fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }

    /// Damping rate `b / (m l^2)` (1/s).
    pub fn damping_rate(&self) -> f64 {
        self.damping / self.inertia()
    }

    /// Determinant of the uncontrolled monodromy matrix, `exp(-b T / (m l^2))`.
    pub fn liouville_determinant(&self) -> f64 {
        (-self.damping_rate() * self.period()).exp()
    }
}

/// Rotating-frame state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub phi: f64,
    pub phi_dot: f64,
    pub t: f64,
}

impl PlantState {
    pub fn new(phi: f64, phi_dot: f64, t: f64) -> Self {
        PlantState { phi, phi_dot, t }
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.phi_dot.is_finite() && self.t.is_finite()
    }

    /// Rotating-frame state from lab-frame `(theta, theta_dot)` at time `t`.
    pub fn from_lab(theta: f64, theta_dot: f64, t: f64, params: &PendulumParams) -> Self {
        PlantState {
            phi: theta - params.omega * t,
            phi_dot: theta_dot - params.omega,
            t,
        }
    }

    pub fn to_lab(&self, params: &PendulumParams) -> (f64, f64) {
        (
            self.phi + params.omega * self.t,
            self.phi_dot + params.omega,
        )
    }
}

/// Lab-frame vector field of `m l^2 theta'' + b theta' + m l [g + omega^2 p sin(omega t)] sin(theta) = 0`.
pub fn rhs_lab(theta: f64, theta_dot: f64, t: f64, params: &PendulumParams, p: f64) -> [f64; 2] {
    let ml = params.mass * params.length;
    let forcing = params.gravity + params.omega * params.omega * p * (params.omega * t).sin();
    let acc = -(params.damping * theta_dot + ml * forcing * theta.sin()) / params.inertia();
    [theta_dot, acc]
}

/// Rotating-frame vector field with an external torque injected on the
/// right-hand side.
pub fn rhs_rotating(state: &PlantState, params: &PendulumParams, p: f64, torque: f64) -> [f64; 2] {
    [
        state.phi_dot,
        rotating_accel(state.t, state.phi, state.phi_dot, params, p, torque),
    ]
}

#[inline]
pub(crate) fn rotating_accel(
    t: f64,
    phi: f64,
    phi_dot: f64,
    params: &PendulumParams,
    p: f64,
    torque: f64,
) -> f64 {
    let wt = params.omega * t;
    let ml = params.mass * params.length;
    let forcing = params.gravity + params.omega * params.omega * p * wt.sin();
    (torque
        - params.damping * phi_dot
        - params.damping * params.omega
        - ml * forcing * (phi + wt).sin())
        / params.inertia()
}

/// Proportional-plus-derivative law with configurable derivative weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdLaw {
    pub gain: f64,
    pub deriv_ratio: f64,
}

impl PdLaw {
    pub fn new(gain: f64) -> Self {
        PdLaw {
            gain,
            deriv_ratio: DEFAULT_DERIV_RATIO,
        }
    }

    #[inline]
    pub fn torque(&self, u: f64, u_dot: f64, params: &PendulumParams) -> f64 {
        -params.mass * params.length * self.gain * (u + self.deriv_ratio * u_dot)
    }
}

/// `PD[u] = -m l G (u + 0.5 u')`.
pub fn pd_torque(u: f64, u_dot: f64, params: &PendulumParams, gain: f64) -> f64 {
    PdLaw::new(gain).torque(u, u_dot, params)
}

/// Lab-frame energy `1/2 m l^2 theta'^2 - m l g cos(theta)`.
pub fn lab_energy(theta: f64, theta_dot: f64, params: &PendulumParams) -> f64 {
    0.5 * params.inertia() * theta_dot * theta_dot
        - params.mass * params.length * params.gravity * theta.cos()
}

/// One classical fourth-order Runge-Kutta step for a two-dimensional system.
#[inline]
pub fn rk4_step<F>(t: f64, y: [f64; 2], h: f64, mut f: F) -> [f64; 2]
where
    F: FnMut(f64, [f64; 2]) -> [f64; 2],
{
    let half = 0.5 * h;
    let k1 = f(t, y);
    let k2 = f(t + half, [y[0] + half * k1[0], y[1] + half * k1[1]]);
    let k3 = f(t + half, [y[0] + half * k2[0], y[1] + half * k2[1]]);
    let k4 = f(t + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
    [
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Fixed-step uncontrolled integration in the rotating frame. Node `n` sits at
/// `t = n h`; returns `steps + 1` states starting with `start_node`.
pub fn integrate_rotating(
    params: &PendulumParams,
    p: f64,
    y0: [f64; 2],
    start_node: i64,
    h: f64,
    steps: usize,
) -> Vec<PlantState> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = y0;
    out.push(PlantState::new(y[0], y[1], start_node as f64 * h));
    for k in 0..steps {
        let t = (start_node + k as i64) as f64 * h;
        y = rk4_step(t, y, h, |s, z| {
            [z[1], rotating_accel(s, z[0], z[1], params, p, 0.0)]
        });
        out.push(PlantState::new(
            y[0],
            y[1],
            (start_node + k as i64 + 1) as f64 * h,
        ));
    }
    out
}

/// Fixed-step lab-frame integration, same node convention as
/// [`integrate_rotating`]. Returns `(t, theta, theta_dot)` triples.
pub fn integrate_lab(
    params: &PendulumParams,
    p: f64,
    y0: [f64; 2],
    h: f64,
    steps: usize,
) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = y0;
    out.push((0.0, y[0], y[1]));
    for k in 0..steps {
        let t = k as f64 * h;
        y = rk4_step(t, y, h, |s, z| rhs_lab(z[0], z[1], s, params, p));
        out.push(((k + 1) as f64 * h, y[0], y[1]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> PendulumParams {
        PendulumParams::default()
    }

    #[test]
    fn equilibria_are_fixed() {
        let pr = params();
        assert_eq!(rhs_lab(0.0, 0.0, 0.37, &pr, 0.02), [0.0, 0.0]);
        let inv = rhs_lab(PI, 0.0, 0.0, &pr, 0.0);
        assert_eq!(inv[0], 0.0);
        assert!(inv[1].abs() < 1e-12);
    }

    #[test]
    fn lab_rhs_hand_evaluation() {
        let pr = params();
        // theta = pi/2, t = 0: sin(omega t) = 0, sin(theta) = 1
        let acc = rhs_lab(PI / 2.0, 0.0, 0.0, &pr, 0.02)[1];
        let expected = -(pr.mass * pr.length * pr.gravity) / (pr.mass * pr.length * pr.length);
        assert_relative_eq!(acc, expected, max_relative = 1e-14);
        assert_relative_eq!(acc, -pr.gravity / pr.length, max_relative = 1e-14);
    }

    #[test]
    fn rotating_matches_lab_under_frame_change() {
        let pr = params();
        for &(theta, theta_dot, t, p) in &[
            (0.3, 19.0, 0.01, 0.012),
            (-2.0, 17.5, 0.21, 0.02),
            (5.0, 21.0, 1.7, 0.0),
        ] {
            let lab = rhs_lab(theta, theta_dot, t, &pr, p);
            let s = PlantState::from_lab(theta, theta_dot, t, &pr);
            let rot = rhs_rotating(&s, &pr, p, 0.0);
            assert_relative_eq!(rot[0], lab[0] - pr.omega, max_relative = 1e-13);
            assert_relative_eq!(rot[1], lab[1], max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn torque_only_when_gravity_vanishes() {
        let mut pr = params();
        pr.damping = 0.0;
        let s = PlantState::new(0.0, 1.3, 0.0);
        let acc = rhs_rotating(&s, &pr, 0.0, 0.7)[1];
        assert_relative_eq!(acc, 0.7 / pr.inertia(), max_relative = 1e-14);
    }

    #[test]
    fn rotating_rhs_matches_trajectory_slope() {
        let pr = params();
        let h = pr.period() / 4096.0;
        let traj = integrate_rotating(&pr, 0.015, [0.4, 0.2], 0, h, 400);
        for k in [50usize, 200, 399] {
            let fd = (traj[k + 1].phi_dot - traj[k - 1].phi_dot) / (2.0 * h);
            let acc = rhs_rotating(&traj[k], &pr, 0.015, 0.0)[1];
            assert_relative_eq!(fd, acc, max_relative = 1e-5, epsilon = 1e-6);
        }
    }

    #[test]
    fn pd_torque_cases() {
        let pr = params();
        assert_eq!(pd_torque(0.0, 0.0, &pr, 3.0), 0.0);
        assert_relative_eq!(pd_torque(1.0, 0.0, &pr, 1.0), -pr.mass * pr.length);
        assert_eq!(pd_torque(0.1, -0.2, &pr, 5.0), 0.0);
    }

    #[test]
    fn pd_torque_is_linear() {
        let pr = params();
        let a = pd_torque(0.3, -0.7, &pr, 2.0);
        let b = pd_torque(-1.1, 0.4, &pr, 2.0);
        let ab = pd_torque(0.3 - 1.1, -0.7 + 0.4, &pr, 2.0);
        assert_relative_eq!(a + b, ab, max_relative = 1e-13);
        assert_relative_eq!(pd_torque(0.3, -0.7, &pr, 6.0), 3.0 * a, max_relative = 1e-13);
    }

    #[test]
    fn frame_consistency_over_ten_periods() {
        let pr = params();
        let p = 0.018;
        let steps_per_period = 1024;
        let h = pr.period() / steps_per_period as f64;
        let n = 10 * steps_per_period;
        let (theta0, theta_dot0) = (0.5, pr.omega + 0.3);
        let lab = integrate_lab(&pr, p, [theta0, theta_dot0], h, n);
        let s0 = PlantState::from_lab(theta0, theta_dot0, 0.0, &pr);
        let rot = integrate_rotating(&pr, p, [s0.phi, s0.phi_dot], 0, h, n);
        for k in (0..=n).step_by(97) {
            let (t, theta, _) = lab[k];
            assert!((rot[k].phi - (theta - pr.omega * t)).abs() < 1e-8, "k = {k}");
        }
    }

    #[test]
    fn energy_dissipates_without_forcing() {
        let pr = params();
        let h = pr.period() / 512.0;
        let traj = integrate_lab(&pr, 0.0, [2.5, 0.0], h, 5000);
        let mut last = f64::INFINITY;
        for &(_, theta, theta_dot) in &traj {
            let e = lab_energy(theta, theta_dot, &pr);
            assert!(e <= last + 1e-12);
            last = e;
        }
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(PendulumParams::new(1.0, 0.0, 0.0, 9.81, 1.0).is_err());
        assert!(PendulumParams::new(1.0, 0.2, -1.0, 9.81, 1.0).is_err());
        let pr = params();
        assert_relative_eq!(pr.period() * pr.omega, 2.0 * PI, max_relative = 1e-12);
    }
}
