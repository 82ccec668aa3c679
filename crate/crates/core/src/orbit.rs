//! Sampled periodic orbits of the rotating-frame pendulum.

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::Serialize;

use crate::history::hermite;

/// One period of a `T`-periodic solution sampled at `t_i = i T / n`,
/// `i = 0..n` (the endpoint `t = T` is implied by periodicity).
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbit {
    pub p: f64,
    pub period: f64,
    pub phi: Vec<f64>,
    pub phi_dot: Vec<f64>,
    /// Mean of `phi` over one period.
    pub avg_phase: f64,
    /// Floquet multipliers of the uncontrolled orbit.
    pub multipliers: [Complex64; 2],
    pub monodromy: Matrix2<f64>,
    /// Shooting residual norm at acceptance.
    pub residual: f64,
}

/// Scalar summary written next to exported orbits.
#[derive(Debug, Clone, Serialize)]
pub struct OrbitSummary {
    pub p: f64,
    pub avg_phase: f64,
    pub multipliers: [[f64; 2]; 2],
    pub residual: f64,
}

impl PeriodicOrbit {
    pub fn samples(&self) -> usize {
        self.phi.len()
    }

    pub fn dt(&self) -> f64 {
        self.period / self.samples() as f64
    }

    /// `(phi, phi_dot)` at any `t`, by cubic Hermite interpolation with
    /// periodic wrap-around.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let n = self.samples();
        let h = self.dt();
        let tau = t.rem_euclid(self.period);
        let pos = tau / h;
        let i = (pos.floor() as usize).min(n - 1);
        let s = pos - i as f64;
        let j = (i + 1) % n;
        let (f0, d0, f1, d1) = (self.phi[i], self.phi_dot[i], self.phi[j], self.phi_dot[j]);
        let phi = hermite(f0, d0, f1, d1, h, s);
        // derivative of the cubic
        let s2 = s * s;
        let dphi = (6.0 * s2 - 6.0 * s) / h * (f0 - f1)
            + (3.0 * s2 - 4.0 * s + 1.0) * d0
            + (3.0 * s2 - 2.0 * s) * d1;
        (phi, dphi)
    }

    /// The same orbit with `phi` offset by `delta` (a multiple of `2 pi`
    /// maps the family onto itself).
    pub fn shifted(mut self, delta: f64) -> Self {
        for v in self.phi.iter_mut() {
            *v += delta;
        }
        self.avg_phase += delta;
        self
    }

    /// Largest multiplier by modulus.
    pub fn dominant_multiplier(&self) -> Complex64 {
        if self.multipliers[0].norm() >= self.multipliers[1].norm() {
            self.multipliers[0]
        } else {
            self.multipliers[1]
        }
    }

    pub fn is_stable(&self) -> bool {
        self.multipliers.iter().all(|m| m.norm() < 1.0)
    }

    pub fn summary(&self) -> OrbitSummary {
        OrbitSummary {
            p: self.p,
            avg_phase: self.avg_phase,
            multipliers: self.multipliers.map(|m| [m.re, m.im]),
            residual: self.residual,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn harmonic(n: usize) -> PeriodicOrbit {
        let period = 0.5;
        let w = 2.0 * PI / period;
        let t: Vec<f64> = (0..n).map(|i| i as f64 * period / n as f64).collect();
        PeriodicOrbit {
            p: 0.0,
            period,
            phi: t.iter().map(|t| 1.0 + (w * t).sin()).collect(),
            phi_dot: t.iter().map(|t| w * (w * t).cos()).collect(),
            avg_phase: 1.0,
            multipliers: [Complex64::new(0.5, 0.0), Complex64::new(-0.7, 0.0)],
            monodromy: Matrix2::identity(),
            residual: 0.0,
        }
    }

    #[test]
    fn eval_interpolates_and_wraps() {
        let o = harmonic(256);
        let w = 2.0 * PI / o.period;
        for t in [0.0, 0.013, 0.25, 0.4999, 0.77, -0.1] {
            let (p, d) = o.eval(t);
            assert!((p - (1.0 + (w * t).sin())).abs() < 1e-7);
            assert!((d - w * (w * t).cos()).abs() < 1e-3);
        }
    }

    #[test]
    fn dominant_by_modulus() {
        let o = harmonic(8);
        assert_eq!(o.dominant_multiplier().re, -0.7);
        assert!(o.is_stable());
    }
}
