//! Uniformly sampled signal history with interpolated lookup at arbitrary
//! lags.
//!
//! Node `n` sits at `t = n dt`. Angles are interpolated with cubic Hermite
//! polynomials on `(phi, phi_dot)`; rates with four-point cubic Lagrange
//! stencils. Both are fourth-order accurate.

use std::collections::VecDeque;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One history record. `tilde`/`tilde_dot` hold the relaxed PTDF trace and
/// are only meaningful when the relaxation is below one.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HistoryNode {
    pub phi: f64,
    pub phi_dot: f64,
    pub tilde: f64,
    pub tilde_dot: f64,
}

impl HistoryNode {
    pub fn new(phi: f64, phi_dot: f64) -> Self {
        HistoryNode {
            phi,
            phi_dot,
            tilde: 0.0,
            tilde_dot: 0.0,
        }
    }
}

/// Weight applied to the signal inside a window integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    One,
    /// `cos(j 2 pi t / T)`
    Cos(usize),
    /// `sin(j 2 pi t / T)`
    Sin(usize),
}

impl Weight {
    #[inline]
    pub fn eval(&self, t: f64, period: f64) -> (f64, f64) {
        match *self {
            Weight::One => (1.0, 0.0),
            Weight::Cos(j) => {
                let rate = 2.0 * PI * j as f64 / period;
                let (s, c) = (rate * t).sin_cos();
                (c, -rate * s)
            }
            Weight::Sin(j) => {
                let rate = 2.0 * PI * j as f64 / period;
                let (s, c) = (rate * t).sin_cos();
                (s, rate * c)
            }
        }
    }

    /// Weights used by an order-`n` projection: `[1, cos 1, sin 1, ..., cos n, sin n]`.
    pub fn projection_set(order: usize) -> Vec<Weight> {
        let mut w = vec![Weight::One];
        for j in 1..=order {
            w.push(Weight::Cos(j));
            w.push(Weight::Sin(j));
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistorySegment {
    dt: f64,
    first: i64,
    nodes: VecDeque<HistoryNode>,
    capacity: Option<usize>,
}

#[inline]
pub(crate) fn hermite(f0: f64, d0: f64, f1: f64, d1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * f0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * f1
        + (s3 - s2) * h * d1
}

/// Hermite interpolant at the interval midpoint.
#[inline]
pub(crate) fn hermite_mid(f0: f64, d0: f64, f1: f64, d1: f64, h: f64) -> f64 {
    0.5 * (f0 + f1) + 0.125 * h * (d0 - d1)
}

/// Slope of the Hermite interpolant at the interval midpoint. The
/// interpolation error's derivative vanishes there, so this is fourth-order
/// accurate and, unlike a wider stencil, never reaches across a node.
#[inline]
pub(crate) fn hermite_mid_slope(f0: f64, d0: f64, f1: f64, d1: f64, h: f64) -> f64 {
    1.5 * (f1 - f0) / h - 0.25 * (d0 + d1)
}

/// Integral of the Hermite interpolant over the first half of an interval.
#[inline]
pub(crate) fn hermite_half_integral(f0: f64, d0: f64, f1: f64, d1: f64, h: f64) -> f64 {
    h * (13.0 / 32.0 * f0 + 3.0 / 32.0 * f1 + h * (11.0 / 192.0 * d0 - 5.0 / 192.0 * d1))
}

/// Integral of the Hermite interpolant over a full interval.
#[inline]
pub(crate) fn hermite_integral(f0: f64, d0: f64, f1: f64, d1: f64, h: f64) -> f64 {
    h * (0.5 * (f0 + f1) + h / 12.0 * (d0 - d1))
}

/// Cubic through equally spaced values at positions 0..=3, evaluated at `x`.
#[inline]
pub(crate) fn lagrange4(f: [f64; 4], x: f64) -> f64 {
    let a = x;
    let b = x - 1.0;
    let c = x - 2.0;
    let d = x - 3.0;
    -b * c * d / 6.0 * f[0] + a * c * d / 2.0 * f[1] - a * b * d / 2.0 * f[2] + a * b * c / 6.0 * f[3]
}

impl HistorySegment {
    pub fn new(dt: f64, first_index: i64, nodes: Vec<HistoryNode>) -> Result<Self> {
        if dt.is_nan() || dt <= 0.0 || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("history spacing must be positive, got {dt}")));
        }
        if nodes.is_empty() {
            return Err(Error::InvalidParameter("history needs at least one node".into()));
        }
        Ok(HistorySegment {
            dt,
            first: first_index,
            nodes: nodes.into(),
            capacity: None,
        })
    }

    /// Build from `(phi, phi_dot)` pairs starting at node `first_index`.
    pub fn from_pairs(dt: f64, first_index: i64, pairs: &[[f64; 2]]) -> Result<Self> {
        Self::new(
            dt,
            first_index,
            pairs.iter().map(|p| HistoryNode::new(p[0], p[1])).collect(),
        )
    }

    /// Keep at most `capacity` nodes; older nodes are dropped on push.
    pub fn with_capacity_limit(mut self, capacity: usize) -> Self {
        self.capacity = Some(capacity.max(4));
        self.trim();
        self
    }

    fn trim(&mut self) {
        if let Some(cap) = self.capacity {
            while self.nodes.len() > cap {
                self.nodes.pop_front();
                self.first += 1;
            }
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn first_index(&self) -> i64 {
        self.first
    }

    pub fn last_index(&self) -> i64 {
        self.first + self.nodes.len() as i64 - 1
    }

    pub fn time_of(&self, index: i64) -> f64 {
        index as f64 * self.dt
    }

    pub fn latest_time(&self) -> f64 {
        self.time_of(self.last_index())
    }

    /// Duration covered by the stored nodes.
    pub fn span(&self) -> f64 {
        (self.nodes.len() - 1) as f64 * self.dt
    }

    pub fn push(&mut self, node: HistoryNode) {
        self.nodes.push_back(node);
        self.trim();
    }

    pub fn node(&self, index: i64) -> Option<&HistoryNode> {
        let i = index - self.first;
        if i < 0 {
            None
        } else {
            self.nodes.get(i as usize)
        }
    }

    #[inline]
    pub(crate) fn at(&self, index: i64) -> &HistoryNode {
        &self.nodes[(index - self.first) as usize]
    }

    #[cfg(test)]
    pub(crate) fn at_mut(&mut self, index: i64) -> &mut HistoryNode {
        &mut self.nodes[(index - self.first) as usize]
    }

    pub fn latest(&self) -> &HistoryNode {
        self.nodes.back().expect("history is never empty")
    }

    pub fn nodes(&self) -> impl Iterator<Item = (i64, &HistoryNode)> {
        self.nodes
            .iter()
            .enumerate()
            .map(move |(i, n)| (self.first + i as i64, n))
    }

    /// `(t, phi, phi_dot, tilde)` samples.
    pub fn samples(&self) -> Vec<(f64, f64, f64, f64)> {
        self.nodes()
            .map(|(i, n)| (self.time_of(i), n.phi, n.phi_dot, n.tilde))
            .collect()
    }

    fn check_index_range(&self, lo: i64, hi: i64, t: f64) -> Result<()> {
        if lo < self.first || hi > self.last_index() {
            let lag = self.latest_time() - t;
            Err(Error::HistoryUnderrun {
                lag,
                span: self.span(),
            })
        } else {
            Ok(())
        }
    }

    /// Locate `t` as node index plus fraction in `[0, 1)`. Times within a
    /// relative `1e-9` of a node snap to it.
    fn locate(&self, t: f64) -> (i64, f64) {
        let pos = t / self.dt;
        let nearest = pos.round();
        if (pos - nearest).abs() < 1e-9 {
            (nearest as i64, 0.0)
        } else {
            let n = pos.floor();
            (n as i64, pos - n)
        }
    }

    /// `phi` at node `n` plus fraction `s`.
    pub(crate) fn phi_frac(&self, n: i64, s: f64) -> f64 {
        let a = self.at(n);
        if s == 0.0 {
            return a.phi;
        }
        let b = self.at(n + 1);
        hermite(a.phi, a.phi_dot, b.phi, b.phi_dot, self.dt, s)
    }

    fn stencil_base(&self, n: i64) -> i64 {
        (n - 1).clamp(self.first, (self.last_index() - 3).max(self.first))
    }

    pub(crate) fn phi_dot_frac(&self, n: i64, s: f64) -> f64 {
        if s == 0.0 {
            return self.at(n).phi_dot;
        }
        let b = self.stencil_base(n);
        let f = [
            self.at(b).phi_dot,
            self.at(b + 1).phi_dot,
            self.at(b + 2).phi_dot,
            self.at(b + 3).phi_dot,
        ];
        lagrange4(f, (n - b) as f64 + s)
    }

    pub(crate) fn tilde_frac(&self, n: i64, s: f64) -> f64 {
        let a = self.at(n);
        if s == 0.0 {
            return a.tilde;
        }
        let b = self.at(n + 1);
        hermite(a.tilde, a.tilde_dot, b.tilde, b.tilde_dot, self.dt, s)
    }

    pub(crate) fn tilde_dot_frac(&self, n: i64, s: f64) -> f64 {
        if s == 0.0 {
            return self.at(n).tilde_dot;
        }
        let b = self.stencil_base(n);
        let f = [
            self.at(b).tilde_dot,
            self.at(b + 1).tilde_dot,
            self.at(b + 2).tilde_dot,
            self.at(b + 3).tilde_dot,
        ];
        lagrange4(f, (n - b) as f64 + s)
    }

    /// Interpolated `(phi, phi_dot)` at absolute time `t`.
    pub fn at_time(&self, t: f64) -> Result<(f64, f64)> {
        let (n, s) = self.locate(t);
        let hi = if s == 0.0 { n } else { n + 1 };
        self.check_index_range(n, hi, t)?;
        if s != 0.0 && self.len() < 4 {
            return Err(Error::HistoryUnderrun {
                lag: self.latest_time() - t,
                span: self.span(),
            });
        }
        Ok((self.phi_frac(n, s), self.phi_dot_frac(n, s)))
    }

    /// Interpolated `(phi, phi_dot)` at `lag` seconds before the latest node.
    pub fn at_lag(&self, lag: f64) -> Result<(f64, f64)> {
        if lag < 0.0 || lag > self.span() * (1.0 + 1e-12) {
            return Err(Error::HistoryUnderrun {
                lag,
                span: self.span(),
            });
        }
        self.at_time(self.latest_time() - lag)
    }

    /// Interpolated `(tilde, tilde_dot)` at absolute time `t`.
    pub fn tilde_at_time(&self, t: f64) -> Result<(f64, f64)> {
        let (n, s) = self.locate(t);
        let hi = if s == 0.0 { n } else { n + 1 };
        self.check_index_range(n, hi, t)?;
        Ok((self.tilde_frac(n, s), self.tilde_dot_frac(n, s)))
    }

    /// `int w(t) phi(t) dt` over nodes `[end - len, end]`, composite
    /// trapezoid with Hermite end corrections. For periodic integrands the
    /// corrections cancel and this is the plain trapezoid sum.
    pub fn window_integral(&self, end: i64, len: usize, weight: Weight, period: f64) -> Result<f64> {
        let start = end - len as i64;
        self.check_index_range(start, end, self.time_of(start))?;
        let h = self.dt;
        let value = |i: i64| {
            let node = self.at(i);
            let (w, dw) = weight.eval(self.time_of(i), period);
            (w * node.phi, dw * node.phi + w * node.phi_dot)
        };
        let (f_start, d_start) = value(start);
        let (f_end, d_end) = value(end);
        let mut inner = 0.0;
        for i in (start + 1)..end {
            inner += value(i).0;
        }
        Ok(h * (0.5 * (f_start + f_end) + inner) + h * h / 12.0 * (d_start - d_end))
    }

    /// Trapezoid average of `phi` over nodes `[start, start + len]`.
    pub fn trapezoid_mean(&self, start: i64, len: usize) -> Result<f64> {
        let end = start + len as i64;
        self.check_index_range(start, end, self.time_of(start))?;
        let mut sum = 0.5 * (self.at(start).phi + self.at(end).phi);
        for i in (start + 1)..end {
            sum += self.at(i).phi;
        }
        Ok(sum / len as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn smooth(t: f64) -> (f64, f64) {
        (
            0.3 * t + (7.0 * t).sin() + 0.2 * (3.0 * t).cos(),
            0.3 + 7.0 * (7.0 * t).cos() - 0.6 * (3.0 * t).sin(),
        )
    }

    fn history(dt: f64, first: i64, n: usize) -> HistorySegment {
        let nodes = (0..n)
            .map(|i| {
                let (f, d) = smooth((first + i as i64) as f64 * dt);
                HistoryNode::new(f, d)
            })
            .collect();
        HistorySegment::new(dt, first, nodes).unwrap()
    }

    #[test]
    fn nodes_are_exact() {
        let h = history(0.01, 10, 50);
        let (f, d) = h.at_time(0.2).unwrap();
        assert_eq!((f, d), (h.node(20).unwrap().phi, h.node(20).unwrap().phi_dot));
    }

    #[test]
    fn interpolation_is_fourth_order() {
        let mut errs = vec![];
        for dt in [0.02, 0.01] {
            let h = history(dt, 0, (2.0 / dt) as usize + 1);
            let mut worst = 0.0f64;
            for k in 0..200 {
                let t = 0.05 + k as f64 * 0.0093;
                let (f, d) = h.at_time(t).unwrap();
                let (fe, de) = smooth(t);
                worst = worst.max((f - fe).abs()).max((d - de).abs() / 7.0);
            }
            errs.push(worst);
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 12.0, "ratio {ratio}");
    }

    #[test]
    fn midpoint_helpers_agree_with_general_forms() {
        let (f0, d0, f1, d1, h) = (0.3, -1.2, 0.9, 2.0, 0.1);
        assert_relative_eq!(hermite_mid(f0, d0, f1, d1, h), hermite(f0, d0, f1, d1, h, 0.5), max_relative = 1e-15);
        // exact for cubics: x^3 on [0, h] has slope 3 (h/2)^2 at the midpoint
        assert_relative_eq!(hermite_mid_slope(0.0, 0.0, h * h * h, 3.0 * h * h, h), 0.75 * h * h, max_relative = 1e-14);
        // half integrals of the Hermite cubic add to the full one
        let first = hermite_half_integral(f0, d0, f1, d1, h);
        let second = hermite_half_integral(f1, -d1, f0, -d0, h);
        assert_relative_eq!(first + second, hermite_integral(f0, d0, f1, d1, h), max_relative = 1e-14);
    }

    #[test]
    fn lag_beyond_span_is_an_error() {
        let h = history(0.01, 0, 101);
        assert!(h.at_lag(0.5).is_ok());
        assert!(matches!(h.at_lag(1.01), Err(Error::HistoryUnderrun { .. })));
        assert!(h.at_lag(-0.1).is_err());
    }

    #[test]
    fn capacity_drops_old_nodes() {
        let mut h = history(0.01, 0, 10).with_capacity_limit(8);
        assert_eq!(h.first_index(), 2);
        h.push(HistoryNode::new(1.0, 0.0));
        assert_eq!(h.first_index(), 3);
        assert_eq!(h.last_index(), 10);
    }

    #[test]
    fn window_integral_of_constant_and_periodic() {
        let period = 0.5;
        let n = 64;
        let dt = period / n as f64;
        let nodes: Vec<_> = (0..=2 * n).map(|_| HistoryNode::new(2.0, 0.0)).collect();
        let h = HistorySegment::new(dt, 0, nodes).unwrap();
        assert_relative_eq!(h.window_integral(n as i64, n, Weight::One, period).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(h.trapezoid_mean(3, n).unwrap(), 2.0, max_relative = 1e-14);
        assert!(h.window_integral(n as i64, n, Weight::Cos(2), period).unwrap().abs() < 1e-14);
    }
}
