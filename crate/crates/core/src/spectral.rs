//! Fourier projections onto the real trigonometric basis
//!
//! ```text
//! b_k(t) = sqrt(2/T) cos(k t)   k < 0
//! b_0    = sqrt(1/T)
//! b_k(t) = sqrt(2/T) sin(k t)   k > 0
//! ```
//!
//! with `[P_N y]_k = (1/T) int_0^T b_k(2 pi s / T) y(s) ds` and
//! `[Q_N x](t) = sum_k x_k b_k(2 pi t / T)`. This pair is not a mutual
//! inverse: `P_N Q_N = (1/T) I`. [`WindowProjection`] carries the same
//! projection with that factor absorbed, so that its order-zero part is the
//! plain period average.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Coefficient vector `x` indexed `k = -N ..= N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    pub order: usize,
    pub period: f64,
    coeffs: Vec<f64>,
}

impl SpectralCoeffs {
    pub fn zeros(order: usize, period: f64) -> Self {
        SpectralCoeffs {
            order,
            period,
            coeffs: vec![0.0; 2 * order + 1],
        }
    }

    pub fn from_vec(coeffs: Vec<f64>, period: f64) -> Result<Self> {
        if coeffs.len() % 2 != 1 {
            return Err(Error::InvalidParameter(format!(
                "coefficient vector must have odd length 2N+1, got {}",
                coeffs.len()
            )));
        }
        Ok(SpectralCoeffs {
            order: coeffs.len() / 2,
            period,
            coeffs,
        })
    }

    /// Order-zero coefficients for a constant reference `phi0` (rad):
    /// `x_0 = phi0 sqrt(T)`, so that `Q_0 x = phi0`.
    pub fn from_scalar(phi0: f64, period: f64) -> Self {
        SpectralCoeffs {
            order: 0,
            period,
            coeffs: vec![phi0 * period.sqrt()],
        }
    }

    /// Constant part of the reconstruction, `x_0 / sqrt(T)` (rad).
    pub fn scalar(&self) -> f64 {
        self.get(0) / self.period.sqrt()
    }

    pub fn get(&self, k: i64) -> f64 {
        self.coeffs[(k + self.order as i64) as usize]
    }

    pub fn set(&mut self, k: i64, value: f64) {
        let i = (k + self.order as i64) as usize;
        self.coeffs[i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn scale(&self, factor: f64) -> Self {
        SpectralCoeffs {
            order: self.order,
            period: self.period,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }
}

/// `b_k(2 pi t / T)`.
pub fn basis(k: i64, t: f64, period: f64) -> f64 {
    let arg = 2.0 * PI * t / period;
    match k.cmp(&0) {
        std::cmp::Ordering::Less => (2.0 / period).sqrt() * (k as f64 * arg).cos(),
        std::cmp::Ordering::Greater => (2.0 / period).sqrt() * (k as f64 * arg).sin(),
        std::cmp::Ordering::Equal => (1.0 / period).sqrt(),
    }
}

/// Time derivative of [`basis`].
pub fn basis_derivative(k: i64, t: f64, period: f64) -> f64 {
    let rate = 2.0 * PI / period;
    let arg = rate * t;
    let kf = k as f64;
    match k.cmp(&0) {
        std::cmp::Ordering::Less => -(2.0 / period).sqrt() * kf * rate * (kf * arg).sin(),
        std::cmp::Ordering::Greater => (2.0 / period).sqrt() * kf * rate * (kf * arg).cos(),
        std::cmp::Ordering::Equal => 0.0,
    }
}

/// Scalar `alpha` with `P_N Q_N = alpha I`.
pub fn projection_scale(period: f64) -> f64 {
    1.0 / period
}

/// `P_N` by trapezoid quadrature. `samples[i]` is the signal at `t = i T / n`,
/// covering exactly one period with the endpoint omitted.
pub fn project(samples: &[f64], period: f64, order: usize) -> Result<SpectralCoeffs> {
    let required = 4 * order + 4;
    if samples.len() < required {
        return Err(Error::Aliasing {
            samples: samples.len(),
            order,
            required,
        });
    }
    let n = samples.len();
    let h = period / n as f64;
    let mut out = SpectralCoeffs::zeros(order, period);
    let n_i = order as i64;
    for k in -n_i..=n_i {
        let sum: f64 = samples
            .iter()
            .enumerate()
            .map(|(i, y)| basis(k, i as f64 * h, period) * y)
            .sum();
        out.set(k, sum * h / period);
    }
    Ok(out)
}

/// `Q_N x` at time `t`.
pub fn reconstruct(coeffs: &SpectralCoeffs, t: f64) -> f64 {
    let n = coeffs.order as i64;
    (-n..=n)
        .map(|k| coeffs.get(k) * basis(k, t, coeffs.period))
        .sum()
}

/// Time derivative of `Q_N x` at `t`.
pub fn reconstruct_derivative(coeffs: &SpectralCoeffs, t: f64) -> f64 {
    let n = coeffs.order as i64;
    (-n..=n)
        .map(|k| coeffs.get(k) * basis_derivative(k, t, coeffs.period))
        .sum()
}

/// Band-limited part of a signal over one window, in real Fourier form:
/// `mean + sum_j (cos_j cos(j W t) + sin_j sin(j W t))` with `W = 2 pi / T`.
///
/// Equal to `Q_N P_N y / alpha`. Order zero is exactly the window mean.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowProjection {
    pub period: f64,
    pub mean: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl WindowProjection {
    pub fn order(&self) -> usize {
        self.cos.len()
    }

    /// Build from window integrals: `mean_integral = int y`,
    /// `cos_integrals[j-1] = int cos(j W s) y(s) ds`, likewise for sine.
    pub fn from_integrals(
        period: f64,
        mean_integral: f64,
        cos_integrals: &[f64],
        sin_integrals: &[f64],
    ) -> Self {
        let two_over_t = 2.0 / period;
        WindowProjection {
            period,
            mean: mean_integral / period,
            cos: cos_integrals.iter().map(|c| two_over_t * c).collect(),
            sin: sin_integrals.iter().map(|s| two_over_t * s).collect(),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let rate = 2.0 * PI / self.period;
        let mut v = self.mean;
        for j in 0..self.order() {
            let arg = (j + 1) as f64 * rate * t;
            v += self.cos[j] * arg.cos() + self.sin[j] * arg.sin();
        }
        v
    }

    /// Coefficients in the `b_k` basis, i.e. `P_N y`.
    pub fn to_coeffs(&self) -> SpectralCoeffs {
        let n = self.order();
        let mut out = SpectralCoeffs::zeros(n, self.period);
        out.set(0, self.mean / self.period.sqrt());
        let s = (2.0 * self.period).sqrt();
        for j in 1..=n {
            out.set(-(j as i64), self.cos[j - 1] / s);
            out.set(j as i64, self.sin[j - 1] / s);
        }
        out
    }
}
