//! Truncated Fourier projection of a periodic signal and its reconstruction.

use cbc_pendulum::spectral::{project, reconstruct};

fn main() -> cbc_pendulum::Result<()> {
    let period = 0.2;
    let n = 40;
    let w = 2.0 * std::f64::consts::PI / period;
    let signal = |t: f64| 0.3 + (w * t).sin() - 0.2 * (3.0 * w * t).cos();
    let samples: Vec<f64> = (0..n).map(|i| signal(i as f64 * period / n as f64)).collect();
    for order in [0, 1, 3] {
        let coeffs = project(&samples, period, order)?.scale(period);
        let err = (0..200)
            .map(|i| {
                let t = i as f64 * period / 200.0;
                (reconstruct(&coeffs, t) - signal(t)).abs()
            })
            .fold(0.0, f64::max);
        println!("order {order}: {} coefficients, max reconstruction error {err:.2e}", coeffs.as_slice().len());
    }
    Ok(())
}
