//! Pick the pendulum length whose fold lies in the target amplitude window.

use cbc_pendulum::calibration::{calibrate, CalibrationSettings};
use cbc_pendulum::model::PendulumParams;

fn main() -> cbc_pendulum::Result<()> {
    let settings = CalibrationSettings {
        lengths: vec![0.05, 0.10, 0.15],
        ..CalibrationSettings::default()
    };
    let cal = calibrate(&PendulumParams::default(), &settings)?;
    println!(
        "length {} m, damping {} N m s: fold p0 = {:.6e} m at avg phase {:.4} rad (mu = {:.7})",
        cal.params.length, cal.params.damping, cal.p0, cal.fold_phase, cal.fold_multiplier
    );
    Ok(())
}
