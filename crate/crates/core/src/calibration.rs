//! Calibrated default model and the sweep that produced it.
//!
//! Only `m l` and `m l^2` enter the dynamics, so the mass is fixed and the
//! length is swept at small fixed damping until the rotation family has a
//! saddle-node inside the target amplitude window.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::PendulumParams;
use crate::oracle::{continue_branch_bvp, locate_fold, seed_rotation, BvpSettings};

/// Effective length (m) of the default model.
pub const DEFAULT_LENGTH: f64 = 0.1;
/// Viscous damping (N m s) of the default model.
pub const DEFAULT_DAMPING: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSettings {
    pub lengths: Vec<f64>,
    pub damping: f64,
    /// Amplitude at which the sweep seeds a stable rotation.
    pub p_start: f64,
    /// Accepted fold amplitudes `(lo, hi)` in metres.
    pub window: (f64, f64),
    pub bvp: BvpSettings,
    pub seed_periods: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            lengths: (1..=20).map(|k| 0.05 * k as f64).collect(),
            damping: DEFAULT_DAMPING,
            p_start: 0.02,
            window: (0.5e-3, 15e-3),
            bvp: BvpSettings::default(),
            seed_periods: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub params: PendulumParams,
    pub p0: f64,
    pub fold_phase: f64,
    pub fold_multiplier: f64,
}

/// Fold of the rotation family for one parameter set, if one is found.
pub fn fold_for(params: &PendulumParams, p_start: f64, bvp: &BvpSettings, seed_periods: usize) -> Result<Calibration> {
    let start = seed_rotation(params, p_start, &bvp.oracle, seed_periods)?;
    let branch = continue_branch_bvp(params, &start, bvp)?;
    let fold = locate_fold(params, &branch, &bvp.oracle)?;
    Ok(Calibration {
        params: *params,
        p0: fold.p0,
        fold_phase: fold.orbit.avg_phase,
        fold_multiplier: fold.orbit.dominant_multiplier().re,
    })
}

/// Evaluate all lengths in parallel; return the first in grid order whose
/// fold lies inside the window.
pub fn calibrate(base: &PendulumParams, settings: &CalibrationSettings) -> Result<Calibration> {
    let results: Vec<Result<Calibration>> = settings
        .lengths
        .par_iter()
        .map(|&length| {
            let params = PendulumParams {
                length,
                damping: settings.damping,
                ..*base
            };
            params.validate()?;
            fold_for(&params, settings.p_start, &settings.bvp, settings.seed_periods)
        })
        .collect();
    results
        .into_iter()
        .filter_map(|r| r.ok())
        .find(|c| c.p0 > settings.window.0 && c.p0 < settings.window.1)
        .ok_or(Error::NoFold)
}
