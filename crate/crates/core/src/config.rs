//! Run configuration: a line-oriented `section.key = value` file.
//!
//! Missing keys take defaults, unknown keys are rejected, and environment
//! variables `CBC_SECTION__KEY` override the file. The resolved
//! configuration renders back to the same format; its SHA-256 identifies
//! every artifact of a run.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::calibration::CalibrationSettings;
use crate::continuation::ContinuationSettings;
use crate::delay::ControlConfig;
use crate::error::{Error, Result};
use crate::experiment::SimSettings;
use crate::floquet::{ChartAxes, TangentPolicy};
use crate::model::PendulumParams;
use crate::oracle::BvpSettings;

pub const ENV_PREFIX: &str = "CBC_";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSection {
    pub gain: f64,
    pub deriv_ratio: f64,
    pub relaxation: f64,
    pub projection_order: usize,
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection {
            gain: 1.0,
            deriv_ratio: crate::model::DEFAULT_DERIV_RATIO,
            relaxation: 1.0,
            projection_order: 0,
        }
    }
}

impl ControlSection {
    /// Controller with the mean reference set to `phi0` and higher
    /// reference harmonics zero.
    pub fn control(&self, phi0: f64, period: f64) -> ControlConfig {
        let mut c = ControlConfig::scalar(self.gain, 0.0, period);
        c.deriv_ratio = self.deriv_ratio;
        c.relaxation = self.relaxation;
        c.projection_order = self.projection_order;
        c.reference = vec![0.0; 2 * self.projection_order + 1];
        c.set_scalar_reference(phi0, period);
        c
    }
}

/// Initial data for `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimStart {
    /// Uncontrolled warm-up from `(phi0, 0)`.
    Warmup,
    /// Exactly on the uncontrolled orbit with average phase `phi0`.
    Orbit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateSection {
    pub p: f64,
    pub phi0: f64,
    pub periods: usize,
    pub start: SimStart,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            p: 0.02,
            phi0: 4.1,
            periods: 50,
            start: SimStart::Warmup,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartSection {
    pub axes: ChartAxes,
    pub tangent: TangentPolicy,
}

impl Default for ChartSection {
    fn default() -> Self {
        ChartSection {
            axes: ChartAxes {
                g_min: 0.0,
                g_max: 1.5,
                g_cells: 60,
                phase_half_width: 0.3,
                phase_cells: 60,
                mesh: 64,
            },
            tangent: TangentPolicy::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: PendulumParams,
    pub control: ControlSection,
    pub sim: SimSettings,
    pub simulate: SimulateSection,
    pub oracle: BvpSettings,
    /// Amplitude of the stable rotation both continuations start from.
    pub start_p: f64,
    pub continuation: ContinuationSettings,
    pub charts: ChartSection,
    pub calibrate: CalibrationSettings,
    pub output_dir: String,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: PendulumParams::default(),
            control: ControlSection::default(),
            sim: SimSettings::default(),
            simulate: SimulateSection::default(),
            oracle: BvpSettings {
                phase_min: 2.0,
                ..BvpSettings::default()
            },
            start_p: 0.02,
            continuation: ContinuationSettings::default(),
            charts: ChartSection::default(),
            calibrate: CalibrationSettings::default(),
            output_dir: "out".into(),
            seed: 1,
        }
    }
}

trait ConfigValue: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected a number, got `{s}`"))
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl ConfigValue for usize {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for String {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        Ok(s.trim_matches('"').to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for Vec<f64> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|x| f64::parse(x.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(|x| x.render()).collect::<Vec<_>>().join(", ")
    }
}

impl ConfigValue for TangentPolicy {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exact" => Ok(TangentPolicy::Exact),
            "oracle" => Ok(TangentPolicy::Oracle),
            _ => Err(format!("expected `exact` or `oracle`, got `{s}`")),
        }
    }
    fn render(&self) -> String {
        match self {
            TangentPolicy::Exact => "exact",
            TangentPolicy::Oracle => "oracle",
        }
        .into()
    }
}

impl ConfigValue for SimStart {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "warmup" => Ok(SimStart::Warmup),
            "orbit" => Ok(SimStart::Orbit),
            _ => Err(format!("expected `warmup` or `orbit`, got `{s}`")),
        }
    }
    fn render(&self) -> String {
        match self {
            SimStart::Warmup => "warmup",
            SimStart::Orbit => "orbit",
        }
        .into()
    }
}

macro_rules! keys {
    ($( $key:literal => $($field:tt).+ : $ty:ty ),* $(,)?) => {
        fn set_key(cfg: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
            match key {
                $( $key => { cfg.$($field).+ = <$ty as ConfigValue>::parse(value)?; Ok(()) } )*
                _ => Err(format!("unknown key `{key}`")),
            }
        }

        fn entries(cfg: &RunConfig) -> Vec<(&'static str, String)> {
            vec![ $( ($key, <$ty as ConfigValue>::render(&cfg.$($field).+)) ),* ]
        }

        /// Every accepted key, in rendering order.
        pub const KEYS: &[&str] = &[ $( $key ),* ];
    };
}

keys! {
    "output_dir" => output_dir: String,
    "seed" => seed: u64,
    "model.mass" => model.mass: f64,
    "model.length" => model.length: f64,
    "model.damping" => model.damping: f64,
    "model.gravity" => model.gravity: f64,
    "model.omega" => model.omega: f64,
    "control.gain" => control.gain: f64,
    "control.deriv_ratio" => control.deriv_ratio: f64,
    "control.relaxation" => control.relaxation: f64,
    "control.projection_order" => control.projection_order: usize,
    "sim.steps_per_period" => sim.steps_per_period: usize,
    "sim.eps_trans" => sim.eps_trans: f64,
    "sim.consecutive" => sim.consecutive: usize,
    "sim.max_periods" => sim.max_periods: usize,
    "sim.blowup_bound" => sim.blowup_bound: f64,
    "simulate.p" => simulate.p: f64,
    "simulate.phi0" => simulate.phi0: f64,
    "simulate.periods" => simulate.periods: usize,
    "simulate.start" => simulate.start: SimStart,
    "oracle.steps_per_period" => oracle.oracle.steps_per_period: usize,
    "oracle.tol" => oracle.oracle.tol: f64,
    "oracle.max_iter" => oracle.oracle.max_iter: usize,
    "oracle.h0" => oracle.h0: f64,
    "oracle.h_min" => oracle.h_min: f64,
    "oracle.h_max" => oracle.h_max: f64,
    "oracle.max_points" => oracle.max_points: usize,
    "oracle.p_min" => oracle.p_min: f64,
    "oracle.p_max" => oracle.p_max: f64,
    "oracle.phase_min" => oracle.phase_min: f64,
    "oracle.phase_max" => oracle.phase_max: f64,
    "oracle.newton_iter" => oracle.newton_iter: usize,
    "continuation.start_p" => start_p: f64,
    "continuation.sigma_p" => continuation.scaling.sigma_p: f64,
    "continuation.sigma_phi" => continuation.scaling.sigma_phi: f64,
    "continuation.tol" => continuation.newton_tol: f64,
    "continuation.max_iter" => continuation.max_iter: usize,
    "continuation.damping_halvings" => continuation.damping_halvings: usize,
    "continuation.fd_dp" => continuation.fd_dp: f64,
    "continuation.fd_dphi" => continuation.fd_dphi: f64,
    "continuation.h0" => continuation.h0: f64,
    "continuation.h_min" => continuation.h_min: f64,
    "continuation.h_max" => continuation.h_max: f64,
    "continuation.grow" => continuation.grow: f64,
    "continuation.max_points" => continuation.max_points: usize,
    "continuation.p_min" => continuation.p_min: f64,
    "continuation.p_max" => continuation.p_max: f64,
    "continuation.max_lost" => continuation.max_lost: usize,
    "continuation.start_sweeps" => continuation.start_sweeps: usize,
    "charts.g_min" => charts.axes.g_min: f64,
    "charts.g_max" => charts.axes.g_max: f64,
    "charts.g_cells" => charts.axes.g_cells: usize,
    "charts.phase_half_width" => charts.axes.phase_half_width: f64,
    "charts.phase_cells" => charts.axes.phase_cells: usize,
    "charts.mesh" => charts.axes.mesh: usize,
    "charts.tangent" => charts.tangent: TangentPolicy,
    "calibrate.lengths" => calibrate.lengths: Vec<f64>,
    "calibrate.damping" => calibrate.damping: f64,
    "calibrate.p_start" => calibrate.p_start: f64,
    "calibrate.p0_min" => calibrate.window.0: f64,
    "calibrate.p0_max" => calibrate.window.1: f64,
    "calibrate.seed_periods" => calibrate.seed_periods: usize,
}

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

impl RunConfig {
    /// Parse configuration text; line numbers in errors are 1-based, and
    /// line 0 refers to the configuration as a whole.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| config_err(line, format!("expected `key = value`, got `{content}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(config_err(line, format!("duplicate key `{key}`")));
            }
            set_key(&mut cfg, key, value.trim()).map_err(|m| config_err(line, m))?;
            // defaults are valid, so a violation here is due to this line
            cfg.validate().map_err(|e| match e {
                Error::Config { message, .. } => config_err(line, message),
                other => config_err(line, other.to_string()),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(0, format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Apply `CBC_SECTION__KEY=value` overrides from `vars`.
    pub fn apply_overrides<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let name = k.as_ref().strip_prefix(ENV_PREFIX)?;
                Some((name.to_ascii_lowercase().replace("__", "."), v.as_ref().to_string()))
            })
            .collect();
        pairs.sort();
        for (key, value) in pairs {
            set_key(self, &key, value.trim()).map_err(|m| config_err(0, format!("environment override: {m}")))?;
        }
        self.validate()
    }

    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_overrides(std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.control.relaxation;
        if !(r > 0.0 && r <= 1.0) {
            return Err(config_err(
                0,
                format!("control.relaxation = {r} violates 0 < R <= 1"),
            ));
        }
        self.model.validate()?;
        let positive = [
            ("sim.steps_per_period", self.sim.steps_per_period),
            ("sim.max_periods", self.sim.max_periods),
            ("oracle.steps_per_period", self.oracle.oracle.steps_per_period),
            ("charts.mesh", self.charts.axes.mesh),
            ("charts.g_cells", self.charts.axes.g_cells),
            ("charts.phase_cells", self.charts.axes.phase_cells),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(config_err(0, format!("{key} must be positive")));
            }
        }
        let scaling = self.continuation.scaling;
        if !(scaling.sigma_p > 0.0 && scaling.sigma_phi > 0.0) {
            return Err(config_err(0, "continuation scales must be positive"));
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, value) in entries(self) {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Hex SHA-256 of the rendered configuration.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("resolved.cfg");
        std::fs::write(&path, self.render())?;
        Ok(path)
    }
}
