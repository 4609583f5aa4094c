//! TOML run configuration. Every frequency carries its unit; unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use crate::circuits::TimeBudget;
use crate::circuits::PhaseCorrection;
use crate::dynamics::StepPolicy;
use crate::error::{Error, Result};
use crate::model::{mhz_to_angular, DecayRates, PhysicalParams, ProtocolRatios};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrequencyUnit {
    /// Value is `Ω/2π` in MHz.
    #[serde(rename = "MHz")]
    Mhz,
    #[serde(rename = "rad_per_us")]
    RadPerUs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frequency {
    pub value: f64,
    pub unit: FrequencyUnit,
}

impl Frequency {
    pub fn mhz(value: f64) -> Self {
        Self { value, unit: FrequencyUnit::Mhz }
    }

    pub fn rad_per_us(value: f64) -> Self {
        Self { value, unit: FrequencyUnit::RadPerUs }
    }

    /// Angular frequency in rad/µs.
    pub fn angular(&self) -> f64 {
        match self.unit {
            FrequencyUnit::Mhz => mhz_to_angular(self.value),
            FrequencyUnit::RadPerUs => self.value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum C6Unit {
    /// `C6/2π` in MHz·µm⁶.
    #[serde(rename = "MHz_um6")]
    MhzUm6,
    #[serde(rename = "rad_per_us_um6")]
    RadPerUsUm6,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct C6 {
    pub value: f64,
    pub unit: C6Unit,
}

impl C6 {
    pub fn angular(&self) -> f64 {
        match self.unit {
            C6Unit::MhzUm6 => mhz_to_angular(self.value),
            C6Unit::RadPerUsUm6 => self.value,
        }
    }
}

/// Explicit list or evenly spaced points including both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, points: usize },
}

impl Grid {
    pub fn range(start: f64, stop: f64, points: usize) -> Self {
        Self::Range { start, stop, points }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Self::List(v) => v.clone(),
            Self::Range { start, stop, points } => match points {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..*n).map(|k| start + (stop - start) * k as f64 / (n - 1) as f64).collect(),
            },
        };
        if v.is_empty() {
            return Err(Error::Config("grid has no points".into()));
        }
        if let Some(x) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::Config(format!("grid contains non-finite value {x}")));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub omega_e: Frequency,
    pub omega_c_over_omega_e: f64,
    pub delta_over_omega_e: f64,
    pub omega_r_over_omega_e: f64,
    pub v_over_omega_c: f64,
    /// Overrides `v_over_omega_c`.
    pub v: Option<Frequency>,
    /// Defaults to `V`.
    pub delta_small: Option<Frequency>,
    /// Take `V = C6/l⁶` from `c6` and `spacing_um`.
    pub v_from_c6: bool,
    pub decay: bool,
    pub tau_r_us: f64,
    pub tau_big_r_us: f64,
    pub tau_e_us: f64,
    pub control_control: bool,
    pub spacing_um: f64,
    pub c6: Option<C6>,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        let r = ProtocolRatios::default();
        Self {
            omega_e: Frequency::mhz(90.0),
            omega_c_over_omega_e: r.omega_c_over_omega_e,
            delta_over_omega_e: r.delta_over_omega_e,
            omega_r_over_omega_e: r.omega_r_over_omega_e,
            v_over_omega_c: r.v_over_omega_c,
            v: None,
            delta_small: None,
            v_from_c6: false,
            decay: true,
            tau_r_us: 540.0,
            tau_big_r_us: 540.0,
            tau_e_us: 0.165,
            control_control: false,
            spacing_um: 9.3,
            c6: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub points_per_period: f64,
    pub min_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        let p = StepPolicy::default();
        Self { points_per_period: p.points_per_period, min_steps: p.min_steps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig2aConfig {
    pub omega_c_over_omega_e: Grid,
    pub dissipative: bool,
}

impl Default for Fig2aConfig {
    fn default() -> Self {
        Self { omega_c_over_omega_e: Grid::range(0.0, 4.0, 17), dissipative: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig2bConfig {
    pub delta_over_omega_e: Grid,
    pub dissipative: bool,
}

impl Default for Fig2bConfig {
    fn default() -> Self {
        Self { delta_over_omega_e: Grid::range(0.0, 10.0, 41), dissipative: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig2cConfig {
    pub v_over_omega_e: Grid,
    pub dissipative: bool,
}

impl Default for Fig2cConfig {
    fn default() -> Self {
        Self { v_over_omega_e: Grid::range(0.0, 10.0, 41), dissipative: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig2dConfig {
    pub t_total_us: Grid,
    pub dissipative: bool,
}

impl Default for Fig2dConfig {
    fn default() -> Self {
        Self { t_total_us: Grid::List(vec![0.1, 0.15, 0.2, 0.25, 0.27, 0.3, 0.4, 0.5, 0.7, 1.0, 1.5, 2.0]), dissipative: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig3aConfig {
    pub v_over_omega_c: Grid,
    pub dissipative: bool,
    /// Reference point standing in for `V → ∞` when separating the blockade
    /// error from the `V`-independent floor.
    pub floor_v_over_omega_c: f64,
}

impl Default for Fig3aConfig {
    fn default() -> Self {
        Self {
            v_over_omega_c: Grid::List(vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0]),
            dissipative: true,
            floor_v_over_omega_c: 40.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig3bConfig {
    pub spacing_um: Grid,
}

impl Default for Fig3bConfig {
    fn default() -> Self {
        Self { spacing_um: Grid::range(4.0, 14.0, 51) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepsConfig {
    pub fig2a: Fig2aConfig,
    pub fig2b: Fig2bConfig,
    pub fig2c: Fig2cConfig,
    pub fig2d: Fig2dConfig,
    pub fig3a: Fig3aConfig,
    pub fig3b: Fig3bConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitsConfig {
    pub dissipative: bool,
    pub phase_correction: PhaseCorrection,
    pub time_budget: TimeBudget,
    pub dj_durations_us: Grid,
    pub ising_duration_us: f64,
    pub ising_ht: Grid,
}

impl Default for CircuitsConfig {
    fn default() -> Self {
        Self {
            dissipative: true,
            phase_correction: PhaseCorrection::Full,
            time_budget: TimeBudget::PerGate,
            dj_durations_us: Grid::List(vec![0.3, 0.5, 0.8, 1.2, 1.6, 2.0]),
            ising_duration_us: 0.8,
            ising_ht: Grid::range(0.0, std::f64::consts::PI, 41),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub physics: PhysicsConfig,
    pub integrator: IntegratorConfig,
    pub sweeps: SweepsConfig,
    pub circuits: CircuitsConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.params()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Canonical TOML form, used as the provenance echo.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn decay(&self) -> DecayRates {
        if self.physics.decay {
            DecayRates::from_lifetimes(self.physics.tau_r_us, self.physics.tau_big_r_us, self.physics.tau_e_us)
        } else {
            DecayRates::none()
        }
    }

    pub fn ratios(&self) -> ProtocolRatios {
        let p = &self.physics;
        ProtocolRatios {
            omega_c_over_omega_e: p.omega_c_over_omega_e,
            delta_over_omega_e: p.delta_over_omega_e,
            omega_r_over_omega_e: p.omega_r_over_omega_e,
            v_over_omega_c: p.v_over_omega_c,
        }
    }

    pub fn params(&self) -> Result<PhysicalParams> {
        let p = &self.physics;
        for (name, tau) in [("tau_r_us", p.tau_r_us), ("tau_big_r_us", p.tau_big_r_us), ("tau_e_us", p.tau_e_us)] {
            if self.physics.decay && !(tau > 0.0) {
                return Err(Error::Config(format!("`physics.{name}` must be positive, got {tau}")));
            }
        }
        let mut params = PhysicalParams::from_ratios(p.omega_e.angular(), &self.ratios(), self.decay())?;
        params.control_control = p.control_control;
        params.spacing = p.spacing_um;
        params.c6 = p.c6.map(|c| c.angular());
        if let Some(v) = p.v {
            params.v = v.angular();
            params.delta_small = params.v;
        }
        if p.v_from_c6 {
            let c6 = params.c6.ok_or_else(|| Error::MissingKey("physics.c6".into()))?;
            params = params.with_vdw(c6, p.spacing_um)?;
        }
        if let Some(d) = p.delta_small {
            params.delta_small = d.angular();
        }
        params.validate()?;
        Ok(params)
    }

    pub fn policy(&self) -> Result<StepPolicy> {
        let i = &self.integrator;
        if !(i.points_per_period >= 4.0 && i.points_per_period.is_finite()) {
            return Err(Error::Config(format!("`integrator.points_per_period` must be at least 4, got {}", i.points_per_period)));
        }
        Ok(StepPolicy { points_per_period: i.points_per_period, min_steps: i.min_steps.max(1) })
    }

    /// The vdW coefficient, required by the distance curve.
    pub fn c6(&self) -> Result<f64> {
        self.physics.c6.map(|c| c.angular()).ok_or_else(|| Error::MissingKey("physics.c6".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_operating_point() {
        let cfg = RunConfig::default();
        let p = cfg.params().unwrap();
        assert_eq!(p, PhysicalParams::cesium_default());
        assert_eq!(cfg.policy().unwrap(), StepPolicy::default());
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn units_are_explicit() {
        let cfg = RunConfig::from_toml_str("[physics]\nomega_e = { value = 100.0, unit = \"rad_per_us\" }\n").unwrap();
        assert_eq!(cfg.params().unwrap().omega_e, 100.0);
        assert!(RunConfig::from_toml_str("[physics]\nomega_e = 90.0\n").is_err());
        assert!(RunConfig::from_toml_str("[physics]\nomega_e = { value = 1.0, unit = \"GHz\" }\n").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml_str("[physics]\nomega_ee = 3\n").unwrap_err();
        assert!(err.to_string().contains("omega_ee"));
        assert!(RunConfig::from_toml_str("[integratr]\n").is_err());
    }

    #[test]
    fn c6_is_required_when_used() {
        let cfg = RunConfig::default();
        assert!(matches!(cfg.c6(), Err(Error::MissingKey(k)) if k == "physics.c6"));
        assert!(RunConfig::from_toml_str("[physics]\nv_from_c6 = true\n").is_err());
        let cfg = RunConfig::from_toml_str("[physics]\nv_from_c6 = true\nc6 = { value = 1.0e6, unit = \"rad_per_us_um6\" }\nspacing_um = 10.0\n").unwrap();
        assert!((cfg.params().unwrap().v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grids() {
        assert_eq!(Grid::range(0.0, 1.0, 3).values().unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(Grid::List(vec![]).values().is_err());
        let cfg = RunConfig::from_toml_str("[sweeps.fig2a]\nomega_c_over_omega_e = [1.0, 2.0]\n").unwrap();
        assert_eq!(cfg.sweeps.fig2a.omega_c_over_omega_e.values().unwrap(), vec![1.0, 2.0]);
        let cfg = RunConfig::from_toml_str("[sweeps.fig2a]\nomega_c_over_omega_e = { start = 0.0, stop = 2.0, points = 5 }\n").unwrap();
        assert_eq!(cfg.sweeps.fig2a.omega_c_over_omega_e.values().unwrap().len(), 5);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&cfg.echo()).unwrap(), cfg);
    }
}
