//! Run configuration: a JSON document with the sections `params`,
//! `constants`, `ensemble`, `chaos`, `sweep` and `output`.
//!
//! Only `params` is required. Every other section falls back to defaults,
//! and unknown keys are rejected with the offending key path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chaos::ChaosSpec;
use crate::ensemble::{log_grid, EnsembleSpec, SweepSpec, WindowPolicy};
use crate::{Error, PhysicalConstants, Result, SimParams};

/// Default relative tolerance of the constants cross-check.
pub const DEFAULT_CONSTANTS_TOLERANCE: f64 = 0.01;

/// Minimum number of bins in a momentum sweep.
pub const MIN_SWEEP_BINS: usize = 8;

/// Explicit dimensional constants (SI). When present they must reproduce
/// `params.gamma` and `params.omega_r` within `tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    pub rabi_frequency: f64,
    pub natural_linewidth: f64,
    pub wavelength: f64,
    pub atomic_mass: f64,
    #[serde(default = "default_hbar")]
    pub reduced_planck: f64,
    #[serde(default = "default_boltzmann")]
    pub boltzmann: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_CONSTANTS_TOLERANCE
}

fn default_hbar() -> f64 {
    PhysicalConstants::cesium().reduced_planck
}

fn default_boltzmann() -> f64 {
    PhysicalConstants::cesium().boltzmann
}

impl ConstantsSection {
    pub fn new(values: PhysicalConstants, tolerance: f64) -> Self {
        Self {
            rabi_frequency: values.rabi_frequency,
            natural_linewidth: values.natural_linewidth,
            wavelength: values.wavelength,
            atomic_mass: values.atomic_mass,
            reduced_planck: values.reduced_planck,
            boltzmann: values.boltzmann,
            tolerance,
        }
    }

    pub fn values(&self) -> PhysicalConstants {
        PhysicalConstants {
            rabi_frequency: self.rabi_frequency,
            natural_linewidth: self.natural_linewidth,
            wavelength: self.wavelength,
            atomic_mass: self.atomic_mass,
            reduced_planck: self.reduced_planck,
            boltzmann: self.boltzmann,
        }
    }
}

/// Momentum grid and fit-window rules of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub p_min: f64,
    pub p_max: f64,
    pub bins: usize,
    /// Explicit grid; overrides `p_min`, `p_max` and `bins` when set.
    pub grid: Option<Vec<f64>>,
    /// Spread each bin's ensemble over the whole bin.
    pub bin_averaging: bool,
    pub window: WindowPolicy,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            p_min: 700.0,
            p_max: 3500.0,
            bins: 12,
            grid: None,
            bin_averaging: true,
            window: WindowPolicy::default(),
        }
    }
}

impl SweepSection {
    pub fn grid(&self) -> Result<Vec<f64>> {
        match &self.grid {
            Some(g) => Ok(g.clone()),
            None => log_grid(self.p_min, self.p_max, self.bins),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Significant digits of numeric CSV fields.
    pub digits: usize,
    /// Also write whitespace-separated column files for plotting.
    pub plot_files: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            digits: crate::output::DEFAULT_DIGITS,
            plot_files: true,
        }
    }
}

/// A fully validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: SimParams,
    #[serde(default)]
    pub constants: Option<ConstantsSection>,
    #[serde(default)]
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub chaos: ChaosSpec,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    /// Defaults everywhere except the physical parameters.
    pub fn with_params(params: SimParams) -> Self {
        Self {
            params,
            constants: None,
            ensemble: EnsembleSpec::default(),
            chaos: ChaosSpec::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }

    /// Master seed, stored in `ensemble.seed`.
    pub fn seed(&self) -> u64 {
        self.ensemble.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.ensemble.seed = seed;
    }

    /// Constants used for unit conversion: the explicit section or cesium.
    pub fn physical_constants(&self) -> PhysicalConstants {
        self.constants.map_or_else(PhysicalConstants::cesium, |c| c.values())
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            chaos: self.chaos,
            ensemble: self.ensemble,
            window: self.sweep.window,
            seed: self.seed(),
            bin_averaging: self.sweep.bin_averaging,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if let Some(c) = &self.constants {
            let values = c.values();
            values.validate()?;
            if !(c.tolerance.is_finite() && c.tolerance > 0.0) {
                return Err(Error::config("constants.tolerance", "constants.tolerance must be > 0"));
            }
            values.check_consistency(&self.params, c.tolerance)?;
        }
        self.ensemble.validate()?;
        validate_chaos(&self.chaos)?;
        validate_sweep(&self.sweep)?;
        if !(9..=17).contains(&self.output.digits) {
            return Err(Error::config("output.digits", "output.digits must lie in [9, 17]"));
        }
        Ok(())
    }
}

fn validate_chaos(c: &ChaosSpec) -> Result<()> {
    if c.n_traj < 1 {
        return Err(Error::config("chaos.n_traj", "chaos.n_traj must be ≥ 1"));
    }
    c.lyapunov
        .validate()
        .map_err(|e| Error::config("chaos.lyapunov", format!("chaos.lyapunov: {e}")))?;
    if !(c.p_jitter.is_finite() && (0.0..1.0).contains(&c.p_jitter)) {
        return Err(Error::config("chaos.p_jitter", "chaos.p_jitter must lie in [0, 1)"));
    }
    if !(c.noise_factor.is_finite() && c.noise_factor >= 0.0) {
        return Err(Error::config("chaos.noise_factor", "chaos.noise_factor must be ≥ 0"));
    }
    if c.threshold.is_some_and(|t| !t.is_finite()) {
        return Err(Error::config("chaos.threshold", "chaos.threshold must be finite"));
    }
    Ok(())
}

fn validate_sweep(s: &SweepSection) -> Result<()> {
    let w = &s.window;
    let fractions = [
        ("max_sigma_fraction", w.max_sigma_fraction),
        ("max_drift_fraction", w.max_drift_fraction),
        ("friction_horizon_fraction", w.friction_horizon_fraction),
    ];
    for (name, v) in fractions {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::config(
                format!("sweep.window.{name}"),
                format!("sweep.window.{name} must be > 0"),
            ));
        }
    }
    if !(w.friction_significance.is_finite() && w.friction_significance >= 0.0) {
        return Err(Error::config(
            "sweep.window.friction_significance",
            "sweep.window.friction_significance must be ≥ 0",
        ));
    }
    if w.transient.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
        return Err(Error::config("sweep.window.transient", "sweep.window.transient must be ≥ 0"));
    }
    match &s.grid {
        Some(g) => {
            if g.len() < MIN_SWEEP_BINS {
                return Err(Error::config(
                    "sweep.grid",
                    format!("sweep.grid needs at least {MIN_SWEEP_BINS} momenta"),
                ));
            }
            if g.iter().any(|p| !(p.is_finite() && *p > 0.0)) || g.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config("sweep.grid", "sweep.grid must be positive and strictly increasing"));
            }
        }
        None => {
            if !(s.p_min.is_finite() && s.p_min > 0.0) {
                return Err(Error::config("sweep.p_min", "sweep.p_min must be > 0"));
            }
            if !(s.p_max.is_finite() && s.p_max > s.p_min) {
                return Err(Error::config("sweep.p_max", "sweep.p_max must exceed sweep.p_min"));
            }
            if s.bins < MIN_SWEEP_BINS {
                return Err(Error::config(
                    "sweep.bins",
                    format!("sweep.bins must be ≥ {MIN_SWEEP_BINS}"),
                ));
            }
        }
    }
    Ok(())
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let path = if path == "." { String::new() } else { path };
        Error::config(path.clone(), describe_serde_error(&path, &inner))
    })?;
    config.validate()?;
    Ok(config)
}

fn describe_serde_error(path: &str, e: &serde_json::Error) -> String {
    let msg = e.to_string();
    if path.is_empty() {
        msg
    } else {
        format!("{path}: {msg}")
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Serializes a configuration with every key spelled out.
pub fn emit_config(config: &RunConfig) -> String {
    serde_json::to_string_pretty(config).expect("configuration serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(r#"{"params":{"gamma":3.3e-3,"omega_r":1e-5,"delta":-0.01}}"#).unwrap();
        assert_eq!(c.params, SimParams::cesium(-0.01));
        assert_eq!(c.ensemble, EnsembleSpec::default());
        assert_eq!(c.chaos, ChaosSpec::default());
        assert!(c.constants.is_none());
        assert_eq!(c.sweep.grid().unwrap().len(), 12);
    }

    #[test]
    fn weak_detuning_variant() {
        let c = parse_config(r#"{"params":{"gamma":3.3e-3,"omega_r":1e-5,"delta":-0.0005}}"#).unwrap();
        assert_eq!(c.params.delta, -0.0005);
    }

    #[test]
    fn negative_gamma_names_the_key() {
        let err = parse_config(r#"{"params":{"gamma":-1,"omega_r":1e-5,"delta":-0.01}}"#).unwrap_err();
        assert!(err.to_string().contains("params.gamma must be ≥ 0"), "{err}");
    }

    #[test]
    fn missing_and_unknown_keys() {
        let err = parse_config(r#"{"params":{"gamma":1e-3,"delta":-0.01}}"#).unwrap_err();
        assert!(err.to_string().contains("omega_r"), "{err}");
        assert!(parse_config(r#"{}"#).unwrap_err().to_string().contains("params"));

        let err = parse_config(
            r#"{"params":{"gamma":1e-3,"omega_r":1e-5,"delta":0},"ensemble":{"n_trajs":3}}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ensemble") && msg.contains("n_trajs"), "{msg}");

        let err = parse_config(
            r#"{"params":{"gamma":1e-3,"omega_r":1e-5,"delta":0},"chaos":{"lyapunov":{"tau":3}}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("chaos.lyapunov"), "{err}");
    }

    #[test]
    fn out_of_range_values() {
        let base = r#"{"params":{"gamma":3.3e-3,"omega_r":1e-5,"delta":-0.01},"#;
        let cases = [
            (r#""ensemble":{"n_traj":1}}"#, "ensemble.n_traj"),
            (r#""sweep":{"bins":3}}"#, "sweep.bins"),
            (r#""sweep":{"p_min":10,"p_max":5}}"#, "sweep.p_max"),
            (r#""output":{"digits":6}}"#, "output.digits"),
            (r#""chaos":{"p_jitter":2}}"#, "chaos.p_jitter"),
        ];
        for (tail, key) in cases {
            let err = parse_config(&format!("{base}{tail}")).unwrap_err();
            assert!(err.to_string().contains(key), "{key}: {err}");
        }
    }

    #[test]
    fn explicit_constants_are_cross_checked() {
        let cs = PhysicalConstants::cesium();
        let consistent = SimParams::new(cs.implied_gamma(), cs.implied_omega_r(), -0.01);
        let mut c = RunConfig::with_params(consistent);
        c.constants = Some(ConstantsSection::new(cs, 0.01));
        assert!(parse_config(&emit_config(&c)).is_ok());

        c.params = SimParams::cesium(-0.01);
        let err = parse_config(&emit_config(&c)).unwrap_err();
        assert!(err.to_string().contains("constants."), "{err}");
    }

    #[test]
    fn emit_parse_round_trip() {
        let mut c = RunConfig::with_params(SimParams::cesium(-0.0005));
        c.sweep.grid = Some((0..8).map(|i| 500.0 * 1.3f64.powi(i)).collect());
        c.chaos.threshold = Some(1e-4);
        c.sweep.window.transient = Some(123.0);
        c.set_seed(42);
        assert_eq!(parse_config(&emit_config(&c)).unwrap(), c);
    }
}
