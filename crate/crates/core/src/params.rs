//! Normalized model parameters and the dimensional constants used to convert
//! them back to SI units.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Detuning magnitude above which the small-detuning formulas are flagged.
pub const WEAK_DETUNING_LIMIT: f64 = 0.1;

/// Normalized parameters of the atom-field system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Decay rate `Γ/Ω`. Zero gives the conservative analogue.
    pub gamma: f64,
    /// Recoil frequency `ħk_f²/(m_a Ω)`.
    pub omega_r: f64,
    /// Detuning `(ω_f − ω_a)/Ω`.
    pub delta: f64,
}

impl SimParams {
    pub const fn new(gamma: f64, omega_r: f64, delta: f64) -> Self {
        Self {
            gamma,
            omega_r,
            delta,
        }
    }

    /// Cesium-like values used throughout: `γ = 3.3e-3`, `ω_r = 1e-5`.
    pub const fn cesium(delta: f64) -> Self {
        Self::new(3.3e-3, 1e-5, delta)
    }

    /// Same parameters with spontaneous emission switched off.
    pub fn conservative(&self) -> Self {
        Self { gamma: 0.0, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("params.{field}"), msg));
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return bad("gamma", "params.gamma must be ≥ 0");
        }
        if !self.omega_r.is_finite() || self.omega_r <= 0.0 {
            return bad("omega_r", "params.omega_r must be > 0");
        }
        if !self.delta.is_finite() || self.delta.abs() >= 1.0 {
            return bad("delta", "params.delta must satisfy |delta| < 1");
        }
        Ok(())
    }

    /// `true` when the detuning is small enough for the analytic diffusion laws.
    pub fn weak_detuning(&self) -> bool {
        self.delta.abs() < WEAK_DETUNING_LIMIT
    }
}

/// Dimensional constants (SI).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    /// Rabi frequency Ω, 1/s.
    pub rabi_frequency: f64,
    /// Natural linewidth Γ, 1/s.
    pub natural_linewidth: f64,
    /// Transition wavelength, m.
    pub wavelength: f64,
    /// Atomic mass, kg.
    pub atomic_mass: f64,
    /// ħ, J·s.
    #[serde(default = "codata::hbar")]
    pub reduced_planck: f64,
    /// k_B, J/K.
    #[serde(default = "codata::boltzmann")]
    pub boltzmann: f64,
}

mod codata {
    pub const HBAR: f64 = 1.054_571_817e-34;
    pub const BOLTZMANN: f64 = 1.380_649e-23;
    pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

    pub fn hbar() -> f64 {
        HBAR
    }

    pub fn boltzmann() -> f64 {
        BOLTZMANN
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::cesium()
    }
}

impl PhysicalConstants {
    /// Cs D2 line driven at Ω = 1e10 1/s.
    pub fn cesium() -> Self {
        Self {
            rabi_frequency: 1e10,
            natural_linewidth: 3.2e7,
            wavelength: 852.1e-9,
            atomic_mass: 132.905_451_96 * codata::ATOMIC_MASS_UNIT,
            reduced_planck: codata::HBAR,
            boltzmann: codata::BOLTZMANN,
        }
    }

    /// `k_f = 2π/λ_a`.
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }

    /// `Γ/Ω` implied by these constants.
    pub fn implied_gamma(&self) -> f64 {
        self.natural_linewidth / self.rabi_frequency
    }

    /// `ħk_f²/(m_a Ω)` implied by these constants.
    pub fn implied_omega_r(&self) -> f64 {
        let k = self.wavenumber();
        self.reduced_planck * k * k / (self.atomic_mass * self.rabi_frequency)
    }

    /// Temperature (K) corresponding to a unit normalized momentum variance.
    pub fn recoil_temperature(&self) -> f64 {
        let hk = self.reduced_planck * self.wavenumber();
        hk * hk / (self.atomic_mass * self.boltzmann)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rabi_frequency", self.rabi_frequency),
            ("natural_linewidth", self.natural_linewidth),
            ("wavelength", self.wavelength),
            ("atomic_mass", self.atomic_mass),
            ("reduced_planck", self.reduced_planck),
            ("boltzmann", self.boltzmann),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::config(
                    format!("constants.{name}"),
                    format!("constants.{name} must be > 0"),
                ));
            }
        }
        Ok(())
    }

    /// Relative mismatch of the implied `(gamma, omega_r)` against `params`.
    pub fn mismatch(&self, params: &SimParams) -> (f64, f64) {
        let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { (a - b).abs() / b.abs() };
        (
            rel(self.implied_gamma(), params.gamma),
            rel(self.implied_omega_r(), params.omega_r),
        )
    }

    /// Rejects constants whose implied normalized values differ from `params`
    /// by more than `tolerance` (relative).
    pub fn check_consistency(&self, params: &SimParams, tolerance: f64) -> Result<()> {
        let (dg, dw) = self.mismatch(params);
        if params.gamma > 0.0 && dg > tolerance {
            return Err(Error::config(
                "constants.natural_linewidth",
                format!(
                    "Γ/Ω = {:.4e} disagrees with params.gamma = {:.4e} (relative {:.2e} > {:.2e})",
                    self.implied_gamma(),
                    params.gamma,
                    dg,
                    tolerance
                ),
            ));
        }
        if dw > tolerance {
            return Err(Error::config(
                "constants.atomic_mass",
                format!(
                    "ħk²/(mΩ) = {:.4e} disagrees with params.omega_r = {:.4e} (relative {:.2e} > {:.2e})",
                    self.implied_omega_r(),
                    params.omega_r,
                    dw,
                    tolerance
                ),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cesium_recoil_temperature() {
        let t = PhysicalConstants::cesium().recoil_temperature();
        assert!((t - 1.9845e-7).abs() < 1e-10, "{t}");
    }

    #[test]
    fn consistent_constants_pass_check() {
        let c = PhysicalConstants::cesium();
        let p = SimParams::new(c.implied_gamma(), c.implied_omega_r(), -0.01);
        c.check_consistency(&p, 0.01).unwrap();
        let off = SimParams::new(p.gamma, p.omega_r * 1.02, p.delta);
        assert!(c.check_consistency(&off, 0.01).is_err());
    }

    #[test]
    fn rejects_negative_gamma() {
        let err = SimParams::new(-1.0, 1e-5, -0.01).validate().unwrap_err();
        assert!(err.to_string().contains("params.gamma must be ≥ 0"), "{err}");
    }
}
