//! Closed-form theory of momentum diffusion for fast atoms.
//!
//! Two regimes of the conservative dynamics between emissions lead to two
//! decay laws for the diffusion coefficient:
//!
//! * chaotic: the dipole component `u` performs a random walk in node
//!   crossings, giving `D_ch = γ/12 + Δ²/(8ω_r²p²)`;
//! * regular: `u` climbs a deterministic ladder, giving
//!   `D_reg = γ/12 + Δ²/(8γω_r p π)` after averaging `cos²` to 1/2.
//!
//! Mixed ensembles interpolate linearly in the chaos probability Λ. The
//! energy map and node-crossing maps from which these laws follow are also
//! provided, together with observers that extract their inputs from
//! simulated trajectories.

use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::dynamics::{energy, AtomState, Observer};
use crate::emission::{apply_jump, JumpEvent, RngStream};
use crate::{Error, PhysicalConstants, Result, SimParams};

/// Margin used in the Raman-Nath validity inequalities.
pub const RAMAN_NATH_MARGIN: f64 = 10.0;

/// Recoil-noise floor `γ/12` shared by every diffusion law.
pub fn recoil_floor(params: &SimParams) -> f64 {
    params.gamma / 12.0
}

/// State of the node-crossing map for the dipole component `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UMapState {
    pub u: f64,
    /// Node crossings since the last emission.
    pub m: u32,
    /// `v` frozen at the node crossings (regular regime).
    pub v0: f64,
    /// `z` frozen at the node crossings (regular regime).
    pub z0: f64,
}

impl UMapState {
    /// State right after an emission: `u = 0`, `m = 0`.
    pub fn after_emission(v0: f64, z0: f64) -> Self {
        Self { u: 0.0, m: 0, v0, z0 }
    }
}

/// Step amplitude `|Δ|√(π/(ω_r p))` of the chaotic map.
pub fn chaotic_kick(params: &SimParams, p: f64) -> f64 {
    params.delta.abs() * (PI / (params.omega_r * p)).sqrt()
}

/// One node crossing of the chaotic map with an explicit phase. A phase in
/// `[−π, 0)` is a kick of phase `|φ|` in the opposite direction.
pub fn u_map_chaotic_with_phase(s: &UMapState, params: &SimParams, p: f64, phase: f64) -> UMapState {
    UMapState {
        u: chaotic_kick(params, p) * phase.sin() + s.u,
        m: s.m + 1,
        ..*s
    }
}

/// One node crossing of the chaotic map, `u_m = ±|Δ|√(π/ω_r p) sin φ_m + u_{m−1}`
/// with `φ_m ~ U[0, π]` and a fair random sign, so that `u_m` is a martingale
/// with `⟨u_M²⟩ = MΔ²π/(2ω_r p)`.
pub fn u_map_chaotic(s: &UMapState, params: &SimParams, p: f64, rng: &mut RngStream) -> UMapState {
    let phase = rng.uniform_in(-PI, PI);
    u_map_chaotic_with_phase(s, params, p, phase)
}

/// Phase `2/(ω_r p) − π/4` accumulated between nodes in the linear-flight limit.
pub fn regular_phase(params: &SimParams, p: f64) -> f64 {
    2.0 / (params.omega_r * p) - FRAC_PI_4
}

/// One node crossing of the deterministic ladder (linear flight `x = ω_r p τ`).
pub fn u_map_regular(s: &UMapState, params: &SimParams, p: f64) -> UMapState {
    let m = s.m + 1;
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    let phase = regular_phase(params, p);
    let root = (PI / (params.omega_r * p)).sqrt();
    let jump = params.delta * (root * (s.v0 * phase.cos() + sign * s.z0 * phase.sin()) + sign * s.z0);
    UMapState { u: jump + s.u, m, ..*s }
}

/// Mean number of node crossings between emissions, `2ω_r p/(γπ)`.
pub fn mean_crossings(params: &SimParams, p: f64) -> f64 {
    2.0 * params.omega_r * p / (params.gamma * PI)
}

/// `D_ch = γ/12 + Δ²/(8ω_r²p²)`.
pub fn d_chaotic(params: &SimParams, p: f64) -> f64 {
    recoil_floor(params) + params.delta.powi(2) / (8.0 * (params.omega_r * p).powi(2))
}

/// How the oscillating factor of the regular law is treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularForm {
    /// `cos²(2/(ω_r p) − π/4)` replaced by 1/2.
    #[default]
    Averaged,
    /// Keeps `cos²(2/(ω_r p) − π/4)`.
    Oscillatory,
}

/// `D_reg = γ/12 + Δ²/(8γω_r p π)` (averaged form).
pub fn d_regular(params: &SimParams, p: f64) -> f64 {
    d_regular_with(params, p, RegularForm::Averaged)
}

pub fn d_regular_with(params: &SimParams, p: f64, form: RegularForm) -> f64 {
    let base = params.delta.powi(2) / (4.0 * params.gamma * params.omega_r * p * PI);
    let factor = match form {
        RegularForm::Averaged => 0.5,
        RegularForm::Oscillatory => regular_phase(params, p).cos().powi(2),
    };
    recoil_floor(params) + base * factor
}

/// `D = (1−Λ)·D_reg + Λ·D_ch`, written as
/// `γ/12 + (Δ²/(8ω_r p))·((1−Λ)/(γπ) + Λ/(ω_r p))`.
pub fn d_blended(params: &SimParams, p: f64, chaos_probability: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&chaos_probability) {
        return Err(Error::InvalidArgument(format!(
            "chaos probability must lie in [0, 1], got {chaos_probability}"
        )));
    }
    let l = chaos_probability;
    let wr = params.omega_r * p;
    Ok(recoil_floor(params)
        + params.delta.powi(2) / (8.0 * wr) * ((1.0 - l) / (params.gamma * PI) + l / wr))
}

/// Inputs of the energy map at the `j`-th emission. State-dependent values
/// are taken just before the jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyMapInputs {
    /// Energy just after the previous emission.
    pub h_prev: f64,
    pub x: f64,
    pub p: f64,
    pub u: f64,
    pub z: f64,
    pub p_j: f64,
    /// `τ_j − τ_{j−1}`.
    pub interval: f64,
    /// `⟨1 − z²⟩` averaged over several Rabi periods before the jump.
    pub mean_saturation: f64,
}

/// Energy just after the `j`-th emission:
///
/// `H_j = H_{j−1} + ω_r p p_j + ω_r p_j²/2 + Δ/2 + u cos x + Δz/2 + (Δγ/4)⟨1−z²⟩(τ_j − τ_{j−1})`.
pub fn energy_map(inputs: &EnergyMapInputs, params: &SimParams) -> f64 {
    let EnergyMapInputs {
        h_prev,
        x,
        p,
        u,
        z,
        p_j,
        interval,
        mean_saturation,
    } = *inputs;
    let w = params.omega_r;
    let d = params.delta;
    h_prev + w * p * p_j + 0.5 * w * p_j * p_j + 0.5 * d + u * x.cos() + 0.5 * d * z
        + 0.25 * d * params.gamma * mean_saturation * interval
}

/// Mean momentum `√(2H/ω_r)` of a fast atom with energy `H`.
pub fn momentum_from_energy(h: f64, params: &SimParams) -> f64 {
    (2.0 * h / params.omega_r).sqrt()
}

/// Diffusion coefficient from energy increments at emissions:
/// `Var[ΔH] / (2ω_r²p²⟨Δτ⟩)`. A zero-variance sample gives zero.
pub fn diffusion_from_energy_increments(
    increments: &[f64],
    p: f64,
    mean_interval: f64,
    params: &SimParams,
) -> Result<f64> {
    if increments.len() < 30 {
        return Err(Error::InvalidArgument(format!(
            "need at least 30 energy increments, got {}",
            increments.len()
        )));
    }
    if !(p > 0.0 && mean_interval > 0.0) {
        return Err(Error::InvalidArgument("p and mean interval must be > 0".into()));
    }
    let n = increments.len() as f64;
    let mean = increments.iter().sum::<f64>() / n;
    let var = increments.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok(var / (2.0 * (params.omega_r * p).powi(2) * mean_interval))
}

/// Gas temperature `T = ħ²k_f²σ_p²/(m_a k_B)` and heating rate
/// `dT/dt = 2ħ²k_f²ΩD_p/(m_a k_B)`, in K and K/s.
pub fn temperature_and_heating(sigma_p_sq: f64, d_p: f64, constants: &PhysicalConstants) -> Result<(f64, f64)> {
    if !(sigma_p_sq >= 0.0 && d_p >= 0.0) {
        return Err(Error::InvalidArgument("sigma_p² and D_p must be ≥ 0".into()));
    }
    let t_rec = constants.recoil_temperature();
    Ok((t_rec * sigma_p_sq, 2.0 * t_rec * constants.rabi_frequency * d_p))
}

/// Cloud position variance for a constant diffusion coefficient:
/// `σ_x²(τ) = σ_x²(0) + ½ω_r²σ_p²(0)τ² + ⅔D_pω_r²τ³`.
///
/// The `τ²` coefficient is the one used by the cloud-size prediction; free
/// ballistic spreading of a Gaussian momentum spread alone would give
/// `ω_r²σ_p²(0)τ²`, so comparisons against simulations are cleanest with
/// `σ_p(0) = 0`.
pub fn cloud_variance(sigma_x0_sq: f64, sigma_p0_sq: f64, d_p: f64, params: &SimParams, tau: f64) -> f64 {
    let w2 = params.omega_r * params.omega_r;
    sigma_x0_sq + 0.5 * w2 * sigma_p0_sq * tau * tau + 2.0 / 3.0 * d_p * w2 * tau.powi(3)
}

/// Linear cloud size `L = 2σ_x/k_f` in metres.
pub fn cloud_size(sigma_x_sq: f64, constants: &PhysicalConstants) -> f64 {
    2.0 * sigma_x_sq.max(0.0).sqrt() / constants.wavenumber()
}

/// Raman-Nath regime of a fast atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RamanNath {
    /// Kinetic energy dominates so strongly that the flight is linear.
    Strong,
    /// Kinetic energy dominates the optical potential.
    Weak,
    /// Neither inequality holds with the required margin.
    Violated,
}

/// Classifies momentum `p` using the bound `|u cos x + Δz/2| ≤ 1 + |Δ|/2`:
/// weak when `ω_r p²/2 ≥ 10·bound`, strong when `ω_r p²/2 ≥ 100·bound`.
pub fn raman_nath_regime(params: &SimParams, p: f64) -> RamanNath {
    let kinetic = 0.5 * params.omega_r * p * p;
    let bound = 1.0 + 0.5 * params.delta.abs();
    if kinetic >= RAMAN_NATH_MARGIN * RAMAN_NATH_MARGIN * bound {
        RamanNath::Strong
    } else if kinetic >= RAMAN_NATH_MARGIN * bound {
        RamanNath::Weak
    } else {
        RamanNath::Violated
    }
}

/// Weak Raman-Nath check for a concrete state.
pub fn weak_raman_nath_holds(state: &AtomState, params: &SimParams) -> bool {
    let kinetic = 0.5 * params.omega_r * state.p * state.p;
    kinetic >= RAMAN_NATH_MARGIN * (state.u * state.x.cos() + 0.5 * params.delta * state.z).abs()
}

/// Rabi period averaged over a lattice cell, `π²/2` (mean of `2|cos x|` is `4/π`).
pub const CELL_AVERAGED_RABI_PERIOD: f64 = PI * PI / 2.0;

/// One emission as seen by [`EnergyMapRecorder`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordedJump {
    pub inputs: EnergyMapInputs,
    /// Simulated energy just before the jump.
    pub h_pre: f64,
    /// Simulated energy just after the jump.
    pub h_post: f64,
    /// Node crossings since the previous emission.
    pub crossings: usize,
}

/// Observer that collects energy-map inputs at every emission.
///
/// `⟨1 − z²⟩` is the time average over the last `window` before the jump
/// (clipped at the previous emission), accumulated with the trapezoid rule.
#[derive(Debug, Clone)]
pub struct EnergyMapRecorder {
    params: SimParams,
    window: f64,
    segments: VecDeque<(f64, f64, f64)>,
    weighted: f64,
    span: f64,
    h_prev: f64,
    tau_prev: f64,
    crossings: usize,
    pub jumps: Vec<RecordedJump>,
}

impl EnergyMapRecorder {
    /// `start` is the initial state; `rabi_windows` is the averaging window
    /// in units of [`CELL_AVERAGED_RABI_PERIOD`].
    pub fn new(start: &AtomState, params: &SimParams, rabi_windows: f64) -> Self {
        Self {
            params: *params,
            window: rabi_windows * CELL_AVERAGED_RABI_PERIOD,
            segments: VecDeque::new(),
            weighted: 0.0,
            span: 0.0,
            h_prev: energy(start, params),
            tau_prev: start.tau,
            crossings: 0,
            jumps: Vec::new(),
        }
    }

    fn mean_saturation(&self) -> f64 {
        if self.span > 0.0 {
            (self.weighted / self.span).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

impl Observer for EnergyMapRecorder {
    fn on_step(&mut self, prev: &AtomState, next: &AtomState) {
        let dt = next.tau - prev.tau;
        if dt <= 0.0 {
            return;
        }
        let value = 0.5 * ((1.0 - prev.z * prev.z) + (1.0 - next.z * next.z)) * dt;
        self.segments.push_back((next.tau, dt, value));
        self.weighted += value;
        self.span += dt;
        while let Some(&(end, dt, value)) = self.segments.front() {
            if end - dt >= next.tau - self.window - 1e-12 {
                break;
            }
            self.segments.pop_front();
            self.weighted -= value;
            self.span -= dt;
        }
    }

    fn on_node_crossing(&mut self, _state: &AtomState) {
        self.crossings += 1;
    }

    fn on_jump(&mut self, pre: &AtomState, event: &JumpEvent) {
        let inputs = EnergyMapInputs {
            h_prev: self.h_prev,
            x: pre.x,
            p: pre.p,
            u: pre.u,
            z: pre.z,
            p_j: event.p_j,
            interval: event.tau_j - self.tau_prev,
            mean_saturation: self.mean_saturation(),
        };
        let h_post = energy(&apply_jump(pre, event.p_j), &self.params);
        self.jumps.push(RecordedJump {
            inputs,
            h_pre: energy(pre, &self.params),
            h_post,
            crossings: self.crossings,
        });
        self.h_prev = h_post;
        self.tau_prev = event.tau_j;
        self.crossings = 0;
        self.segments.clear();
        self.weighted = 0.0;
        self.span = 0.0;
    }
}
