//! Maximal Lyapunov exponent of the conservative system (γ = 0, no
//! emission) and the ensemble chaos probability Λ.
//!
//! Two independent estimators are provided: co-integration of the
//! linearized (variational) equations, and the two-trajectory method that
//! follows a nearby copy of the orbit. Both renormalize the separation every
//! `renorm_interval` and average the log growth factors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, deriv_with_trig, shifted_sin_cos, AtomState, StateDerivative, LOW_DISSIPATION};
use crate::emission::RngStream;
use crate::{Error, Result, SimParams};

/// Perturbation of an [`AtomState`] in `(x, p, u, v, z)` space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TangentVector {
    pub dx: f64,
    pub dp: f64,
    pub du: f64,
    pub dv: f64,
    pub dz: f64,
}

impl TangentVector {
    pub const fn new(dx: f64, dp: f64, du: f64, dv: f64, dz: f64) -> Self {
        Self { dx, dp, du, dv, dz }
    }

    /// Unit vector with equal weight on every component.
    pub fn diagonal() -> Self {
        let c = 1.0 / 5f64.sqrt();
        Self::new(c, c, c, c, c)
    }

    pub fn norm(&self) -> f64 {
        (self.dx * self.dx + self.dp * self.dp + self.du * self.du + self.dv * self.dv + self.dz * self.dz)
            .sqrt()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.dx * k, self.dp * k, self.du * k, self.dv * k, self.dz * k)
    }


    fn between(a: &AtomState, b: &AtomState) -> Self {
        Self::new(b.x - a.x, b.p - a.p, b.u - a.u, b.v - a.v, b.z - a.z)
    }
}

#[inline(always)]
fn variational_unchecked(s: &AtomState, t: &TangentVector, params: &SimParams) -> TangentVector {
    let (sin_x, cos_x) = s.x.sin_cos();
    variational_with_trig(s, t, sin_x, cos_x, params)
}

#[inline(always)]
fn variational_with_trig(s: &AtomState, t: &TangentVector, sin_x: f64, cos_x: f64, params: &SimParams) -> TangentVector {
    TangentVector {
        dx: params.omega_r * t.dp,
        dp: -s.u * cos_x * t.dx - sin_x * t.du,
        du: params.delta * t.dv,
        dv: -params.delta * t.du + 2.0 * cos_x * t.dz - 2.0 * s.z * sin_x * t.dx,
        dz: -2.0 * cos_x * t.dv + 2.0 * s.v * sin_x * t.dx,
    }
}

/// Jacobian of the conservative flow at `state` applied to `tangent`.
pub fn variational_deriv(state: &AtomState, tangent: &TangentVector, params: &SimParams) -> Result<TangentVector> {
    require_conservative(params)?;
    if !state.is_finite() {
        return Err(Error::NonFinite { what: "state" });
    }
    Ok(variational_unchecked(state, tangent, params))
}

fn require_conservative(params: &SimParams) -> Result<()> {
    if params.gamma != 0.0 {
        return Err(Error::DissipativeSystem(params.gamma));
    }
    Ok(())
}

#[inline(always)]
fn weighted<const S: usize>(w: &[f64; S], k: &[StateDerivative; S], l: &[TangentVector; S], n: usize, h: f64) -> (StateDerivative, TangentVector) {
    let mut d = StateDerivative::default();
    let mut e = TangentVector::new(0.0, 0.0, 0.0, 0.0, 0.0);
    for j in 0..n {
        let c = h * w[j];
        d.dx += c * k[j].dx;
        d.dp += c * k[j].dp;
        d.du += c * k[j].du;
        d.dv += c * k[j].dv;
        d.dz += c * k[j].dz;
        e.dx += c * l[j].dx;
        e.dp += c * l[j].dp;
        e.du += c * l[j].du;
        e.dv += c * l[j].dv;
        e.dz += c * l[j].dz;
    }
    (d, e)
}

#[inline(always)]
fn offset(s: &AtomState, d: &StateDerivative, dt: f64) -> AtomState {
    AtomState {
        x: s.x + d.dx,
        p: s.p + d.dp,
        u: s.u + d.du,
        v: s.v + d.dv,
        z: s.z + d.dz,
        tau: s.tau + dt,
    }
}

#[inline(always)]
fn tangent_offset(t: &TangentVector, e: &TangentVector) -> TangentVector {
    TangentVector::new(t.dx + e.dx, t.dp + e.dp, t.du + e.du, t.dv + e.dv, t.dz + e.dz)
}

/// One step of the state together with its tangent vector, using the same
/// scheme as [`dynamics::step`].
#[inline]
pub fn step_with_tangent(
    s: &AtomState,
    t: &TangentVector,
    params: &SimParams,
    h: f64,
) -> (AtomState, TangentVector) {
    const S: usize = 5;
    let tab = &LOW_DISSIPATION;
    let (sin_x, cos_x) = s.x.sin_cos();
    let mut k = [StateDerivative::default(); S];
    let mut l = [TangentVector::new(0.0, 0.0, 0.0, 0.0, 0.0); S];
    k[0] = deriv_with_trig(s, sin_x, cos_x, params);
    l[0] = variational_with_trig(s, t, sin_x, cos_x, params);
    for i in 1..S {
        let (d, e) = weighted(&tab.a[i], &k, &l, i, h);
        let si = offset(s, &d, 0.0);
        let ti = tangent_offset(t, &e);
        let (sn, cs) = shifted_sin_cos(s.x, sin_x, cos_x, d.dx);
        k[i] = deriv_with_trig(&si, sn, cs, params);
        l[i] = variational_with_trig(&si, &ti, sn, cs, params);
    }
    let (d, e) = weighted(&tab.b, &k, &l, S, h);
    (offset(s, &d, h), tangent_offset(t, &e))
}

/// Integration settings for a finite-time exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSettings {
    pub tau_max: f64,
    pub renorm_interval: f64,
    pub step: f64,
}

impl Default for LyapunovSettings {
    fn default() -> Self {
        Self {
            tau_max: 2e5,
            renorm_interval: 10.0,
            step: dynamics::DEFAULT_STEP,
        }
    }
}

impl LyapunovSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!("step must be > 0, got {}", self.step)));
        }
        if !(self.renorm_interval >= self.step) {
            return Err(Error::InvalidArgument("renorm_interval must be ≥ step".into()));
        }
        if !(self.tau_max >= 10.0 * self.renorm_interval) {
            return Err(Error::InvalidArgument(
                "tau_max must be at least 10 renormalization intervals".into(),
            ));
        }
        Ok(())
    }

    fn steps_per_interval(&self) -> (usize, f64) {
        let n = (self.renorm_interval / self.step).round().max(1.0) as usize;
        (n, self.renorm_interval / n as f64)
    }

    fn intervals(&self) -> usize {
        (self.tau_max / self.renorm_interval).round() as usize
    }
}

/// Finite-time maximal Lyapunov exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovResult {
    /// Exponent in units of `1/τ`.
    pub lambda: f64,
    pub tau_total: f64,
    pub renorm_count: usize,
    /// Exponent of the integrable reference run, zero when not measured.
    pub noise_floor: f64,
}

impl LyapunovResult {
    pub fn with_noise_floor(self, noise_floor: f64) -> Self {
        Self { noise_floor, ..self }
    }
}

/// Maximal exponent from the variational equations.
pub fn max_lyapunov(state0: &AtomState, params: &SimParams, settings: &LyapunovSettings) -> Result<LyapunovResult> {
    max_lyapunov_from(state0, &TangentVector::diagonal(), params, settings)
}

/// As [`max_lyapunov`], starting from a chosen tangent direction.
pub fn max_lyapunov_from(
    state0: &AtomState,
    tangent0: &TangentVector,
    params: &SimParams,
    settings: &LyapunovSettings,
) -> Result<LyapunovResult> {
    require_conservative(params)?;
    settings.validate()?;
    if !state0.is_finite() {
        return Err(Error::NonFinite { what: "initial state" });
    }
    let n0 = tangent0.norm();
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(Error::InvalidArgument("initial tangent must be nonzero".into()));
    }
    let (per, h) = settings.steps_per_interval();
    let intervals = settings.intervals();
    let mut s = *state0;
    let mut t = tangent0.scaled(1.0 / n0);
    let mut log_sum = 0.0;
    for _ in 0..intervals {
        for _ in 0..per {
            (s, t) = step_with_tangent(&s, &t, params, h);
        }
        let g = t.norm();
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::NonFinite { what: "tangent growth" });
        }
        log_sum += g.ln();
        t = t.scaled(1.0 / g);
    }
    let tau_total = intervals as f64 * per as f64 * h;
    Ok(LyapunovResult {
        lambda: log_sum / tau_total,
        tau_total,
        renorm_count: intervals,
        noise_floor: 0.0,
    })
}

/// Maximal exponent from a second trajectory started `separation` away
/// along the diagonal direction.
pub fn two_trajectory_lyapunov(
    state0: &AtomState,
    params: &SimParams,
    settings: &LyapunovSettings,
    separation: f64,
) -> Result<LyapunovResult> {
    require_conservative(params)?;
    settings.validate()?;
    if !(separation > 0.0) {
        return Err(Error::InvalidArgument("separation must be > 0".into()));
    }
    let (per, h) = settings.steps_per_interval();
    let intervals = settings.intervals();
    let offset = TangentVector::diagonal().scaled(separation);
    let mut a = *state0;
    let mut b = shifted(state0, &offset);
    let mut log_sum = 0.0;
    for _ in 0..intervals {
        for _ in 0..per {
            a = dynamics::step(&a, params, h);
            b = dynamics::step(&b, params, h);
        }
        let d = TangentVector::between(&a, &b);
        let g = d.norm() / separation;
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::NonFinite { what: "separation growth" });
        }
        log_sum += g.ln();
        b = shifted(&a, &d.scaled(1.0 / g));
    }
    let tau_total = intervals as f64 * per as f64 * h;
    Ok(LyapunovResult {
        lambda: log_sum / tau_total,
        tau_total,
        renorm_count: intervals,
        noise_floor: 0.0,
    })
}

fn shifted(s: &AtomState, d: &TangentVector) -> AtomState {
    AtomState {
        x: s.x + d.dx,
        p: s.p + d.dp,
        u: s.u + d.du,
        v: s.v + d.dv,
        z: s.z + d.dz,
        tau: s.tau,
    }
}

/// Exponent of the integrable `Δ = 0` counterpart of `state0`, used as the
/// finite-time noise floor.
pub fn noise_floor(state0: &AtomState, params: &SimParams, settings: &LyapunovSettings) -> Result<f64> {
    let resonant = SimParams {
        delta: 0.0,
        ..params.conservative()
    };
    Ok(max_lyapunov(state0, &resonant, settings)?.lambda.abs())
}

/// Chaotic iff `lambda > threshold` (strict).
pub fn classify_chaotic(result: &LyapunovResult, threshold: f64) -> bool {
    result.lambda > threshold
}

/// Classification threshold `max(10/tau_max, factor × noise_floor)`.
pub fn classification_threshold(tau_max: f64, noise_floor: f64, factor: f64) -> f64 {
    (10.0 / tau_max).max(factor * noise_floor)
}

/// Ensemble chaos probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosStats {
    /// Λ, fraction of classified trajectories that are chaotic.
    pub probability: f64,
    pub n_chaotic: usize,
    pub n_regular: usize,
    /// Trajectories whose exponent could not be computed.
    pub n_failed: usize,
    pub threshold: f64,
}

impl ChaosStats {
    /// Builds the statistics from per-trajectory exponents; `None` entries
    /// are failures.
    pub fn from_exponents(lambdas: &[Option<f64>], threshold: f64) -> Self {
        let mut n_chaotic = 0;
        let mut n_regular = 0;
        let mut n_failed = 0;
        for l in lambdas {
            match l {
                Some(l) if *l > threshold => n_chaotic += 1,
                Some(_) => n_regular += 1,
                None => n_failed += 1,
            }
        }
        let n = n_chaotic + n_regular;
        Self {
            probability: if n == 0 { f64::NAN } else { n_chaotic as f64 / n as f64 },
            n_chaotic,
            n_regular,
            n_failed,
            threshold,
        }
    }

    /// Combines statistics computed on disjoint parts of an ensemble with the
    /// same threshold.
    pub fn merge(&self, other: &Self) -> Self {
        let n_chaotic = self.n_chaotic + other.n_chaotic;
        let n_regular = self.n_regular + other.n_regular;
        let n = n_chaotic + n_regular;
        Self {
            probability: if n == 0 { f64::NAN } else { n_chaotic as f64 / n as f64 },
            n_chaotic,
            n_regular,
            n_failed: self.n_failed + other.n_failed,
            threshold: self.threshold,
        }
    }
}

/// Configuration of a chaos-probability estimate at one momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosSpec {
    /// Trajectories per momentum bin.
    pub n_traj: usize,
    pub lyapunov: LyapunovSettings,
    /// Relative momentum jitter inside a bin.
    pub p_jitter: f64,
    /// Multiplier on the measured noise floor.
    pub noise_factor: f64,
    /// Fixed threshold; when absent it is derived from the noise floor.
    pub threshold: Option<f64>,
}

impl Default for ChaosSpec {
    fn default() -> Self {
        Self {
            n_traj: 16,
            lyapunov: LyapunovSettings::default(),
            p_jitter: 0.02,
            noise_factor: 5.0,
            threshold: None,
        }
    }
}

/// Ground-state initial conditions with `x₀ ~ U[0, 2π)` and momentum jittered
/// uniformly by `±jitter·p`.
pub fn bin_initial_conditions(p: f64, n: usize, jitter: f64, seed: u64) -> Vec<AtomState> {
    (0..n)
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64);
            let x0 = rng.uniform_in(0.0, std::f64::consts::TAU);
            let p0 = p * (1.0 + rng.uniform_in(-jitter, jitter));
            AtomState::ground(x0, p0)
        })
        .collect()
}

/// Per-trajectory exponents plus the resulting [`ChaosStats`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosEnsemble {
    pub exponents: Vec<Option<f64>>,
    pub noise_floor: f64,
    pub stats: ChaosStats,
}

/// Λ over the given initial conditions. The threshold is `spec.threshold`
/// when set, otherwise derived from the noise floor of the first initial
/// condition.
pub fn chaos_probability(initial: &[AtomState], params: &SimParams, spec: &ChaosSpec) -> Result<ChaosEnsemble> {
    if initial.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let params = params.conservative();
    let settings = spec.lyapunov;
    settings.validate()?;
    let floor = noise_floor(&initial[0], &params, &settings)?;
    let threshold = spec
        .threshold
        .unwrap_or_else(|| classification_threshold(settings.tau_max, floor, spec.noise_factor));
    let exponents: Vec<Option<f64>> = initial
        .par_iter()
        .map(|s| max_lyapunov(s, &params, &settings).ok().map(|r| r.lambda))
        .collect();
    let stats = ChaosStats::from_exponents(&exponents, threshold);
    Ok(ChaosEnsemble {
        exponents,
        noise_floor: floor,
        stats,
    })
}
