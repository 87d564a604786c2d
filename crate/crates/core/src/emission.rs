//! Spontaneous emission as a piecewise-deterministic jump process.
//!
//! Between jumps the atom follows [`crate::dynamics`] with the γ-damping
//! terms switched on. Emission happens at rate `γ(z+1)/2`; jump times are
//! drawn by inverting the cumulative hazard, accumulated with the trapezoid
//! rule on the integrator grid. At a jump `p → p + p_j` and the Bloch vector
//! resets to the ground state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{snap_epsilon, AtomState, Integrator, Observer, SampleClock};
use crate::{Error, Result, SimParams};

/// One emission event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    /// Event time.
    pub tau_j: f64,
    /// Recoil momentum in units of `ħk_f`, within `[-1, 1]`.
    pub p_j: f64,
}

/// Splitmix64 finalizer, used to separate seeds of unrelated random streams.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trajectory random stream identified by `(seed, index)`.
///
/// The same pair always reproduces the same sequence, regardless of which
/// thread runs the trajectory or in which order.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self { seed, index, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Exponential(1) draw, `−ln r` with `r ∈ (0, 1]`.
    pub fn exponential(&mut self) -> f64 {
        -(1.0 - self.uniform()).ln()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Distribution of the 1D recoil momentum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoilLaw {
    /// Uniform on `[-1, 1]`: the axial projection of an isotropic photon
    /// direction, with `⟨p_j²⟩ = 1/3`.
    #[default]
    Uniform,
    /// No momentum kick; only the internal reset.
    Zero,
}

/// Emission rate `γ(z+1)/2`, clamped at zero.
#[inline]
pub fn hazard(state: &AtomState, params: &SimParams) -> f64 {
    (0.5 * params.gamma * (state.z + 1.0)).max(0.0)
}

/// Draws one recoil from the uniform law on `[-1, 1]`.
pub fn sample_recoil(rng: &mut RngStream) -> f64 {
    sample_recoil_with(RecoilLaw::Uniform, rng)
}

pub fn sample_recoil_with(law: RecoilLaw, rng: &mut RngStream) -> f64 {
    match law {
        RecoilLaw::Uniform => rng.uniform_in(-1.0, 1.0),
        RecoilLaw::Zero => 0.0,
    }
}

/// Applies an emission: `p → p + p_j`, `(u, v, z) → (0, 0, −1)`.
pub fn apply_jump(state: &AtomState, p_j: f64) -> AtomState {
    debug_assert!(p_j.abs() <= 1.0);
    AtomState {
        p: state.p + p_j,
        u: 0.0,
        v: 0.0,
        z: -1.0,
        ..*state
    }
}

/// Settings for [`propagate_with_jumps`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpPropagation {
    pub duration: f64,
    pub sample_interval: f64,
    pub recoil: RecoilLaw,
    /// Stop right after this many jumps.
    pub max_jumps: Option<usize>,
    /// Keep sampled states in the returned record.
    pub record_samples: bool,
}

impl JumpPropagation {
    pub fn new(duration: f64, sample_interval: f64) -> Self {
        Self {
            duration,
            sample_interval,
            recoil: RecoilLaw::Uniform,
            max_jumps: None,
            record_samples: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Completed,
    /// Non-finite state or hazard integral; excluded from statistics.
    Failed,
}

/// Output of one stochastic trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpTrajectory {
    pub final_state: AtomState,
    pub samples: Vec<AtomState>,
    pub jumps: Vec<JumpEvent>,
    pub node_crossings: usize,
    pub status: TrajectoryStatus,
    /// `false` once the momentum changed sign.
    pub ballistic: bool,
}

/// Integrates the full jump process for `opts.duration`.
///
/// Jump times come from cumulative-hazard inversion: with `E ~ Exp(1)`,
/// the jump fires when `∫γ(z+1)/2 dτ` since the previous jump reaches `E`.
/// The crossing is located inside a step by linear interpolation of the
/// accumulated hazard, and the state is re-integrated up to that instant.
pub fn propagate_with_jumps<O: Observer>(
    state: AtomState,
    params: &SimParams,
    integrator: &Integrator,
    opts: &JumpPropagation,
    rng: &mut RngStream,
    observer: &mut O,
) -> Result<JumpTrajectory> {
    if !state.is_finite() {
        return Err(Error::NonFinite { what: "initial state" });
    }
    if !(opts.duration > 0.0 && opts.duration.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "duration must be > 0, got {}",
            opts.duration
        )));
    }
    if !(opts.sample_interval >= integrator.step) {
        return Err(Error::InvalidArgument(format!(
            "sample_interval ({}) must be ≥ step ({})",
            opts.sample_interval, integrator.step
        )));
    }
    if params.gamma < 0.0 {
        return Err(Error::InvalidArgument("gamma must be ≥ 0".into()));
    }

    let h = integrator.step;
    let eps = snap_epsilon(h);
    let end = state.tau + opts.duration;
    let mut clock = SampleClock::new(state.tau, opts.duration, opts.sample_interval);
    let mut samples = Vec::with_capacity(if opts.record_samples { clock.count() as usize } else { 0 });
    let mut jumps = Vec::new();
    let mut s = state;
    let mut rate = hazard(&s, params);
    let mut accumulated = 0.0;
    let mut threshold = rng.exponential();
    let mut crossings = 0;
    let mut cos_sign = s.x.cos() >= 0.0;
    let initial_sign = s.p >= 0.0;
    let mut ballistic = true;
    let mut status = TrajectoryStatus::Completed;

    'outer: loop {
        let target = clock.next_time().unwrap_or(end).min(end);
        while target - s.tau > eps {
            let hh = h.min(target - s.tau);
            let next = integrator.advance(&s, params, hh);
            let next_rate = hazard(&next, params);
            let increment = 0.5 * (rate + next_rate) * hh;

            if !(next.is_finite() && increment.is_finite()) {
                status = TrajectoryStatus::Failed;
                break 'outer;
            }

            if accumulated + increment >= threshold && increment > 0.0 {
                let frac = ((threshold - accumulated) / increment).clamp(0.0, 1.0);
                let dt = frac * hh;
                let pre = if dt > eps { integrator.advance(&s, params, dt) } else { s };
                observer.on_step(&s, &pre);
                track_crossing(&pre, &mut cos_sign, &mut crossings, observer);
                let event = JumpEvent {
                    tau_j: pre.tau,
                    p_j: sample_recoil_with(opts.recoil, rng),
                };
                observer.on_jump(&pre, &event);
                jumps.push(event);
                s = apply_jump(&pre, event.p_j);
                ballistic &= (s.p >= 0.0) == initial_sign;
                rate = hazard(&s, params);
                accumulated = 0.0;
                threshold = rng.exponential();
                if opts.max_jumps.is_some_and(|m| jumps.len() >= m) {
                    break 'outer;
                }
                continue;
            }

            accumulated += increment;
            observer.on_step(&s, &next);
            s = next;
            rate = next_rate;
            ballistic &= (s.p >= 0.0) == initial_sign;
            track_crossing(&s, &mut cos_sign, &mut crossings, observer);
        }
        s.tau = target;
        if clock.next_time().is_some_and(|t| t == target) {
            observer.on_sample(&s);
            if opts.record_samples {
                samples.push(s);
            }
            clock.advance();
        }
        if end - s.tau <= eps {
            break;
        }
    }

    Ok(JumpTrajectory {
        final_state: s,
        samples,
        jumps,
        node_crossings: crossings,
        status,
        ballistic,
    })
}

#[inline]
fn track_crossing<O: Observer>(s: &AtomState, cos_sign: &mut bool, count: &mut usize, observer: &mut O) {
    let sign = s.x.cos() >= 0.0;
    if sign != *cos_sign {
        *cos_sign = sign;
        *count += 1;
        observer.on_node_crossing(s);
    }
}
