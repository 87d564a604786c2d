//! Monte Carlo ensembles of emitting atoms and the transport observables
//! measured on them.
//!
//! Trajectories run in parallel, each with its own random stream keyed by
//! `(seed, trajectory index)`, and are collected in index order. All
//! reductions run sequentially over that order, so results do not depend on
//! the number of worker threads.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{self, RamanNath};
use crate::chaos::{self, ChaosSpec, ChaosStats};
use crate::dynamics::{AtomState, Integrator, NoObserver};
use crate::emission::{
    mix_seed, propagate_with_jumps, JumpEvent, JumpPropagation, RecoilLaw, RngStream, TrajectoryStatus,
};
use crate::stats::{jackknife_stderr, linear_fit};
use crate::{Error, PhysicalConstants, Result, SimParams};

/// Fraction of failed or non-ballistic trajectories above which an ensemble
/// is unreliable.
pub const UNRELIABLE_FRACTION: f64 = 0.1;
/// Sign-change fraction at which a bin is flagged non-ballistic.
pub const NON_BALLISTIC_FRACTION: f64 = 0.01;

/// Initial position distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PositionLaw {
    /// `x₀ ~ U[0, 2π)`.
    UniformPhase,
    /// `x₀ ~ N(0, σ²)`; `sigma = 0` gives a point cloud.
    Gaussian { sigma: f64 },
}

/// Ensemble definition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSpec {
    pub n_traj: usize,
    pub p0_mean: f64,
    /// Standard deviation of the Gaussian initial momentum.
    pub p0_sigma: f64,
    /// Half-width `w` of a log-uniform spread of the momentum centre,
    /// `p0_mean·exp(w·U[−1, 1])`; zero gives a single centre.
    pub p0_log_spread: f64,
    pub x0: PositionLaw,
    pub tau_max: f64,
    pub sample_interval: f64,
    pub step: f64,
    pub recoil: RecoilLaw,
    pub seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_traj: 200,
            p0_mean: 1e3,
            p0_sigma: 0.0,
            p0_log_spread: 0.0,
            x0: PositionLaw::UniformPhase,
            tau_max: 3e4,
            sample_interval: 50.0,
            step: crate::dynamics::DEFAULT_STEP,
            recoil: RecoilLaw::Uniform,
            seed: 0,
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("ensemble.{field}"), msg));
        if self.n_traj < 2 {
            return bad("n_traj", "ensemble.n_traj must be ≥ 2".into());
        }
        if !(self.p0_mean.is_finite() && self.p0_mean > 0.0) {
            return bad("p0_mean", "ensemble.p0_mean must be > 0".into());
        }
        if !(self.p0_sigma.is_finite() && self.p0_sigma >= 0.0) {
            return bad("p0_sigma", "ensemble.p0_sigma must be ≥ 0".into());
        }
        if !(self.p0_log_spread.is_finite() && (0.0..1.0).contains(&self.p0_log_spread)) {
            return bad("p0_log_spread", "ensemble.p0_log_spread must lie in [0, 1)".into());
        }
        if let PositionLaw::Gaussian { sigma } = self.x0 {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return bad("x0.sigma", "ensemble.x0.sigma must be ≥ 0".into());
            }
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return bad("step", "ensemble.step must be > 0".into());
        }
        if !(self.tau_max.is_finite() && self.tau_max > 0.0) {
            return bad("tau_max", "ensemble.tau_max must be > 0".into());
        }
        if !(self.sample_interval >= self.step && self.sample_interval <= self.tau_max) {
            return bad(
                "sample_interval",
                "ensemble.sample_interval must lie in [step, tau_max]".into(),
            );
        }
        Ok(())
    }
}

/// Sampled positions and momenta of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub initial: AtomState,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    pub node_crossings: usize,
    pub status: TrajectoryStatus,
    pub ballistic: bool,
}

impl TrajectoryRecord {
    /// Completed and ballistic.
    pub fn usable(&self) -> bool {
        self.status == TrajectoryStatus::Completed && self.ballistic
    }
}

/// Output of [`run_ensemble`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRecords {
    pub params: SimParams,
    pub spec: EnsembleSpec,
    pub times: Vec<f64>,
    pub trajectories: Vec<TrajectoryRecord>,
}

impl EnsembleRecords {
    pub fn failed(&self) -> usize {
        self.trajectories
            .iter()
            .filter(|t| t.status == TrajectoryStatus::Failed)
            .count()
    }

    /// Completed trajectories whose momentum changed sign.
    pub fn non_ballistic(&self) -> usize {
        self.trajectories
            .iter()
            .filter(|t| t.status == TrajectoryStatus::Completed && !t.ballistic)
            .count()
    }

    pub fn usable(&self) -> impl Iterator<Item = &TrajectoryRecord> {
        self.trajectories.iter().filter(|t| t.usable())
    }

    /// More than 10% of trajectories failed or lost ballisticity.
    pub fn unreliable(&self) -> bool {
        let bad = self.failed() + self.non_ballistic();
        bad as f64 > UNRELIABLE_FRACTION * self.trajectories.len() as f64
    }

    /// Ensemble moments over usable trajectories.
    pub fn moments(&self) -> MomentSeries {
        let usable: Vec<&TrajectoryRecord> = self.usable().collect();
        MomentSeries::from_columns(
            &self.times,
            &usable.iter().map(|t| t.x.as_slice()).collect::<Vec<_>>(),
            &usable.iter().map(|t| t.p.as_slice()).collect::<Vec<_>>(),
        )
    }
}

/// Initial condition drawn from the ensemble law; trajectory `i` of
/// [`run_ensemble`] uses `RngStream::new(spec.seed, i)`.
pub fn draw_initial(spec: &EnsembleSpec, rng: &mut RngStream) -> AtomState {
    let x0 = match spec.x0 {
        PositionLaw::UniformPhase => rng.uniform_in(0.0, std::f64::consts::TAU),
        PositionLaw::Gaussian { sigma } if sigma > 0.0 => Normal::new(0.0, sigma)
            .expect("validated sigma")
            .sample(rng.rng()),
        PositionLaw::Gaussian { .. } => 0.0,
    };
    let centre = if spec.p0_log_spread > 0.0 {
        spec.p0_mean * (spec.p0_log_spread * rng.uniform_in(-1.0, 1.0)).exp()
    } else {
        spec.p0_mean
    };
    let p0 = if spec.p0_sigma > 0.0 {
        Normal::new(centre, spec.p0_sigma)
            .expect("validated sigma")
            .sample(rng.rng())
    } else {
        centre
    };
    AtomState::ground(x0, p0)
}

/// Runs `spec.n_traj` independent emitting trajectories.
pub fn run_ensemble(spec: &EnsembleSpec, params: &SimParams) -> Result<EnsembleRecords> {
    spec.validate()?;
    params.validate()?;
    let integrator = Integrator::new(spec.step)?;
    let mut opts = JumpPropagation::new(spec.tau_max, spec.sample_interval);
    opts.recoil = spec.recoil;

    let trajectories = (0..spec.n_traj)
        .into_par_iter()
        .map(|index| {
            let mut rng = RngStream::new(spec.seed, index as u64);
            let initial = draw_initial(spec, &mut rng);
            let t = propagate_with_jumps(initial, params, &integrator, &opts, &mut rng, &mut NoObserver)?;
            Ok(TrajectoryRecord {
                index,
                initial,
                x: t.samples.iter().map(|s| s.x).collect(),
                p: t.samples.iter().map(|s| s.p).collect(),
                jumps: t.jumps,
                node_crossings: t.node_crossings,
                status: t.status,
                ballistic: t.ballistic,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_samples = trajectories
        .iter()
        .filter(|t| t.status == TrajectoryStatus::Completed)
        .map(|t| t.p.len())
        .max()
        .unwrap_or(0);
    let times = (0..n_samples).map(|k| k as f64 * spec.sample_interval).collect();
    Ok(EnsembleRecords {
        params: *params,
        spec: *spec,
        times,
        trajectories,
    })
}

/// Per-sample ensemble moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub var_x: Vec<f64>,
    pub mean_p: Vec<f64>,
    pub var_p: Vec<f64>,
    pub n_traj: usize,
}

fn column_moments(columns: &[&[f64]], k: usize) -> (f64, f64) {
    let n = columns.len() as f64;
    let mean = columns.iter().map(|c| c[k]).sum::<f64>() / n;
    let var = if columns.len() > 1 {
        columns.iter().map(|c| (c[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

impl MomentSeries {
    pub fn from_columns(times: &[f64], xs: &[&[f64]], ps: &[&[f64]]) -> Self {
        let len = if ps.is_empty() { 0 } else { times.len() };
        let mut out = Self {
            times: times[..len].to_vec(),
            mean_x: Vec::with_capacity(len),
            var_x: Vec::with_capacity(len),
            mean_p: Vec::with_capacity(len),
            var_p: Vec::with_capacity(len),
            n_traj: ps.len(),
        };
        for k in 0..len {
            let (mx, vx) = column_moments(xs, k);
            let (mp, vp) = column_moments(ps, k);
            out.mean_x.push(mx);
            out.var_x.push(vx);
            out.mean_p.push(mp);
            out.var_p.push(vp);
        }
        out
    }
}

/// Rules for choosing the fit window of the diffusion and friction slopes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowPolicy {
    /// Initial transient to skip; `None` means one mean emission interval `2/γ`.
    pub transient: Option<f64>,
    /// Truncate once `σ_p` exceeds this fraction of `⟨p⟩`.
    pub max_sigma_fraction: f64,
    /// Truncate once `|⟨p⟩ − ⟨p⟩(0)|` exceeds this fraction of `⟨p⟩(0)`.
    pub max_drift_fraction: f64,
    /// When the friction is resolved, end the window by `fraction·p/|F|`.
    pub friction_horizon_fraction: f64,
    /// `|F|` must exceed this many standard errors to count as resolved.
    pub friction_significance: f64,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        Self {
            transient: None,
            max_sigma_fraction: 0.05,
            max_drift_fraction: 0.05,
            friction_horizon_fraction: 0.05,
            friction_significance: 3.0,
        }
    }
}

impl WindowPolicy {
    pub fn transient_for(&self, params: &SimParams) -> f64 {
        self.transient
            .unwrap_or(if params.gamma > 0.0 { 2.0 / params.gamma } else { 0.0 })
    }
}

/// Diffusion coefficient measured as half the slope of `σ_p²(τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    /// `None` when no valid fit window exists.
    pub d_p: Option<f64>,
    /// Leave-one-trajectory-out jackknife standard error.
    pub stderr: f64,
    pub window: (f64, f64),
    pub n_samples: usize,
    pub n_traj: usize,
    pub ballistic_violations: usize,
    pub failed: usize,
    pub friction: Option<FrictionEstimate>,
    pub diagnostic: Option<String>,
}

/// Mean force `F = d⟨p⟩/dτ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionEstimate {
    pub force: f64,
    pub stderr: f64,
    pub window: (f64, f64),
}

impl FrictionEstimate {
    pub fn resolved(&self, significance: f64) -> bool {
        self.force.abs() > significance * self.stderr
    }
}

/// Centered sample columns restricted to a window, prepared for
/// leave-one-out statistics.
struct WindowData {
    times: Vec<f64>,
    /// `columns[i][k]`: deviation of trajectory `i` from the sample mean.
    dev: Vec<Vec<f64>>,
    mean: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl WindowData {
    fn new(times: &[f64], ps: &[&[f64]], lo: usize, hi: usize) -> Self {
        let n = ps.len() as f64;
        let mean: Vec<f64> = (lo..=hi).map(|k| ps.iter().map(|c| c[k]).sum::<f64>() / n).collect();
        let dev: Vec<Vec<f64>> = ps
            .iter()
            .map(|c| (lo..=hi).map(|k| c[k] - mean[k - lo]).collect())
            .collect();
        let sum_sq = (0..mean.len()).map(|j| dev.iter().map(|d| d[j] * d[j]).sum()).collect();
        Self {
            times: times[lo..=hi].to_vec(),
            dev,
            mean,
            sum_sq,
        }
    }

    fn n(&self) -> usize {
        self.dev.len()
    }

    fn variance(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.sum_sq.iter().map(|s| s / (n - 1.0)).collect()
    }

    fn variance_without(&self, i: usize) -> Vec<f64> {
        let m = (self.n() - 1) as f64;
        (0..self.times.len())
            .map(|j| {
                let d = self.dev[i][j];
                let shift = -d / m;
                (self.sum_sq[j] - d * d - m * shift * shift) / (m - 1.0)
            })
            .collect()
    }

    fn mean_without(&self, i: usize) -> Vec<f64> {
        let m = (self.n() - 1) as f64;
        (0..self.times.len())
            .map(|j| self.mean[j] - self.dev[i][j] / m)
            .collect()
    }
}

fn slope(times: &[f64], ys: &[f64]) -> f64 {
    linear_fit(times, ys).map_or(f64::NAN, |f| f.slope)
}

fn diffusion_on(data: &WindowData) -> (f64, f64) {
    let d = 0.5 * slope(&data.times, &data.variance());
    let reps: Vec<f64> = (0..data.n())
        .map(|i| 0.5 * slope(&data.times, &data.variance_without(i)))
        .collect();
    (d, jackknife_stderr(&reps))
}

fn friction_on(data: &WindowData) -> FrictionEstimate {
    let force = slope(&data.times, &data.mean);
    let reps: Vec<f64> = (0..data.n())
        .map(|i| slope(&data.times, &data.mean_without(i)))
        .collect();
    FrictionEstimate {
        force,
        stderr: jackknife_stderr(&reps),
        window: (data.times[0], *data.times.last().unwrap()),
    }
}

/// Sample index range `[lo, hi]` allowed by the policy before friction is
/// taken into account. `moments` describes momentum displacements
/// `p(τ) − p(0)`, and `p_ref` is the initial mean momentum.
fn base_window(moments: &MomentSeries, p_ref: f64, policy: &WindowPolicy, params: &SimParams) -> Option<(usize, usize)> {
    let len = moments.times.len();
    if len < 2 {
        return None;
    }
    let t0 = moments.times[0];
    let transient = policy.transient_for(params);
    let lo = moments.times.iter().position(|&t| t - t0 >= transient - 1e-9)?;
    let mut hi = len - 1;
    for k in 0..len {
        let mean_p = p_ref + moments.mean_p[k];
        let spread = moments.var_p[k].max(0.0).sqrt() > policy.max_sigma_fraction * mean_p.abs();
        let drift = moments.mean_p[k].abs() > policy.max_drift_fraction * p_ref.abs();
        if spread || drift {
            if k == 0 {
                return None;
            }
            hi = k - 1;
            break;
        }
    }
    (hi > lo).then_some((lo, hi))
}

/// Measures `D_p = d(σ_p²)/(2dτ)` over the policy window.
///
/// The variance is taken over momentum displacements `p(τ) − p(0)`, which
/// equals `σ_p²(τ)` for a monoenergetic start and removes the initial spread
/// of an ensemble that covers a momentum bin.
pub fn estimate_diffusion(records: &EnsembleRecords, policy: &WindowPolicy) -> DiffusionEstimate {
    let usable: Vec<&TrajectoryRecord> = records.usable().collect();
    let shifted: Vec<Vec<f64>> = usable
        .iter()
        .map(|t| t.p.iter().map(|p| p - t.p.first().copied().unwrap_or(0.0)).collect())
        .collect();
    let ps: Vec<&[f64]> = shifted.iter().map(Vec::as_slice).collect();
    let xs: Vec<&[f64]> = usable.iter().map(|t| t.x.as_slice()).collect();
    let moments = MomentSeries::from_columns(&records.times, &xs, &ps);
    let p_ref = if usable.is_empty() {
        f64::NAN
    } else {
        usable.iter().map(|t| t.p.first().copied().unwrap_or(0.0)).sum::<f64>() / usable.len() as f64
    };
    let mut out = DiffusionEstimate {
        d_p: None,
        stderr: f64::NAN,
        window: (f64::NAN, f64::NAN),
        n_samples: 0,
        n_traj: usable.len(),
        ballistic_violations: records.non_ballistic(),
        failed: records.failed(),
        friction: None,
        diagnostic: None,
    };
    if usable.len() < 3 {
        out.diagnostic = Some(format!("only {} usable trajectories", usable.len()));
        return out;
    }
    let Some((lo, mut hi)) = base_window(&moments, p_ref, policy, &records.params) else {
        out.diagnostic = Some("empty fit window: spread or drift cap reached before the transient ended".into());
        return out;
    };

    let mut data = WindowData::new(&records.times, &ps, lo, hi);
    let mut friction = friction_on(&data);
    if friction.resolved(policy.friction_significance) {
        let horizon = records.times[0]
            + policy.friction_horizon_fraction * p_ref.abs() / friction.force.abs();
        if let Some(k) = records.times.iter().rposition(|&t| t <= horizon) {
            if k < hi {
                if k <= lo {
                    out.diagnostic = Some(format!(
                        "empty fit window: friction horizon {horizon:.3e} precedes the transient"
                    ));
                    out.friction = Some(friction);
                    return out;
                }
                hi = k;
                data = WindowData::new(&records.times, &ps, lo, hi);
                friction = friction_on(&data);
            }
        }
    }

    let (d, se) = diffusion_on(&data);
    out.d_p = Some(d);
    out.stderr = se;
    out.window = (records.times[lo], records.times[hi]);
    out.n_samples = hi - lo + 1;
    out.friction = Some(friction);
    out
}

/// Measures `F = ⟨ṗ⟩` over the same window as [`estimate_diffusion`].
pub fn estimate_friction(records: &EnsembleRecords, policy: &WindowPolicy) -> Option<FrictionEstimate> {
    estimate_diffusion(records, policy).friction
}

/// Log-spaced grid of `n` momenta from `p_min` to `p_max` inclusive.
pub fn log_grid(p_min: f64, p_max: f64, n: usize) -> Result<Vec<f64>> {
    if !(p_min > 0.0 && p_max > p_min && n >= 2) {
        return Err(Error::InvalidArgument(format!(
            "log grid needs 0 < p_min < p_max and n ≥ 2 (got {p_min}, {p_max}, {n})"
        )));
    }
    let ratio = (p_max / p_min).ln() / (n - 1) as f64;
    Ok((0..n).map(|i| p_min * (ratio * i as f64).exp()).collect())
}

/// Diagnostic flags on a sweep row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFlag {
    /// More than 10% failed or non-ballistic trajectories.
    Unreliable,
    /// At least 1% of the trajectories reversed direction.
    NonBallistic,
    /// No valid diffusion fit window.
    NoEstimate,
    /// The chaos probability could not be computed.
    ChaosFailed,
    /// Kinetic energy not dominant by the required margin.
    RamanNathViolated,
    /// `|Δ|` outside the small-detuning range of the analytic laws.
    StrongDetuning,
}

impl SweepFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepFlag::Unreliable => "unreliable",
            SweepFlag::NonBallistic => "non_ballistic",
            SweepFlag::NoEstimate => "no_estimate",
            SweepFlag::ChaosFailed => "chaos_failed",
            SweepFlag::RamanNathViolated => "raman_nath_violated",
            SweepFlag::StrongDetuning => "strong_detuning",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            SweepFlag::Unreliable,
            SweepFlag::NonBallistic,
            SweepFlag::NoEstimate,
            SweepFlag::ChaosFailed,
            SweepFlag::RamanNathViolated,
            SweepFlag::StrongDetuning,
        ]
        .into_iter()
        .find(|f| f.as_str() == s)
    }
}

/// One momentum bin of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    /// Chaos probability Λ (NaN when unavailable).
    pub chaos_probability: f64,
    pub chaos: Option<ChaosStats>,
    /// Measured `D_p` (NaN when unavailable).
    pub d_measured: f64,
    pub d_stderr: f64,
    pub d_chaotic: f64,
    pub d_regular: f64,
    /// Blended law at the measured Λ (NaN when Λ is unavailable).
    pub d_blended: f64,
    pub flags: Vec<SweepFlag>,
    pub diffusion: Option<DiffusionEstimate>,
}

impl SweepRow {
    pub fn has(&self, flag: SweepFlag) -> bool {
        self.flags.contains(&flag)
    }
}

/// Settings of a momentum sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub chaos: ChaosSpec,
    /// Template; `p0_mean` and `seed` are set per bin.
    pub ensemble: EnsembleSpec,
    pub window: WindowPolicy,
    pub seed: u64,
    /// Spread each bin's ensemble log-uniformly over the bin, so that the
    /// measured `D_p` is an average over close momenta.
    pub bin_averaging: bool,
}

/// Log half-widths of the bins around each grid point: half the log distance
/// to the neighbours, one-sided at the edges.
pub fn bin_half_widths(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let l: Vec<f64> = grid.iter().map(|p| p.ln()).collect();
    (0..n)
        .map(|i| match i {
            0 => 0.5 * (l[1] - l[0]),
            i if i == n - 1 => 0.5 * (l[n - 1] - l[n - 2]),
            i => 0.25 * (l[i + 1] - l[i - 1]),
        })
        .collect()
}

const TAG_CHAOS: u64 = 0x6368_616f_73;
const TAG_ENSEMBLE: u64 = 0x656e_7365_6d62;

/// Seeds used for bin `index`: `(chaos, ensemble)`.
pub fn bin_seeds(seed: u64, index: usize) -> (u64, u64) {
    let base = mix_seed(seed, index as u64);
    (mix_seed(base, TAG_CHAOS), mix_seed(base, TAG_ENSEMBLE))
}

/// Computes one sweep row: Λ on the conservative system, `D_p` on the
/// emitting ensemble, and the analytic laws at the bin centre. `log_spread`
/// is the ensemble's log-uniform momentum half-width.
pub fn sweep_bin(index: usize, p: f64, log_spread: f64, params: &SimParams, spec: &SweepSpec) -> Result<SweepRow> {
    let (chaos_seed, ensemble_seed) = bin_seeds(spec.seed, index);
    let mut flags = Vec::new();

    let initial = chaos::bin_initial_conditions(p, spec.chaos.n_traj, spec.chaos.p_jitter, chaos_seed);
    let chaos = match chaos::chaos_probability(&initial, params, &spec.chaos) {
        Ok(c) if c.stats.n_chaotic + c.stats.n_regular > 0 => Some(c.stats),
        _ => {
            flags.push(SweepFlag::ChaosFailed);
            None
        }
    };

    let ensemble_spec = EnsembleSpec {
        p0_mean: p,
        p0_log_spread: log_spread,
        seed: ensemble_seed,
        ..spec.ensemble
    };
    let records = run_ensemble(&ensemble_spec, params)?;
    let diffusion = estimate_diffusion(&records, &spec.window);
    if records.unreliable() {
        flags.push(SweepFlag::Unreliable);
    }
    if records.non_ballistic() as f64 >= NON_BALLISTIC_FRACTION * records.trajectories.len() as f64 {
        flags.push(SweepFlag::NonBallistic);
    }
    if diffusion.d_p.is_none() {
        flags.push(SweepFlag::NoEstimate);
    }
    if analytic::raman_nath_regime(params, p) == RamanNath::Violated {
        flags.push(SweepFlag::RamanNathViolated);
    }
    if !params.weak_detuning() {
        flags.push(SweepFlag::StrongDetuning);
    }

    let lambda = chaos.map_or(f64::NAN, |c| c.probability);
    Ok(SweepRow {
        p,
        chaos_probability: lambda,
        chaos,
        d_measured: diffusion.d_p.unwrap_or(f64::NAN),
        d_stderr: if diffusion.d_p.is_some() { diffusion.stderr } else { f64::NAN },
        d_chaotic: analytic::d_chaotic(params, p),
        d_regular: analytic::d_regular(params, p),
        d_blended: analytic::d_blended(params, p, lambda).unwrap_or(f64::NAN),
        flags,
        diffusion: Some(diffusion),
    })
}

/// Runs [`sweep_bin`] over a strictly increasing grid. `on_bin` sees the
/// outcome of every bin; failing bins are skipped in the returned table.
pub fn sweep_momentum_with(
    grid: &[f64],
    params: &SimParams,
    spec: &SweepSpec,
    mut on_bin: impl FnMut(usize, f64, std::result::Result<&SweepRow, &Error>),
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("momentum grid must be nonempty and strictly increasing".into()));
    }
    params.validate()?;
    if params.gamma <= 0.0 {
        return Err(Error::InvalidArgument("sweeps need gamma > 0".into()));
    }
    let spreads = if spec.bin_averaging {
        bin_half_widths(grid)
    } else {
        vec![spec.ensemble.p0_log_spread; grid.len()]
    };
    let mut rows = Vec::with_capacity(grid.len());
    for (i, &p) in grid.iter().enumerate() {
        match sweep_bin(i, p, spreads[i], params, spec) {
            Ok(row) => {
                on_bin(i, p, Ok(&row));
                rows.push(row);
            }
            Err(e) => on_bin(i, p, Err(&e)),
        }
    }
    Ok(rows)
}

pub fn sweep_momentum(grid: &[f64], params: &SimParams, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    sweep_momentum_with(grid, params, spec, |_, _, _| {})
}

/// Cloud moments and derived laboratory quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudStats {
    pub moments: MomentSeries,
    /// Linear cloud size `2σ_x/k_f` (m) per sample.
    pub cloud_size: Vec<f64>,
    /// Temperature (K) per sample.
    pub temperature: Vec<f64>,
    pub diffusion: DiffusionEstimate,
    /// Heating rate (K/s) from the measured `D_p`.
    pub heating_rate: Option<f64>,
}

pub fn cloud_observables(
    records: &EnsembleRecords,
    constants: &PhysicalConstants,
    policy: &WindowPolicy,
) -> Result<CloudStats> {
    let moments = records.moments();
    let diffusion = estimate_diffusion(records, policy);
    let cloud_size = moments.var_x.iter().map(|&v| analytic::cloud_size(v, constants)).collect();
    let temperature = moments
        .var_p
        .iter()
        .map(|&v| analytic::temperature_and_heating(v.max(0.0), 0.0, constants).map(|(t, _)| t))
        .collect::<Result<Vec<_>>>()?;
    let heating_rate = match diffusion.d_p {
        Some(d) => Some(analytic::temperature_and_heating(0.0, d.max(0.0), constants)?.1),
        None => None,
    };
    Ok(CloudStats {
        moments,
        cloud_size,
        temperature,
        diffusion,
        heating_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(times: Vec<f64>, columns: Vec<Vec<f64>>, params: SimParams) -> EnsembleRecords {
        let trajectories = columns
            .into_iter()
            .enumerate()
            .map(|(index, p)| TrajectoryRecord {
                index,
                initial: AtomState::ground(0.0, p[0]),
                x: vec![0.0; p.len()],
                p,
                jumps: vec![],
                node_crossings: 0,
                status: TrajectoryStatus::Completed,
                ballistic: true,
            })
            .collect();
        EnsembleRecords {
            params,
            spec: EnsembleSpec::default(),
            times,
            trajectories,
        }
    }

    #[test]
    fn exact_linear_variance_growth() {
        // σ_p² = 0, 20, 40 at τ = 0, 100, 200 → D = 0.1.
        let times = vec![0.0, 100.0, 200.0];
        let a = [0.0, 20f64.sqrt(), 40f64.sqrt()];
        let cols = vec![
            a.iter().map(|d| 1000.0 + d).collect(),
            a.iter().map(|d| 1000.0 - d).collect(),
            vec![1000.0; 3],
        ];
        let rec = synthetic(times, cols, SimParams::cesium(-0.01));
        let policy = WindowPolicy {
            transient: Some(0.0),
            ..Default::default()
        };
        let est = estimate_diffusion(&rec, &policy);
        assert!((est.d_p.unwrap() - 0.1).abs() < 1e-12, "{est:?}");
        assert_eq!(est.window, (0.0, 200.0));
        let f = est.friction.unwrap();
        assert!(f.force.abs() < 1e-12);
    }

    #[test]
    fn empty_window_gives_diagnostic() {
        let times = vec![0.0, 100.0, 200.0];
        let cols = vec![vec![1000.0, 1100.0, 1200.0], vec![1000.0, 900.0, 800.0], vec![1000.0; 3]];
        let rec = synthetic(times, cols, SimParams::cesium(-0.01));
        let est = estimate_diffusion(&rec, &WindowPolicy::default());
        assert!(est.d_p.is_none());
        assert!(est.diagnostic.is_some());
    }

    #[test]
    fn friction_horizon_truncates_window() {
        // Uniform drift of 1e-3 per τ: resolved exactly, horizon 0.05·1000/1e-3 = 5e4.
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 1000.0).collect();
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|i| times.iter().map(|t| 1000.0 + 1e-3 * t + (i as f64 - 1.5) * 1e-3 * (t / 1e3).sin()).collect())
            .collect();
        let rec = synthetic(times, cols, SimParams::cesium(-0.01));
        let est = estimate_diffusion(&rec, &WindowPolicy::default());
        let f = est.friction.unwrap();
        assert!((f.force - 1e-3).abs() < 1e-6);
        assert!(est.window.1 <= 0.05 * 1000.0 / f.force.abs() + 1e-9);
    }

    #[test]
    fn leave_one_out_variance_matches_direct() {
        let times = vec![0.0, 1.0, 2.0];
        let cols: Vec<Vec<f64>> = vec![vec![1.0, 2.0, 4.0], vec![3.0, 1.0, 0.0], vec![2.0, 2.5, 7.0], vec![0.5, 1.5, 3.0]];
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let data = WindowData::new(&times, &refs, 0, 2);
        for i in 0..cols.len() {
            let rest: Vec<&[f64]> = refs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, c)| *c).collect();
            let direct = MomentSeries::from_columns(&times, &rest, &rest);
            let loo = data.variance_without(i);
            let loo_mean = data.mean_without(i);
            for k in 0..3 {
                assert!((loo[k] - direct.var_p[k]).abs() < 1e-12);
                assert!((loo_mean[k] - direct.mean_p[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = log_grid(1e3, 1e4, 12).unwrap();
        assert_eq!(g.len(), 12);
        assert!((g[0] - 1e3).abs() < 1e-9 && (g[11] - 1e4).abs() < 1e-6);
        let r = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
        }
        assert!(log_grid(1e3, 1e2, 5).is_err());
    }

    #[test]
    fn spec_validation() {
        let bad = EnsembleSpec {
            n_traj: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(EnsembleSpec::default().validate().is_ok());
    }

    #[test]
    fn same_seed_same_records() {
        let spec = EnsembleSpec {
            n_traj: 2,
            tau_max: 2000.0,
            sample_interval: 100.0,
            seed: 5,
            ..Default::default()
        };
        let params = SimParams::cesium(-0.01);
        let a = run_ensemble(&spec, &params).unwrap();
        let b = run_ensemble(&spec, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.times.len(), 21);
    }

    #[test]
    fn flags_round_trip_names() {
        for f in [SweepFlag::Unreliable, SweepFlag::NoEstimate, SweepFlag::StrongDetuning] {
            assert_eq!(SweepFlag::parse(f.as_str()), Some(f));
        }
    }
}
