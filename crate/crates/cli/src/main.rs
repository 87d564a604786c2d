//! `lattice-chaos`: batch driver for trajectory, chaos and diffusion runs.

mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lattice_chaos::config::{load_config, RunConfig};
use lattice_chaos::dynamics::{Integrator, NoObserver};
use lattice_chaos::emission::{propagate_with_jumps, JumpPropagation, RngStream, TrajectoryStatus};
use lattice_chaos::ensemble::{self, bin_seeds, SweepFlag};
use lattice_chaos::output::{self, SweepTableRow};
use lattice_chaos::{chaos, SimParams};
use serde::Serialize;

use manifest::{BinDiagnostic, OutputDir, RunManifest};

pub const THREADS_ENV: &str = "LATTICE_CHAOS_THREADS";

#[derive(Parser)]
#[command(name = "lattice-chaos", version, about = "Chaotic transport of atoms in an optical lattice")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One sampled trajectory with its jump log.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Switch spontaneous emission off (gamma = 0).
        #[arg(long)]
        conservative: bool,
    },
    /// Momentum sweep of chaos probability and diffusion.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Per-trajectory Lyapunov exponents at one momentum.
    Lyapunov {
        #[command(flatten)]
        common: Common,
        /// Momentum of the bin (defaults to ensemble.p0_mean).
        #[arg(long)]
        p: Option<f64>,
    },
    /// Analytic diffusion laws on the sweep grid.
    Analytic {
        #[command(flatten)]
        common: Common,
        /// Chaos probability used for the blended law.
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
    },
    /// Moment time series of an expanding cloud.
    Cloud {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Master seed; overrides ensemble.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut config =
            load_config(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            config.set_seed(seed);
        }
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::Simulate { common, .. } => ("simulate", common),
        Command::Sweep { common } => ("sweep", common),
        Command::Lyapunov { common, .. } => ("lyapunov", common),
        Command::Analytic { common, .. } => ("analytic", common),
        Command::Cloud { common } => ("cloud", common),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            bail!("--threads must be ≥ 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let config = common.load()?;
    let mut manifest = RunManifest::new(name, &config, rayon::current_num_threads());
    let mut out = OutputDir::create(&common.out)?;
    let start = Instant::now();

    let result = match &cli.command {
        Command::Simulate { conservative, .. } => simulate(&config, *conservative, &mut out),
        Command::Sweep { .. } => sweep(&config, &mut out, &mut manifest),
        Command::Lyapunov { p, .. } => lyapunov(&config, p.unwrap_or(config.ensemble.p0_mean), &mut out),
        Command::Analytic { lambda, .. } => analytic(&config, *lambda, &mut out),
        Command::Cloud { .. } => cloud(&config, &mut out),
    };
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    out.finish(manifest)?;
    result
}

#[derive(Serialize)]
struct SimulateSummary {
    params: SimParams,
    initial: [f64; 5],
    final_state: [f64; 6],
    jumps: usize,
    node_crossings: usize,
    ballistic: bool,
    status: TrajectoryStatus,
}

fn simulate(config: &RunConfig, conservative: bool, out: &mut OutputDir) -> Result<()> {
    let params = if conservative {
        config.params.conservative()
    } else {
        config.params
    };
    let spec = &config.ensemble;
    let digits = config.output.digits;
    let mut rng = RngStream::new(spec.seed, 0);
    let initial = ensemble::draw_initial(spec, &mut rng);
    let mut opts = JumpPropagation::new(spec.tau_max, spec.sample_interval);
    opts.recoil = spec.recoil;
    let integrator = Integrator::new(spec.step)?;
    let t = propagate_with_jumps(initial, &params, &integrator, &opts, &mut rng, &mut NoObserver)?;

    out.write("trajectory.csv", &output::trajectory_csv(&t.samples, digits))?;
    out.write("jumps.csv", &output::jumps_csv(&t.jumps, digits))?;
    let f = t.final_state;
    out.write_json(
        "summary.json",
        &SimulateSummary {
            params,
            initial: [initial.x, initial.p, initial.u, initial.v, initial.z],
            final_state: [f.tau, f.x, f.p, f.u, f.v, f.z],
            jumps: t.jumps.len(),
            node_crossings: t.node_crossings,
            ballistic: t.ballistic,
            status: t.status,
        },
    )?;
    if t.status == TrajectoryStatus::Failed {
        bail!("trajectory integration failed (non-finite state)");
    }
    Ok(())
}

fn sweep(config: &RunConfig, out: &mut OutputDir, manifest: &mut RunManifest) -> Result<()> {
    let grid = config.sweep.grid()?;
    let spec = config.sweep_spec();
    let digits = config.output.digits;
    let mut clock = Instant::now();
    let mut bins = Vec::new();
    let rows = ensemble::sweep_momentum_with(
        &grid,
        &config.params,
        &spec,
        |i, p, outcome| {
            let seconds = clock.elapsed().as_secs_f64();
            clock = Instant::now();
            let diag = match outcome {
                Ok(row) => {
                    eprintln!(
                        "bin {i:>2}  p = {p:>9.1}  Lambda = {:.3}  D = {:.4e} ± {:.1e}  ({seconds:.0} s)",
                        row.chaos_probability, row.d_measured, row.d_stderr
                    );
                    BinDiagnostic {
                        index: i,
                        p,
                        ok: true,
                        error: None,
                        flags: row.flags.clone(),
                        chaos: row.chaos,
                        diffusion: row.diffusion.clone(),
                        seconds,
                    }
                }
                Err(e) => {
                    eprintln!("bin {i:>2}  p = {p:>9.1}  failed: {e}");
                    BinDiagnostic {
                        index: i,
                        p,
                        ok: false,
                        error: Some(e.to_string()),
                        flags: Vec::new(),
                        chaos: None,
                        diffusion: None,
                        seconds,
                    }
                }
            };
            bins.push(diag);
        },
    )?;
    manifest.bins = bins;
    if rows.is_empty() {
        bail!("every sweep bin failed");
    }
    let table: Vec<SweepTableRow> = rows.iter().map(SweepTableRow::from).collect();
    out.write("sweep.csv", &output::sweep_table_csv(&table, digits))?;
    if config.output.plot_files {
        let (d, l) = output::plot_columns(&table, digits)?;
        out.write("sweep_D.dat", &d)?;
        out.write("sweep_Lambda.dat", &l)?;
    }
    let flagged = rows.iter().filter(|r| r.has(SweepFlag::Unreliable)).count();
    if flagged > 0 {
        eprintln!("{flagged} bin(s) flagged unreliable; see manifest.json");
    }
    Ok(())
}

#[derive(Serialize)]
struct LyapunovSummary {
    p: f64,
    noise_floor: f64,
    stats: chaos::ChaosStats,
}

fn lyapunov(config: &RunConfig, p: f64, out: &mut OutputDir) -> Result<()> {
    if !(p.is_finite() && p > 0.0) {
        bail!("momentum must be > 0, got {p}");
    }
    let spec = &config.chaos;
    let (seed, _) = bin_seeds(config.seed(), 0);
    let initial = chaos::bin_initial_conditions(p, spec.n_traj, spec.p_jitter, seed);
    let ens = chaos::chaos_probability(&initial, &config.params, spec)?;
    let digits = config.output.digits;
    out.write("lyapunov.csv", &output::lyapunov_csv(&initial, &ens.exponents, &ens.stats, digits))?;
    out.write_json(
        "chaos_stats.json",
        &LyapunovSummary {
            p,
            noise_floor: ens.noise_floor,
            stats: ens.stats,
        },
    )?;
    if ens.stats.n_chaotic + ens.stats.n_regular == 0 {
        bail!("no exponent could be computed");
    }
    Ok(())
}

fn analytic(config: &RunConfig, lambda: f64, out: &mut OutputDir) -> Result<()> {
    let grid = config.sweep.grid()?;
    let text = output::analytic_csv(&config.params, &grid, lambda, config.output.digits)?;
    out.write("analytic.csv", &text)
}

#[derive(Serialize)]
struct CloudSummary {
    diffusion: ensemble::DiffusionEstimate,
    heating_rate: Option<f64>,
    failed: usize,
    non_ballistic: usize,
}

fn cloud(config: &RunConfig, out: &mut OutputDir) -> Result<()> {
    let records = ensemble::run_ensemble(&config.ensemble, &config.params)?;
    if records.usable().next().is_none() {
        bail!("no usable trajectory in the ensemble");
    }
    let stats = ensemble::cloud_observables(&records, &config.physical_constants(), &config.sweep.window)?;
    out.write("cloud.csv", &output::cloud_csv(&stats, &config.params, config.output.digits))?;
    out.write_json(
        "cloud_summary.json",
        &CloudSummary {
            diffusion: stats.diffusion.clone(),
            heating_rate: stats.heating_rate,
            failed: records.failed(),
            non_ballistic: records.non_ballistic(),
        },
    )
}
