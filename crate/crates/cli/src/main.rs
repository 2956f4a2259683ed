//! Command-line front end: reproducible simulation, optimization,
//! robustness-mapping and calibration runs that leave their inputs and
//! outputs on disk next to a manifest.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nvreg::calibration::{linear_fit, rescale_trace, shape_discrepancy, Tone};
use nvreg::dynamics::{propagate, DensityMatrix, Integrator, PropagateOptions};
use nvreg::hamiltonian::{Disturbance, SystemParams};
use nvreg::io;
use nvreg::optim::{
    optimize_crab, optimize_grape, optimize_pm, optimize_stirap, GrapeConfig, GrapeInit,
    NmConfig, OptimizationResult, SearchConfig,
};
use nvreg::pulses::{sample, PulseShape};
use nvreg::robustness::{
    average_fidelity_map, bpm_optimize, landscape_brute, landscape_estimate, BpmConfig,
    GridSpec, LandscapeConfig, WeightModel,
};
use nvreg::units;

#[derive(Parser, Serialize)]
#[command(name = "nvreg", version, about = "Pulse toolkit for a protected two-nuclear-spin register")]
struct Cli {
    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
enum Command {
    /// Propagate a pulse shape and export the field and trajectory.
    Simulate(SimulateArgs),
    /// Optimize one pulse family at a fixed duration.
    Optimize(OptimizeArgs),
    /// Optimize several methods over a range of durations.
    Sweep(SweepArgs),
    /// Fidelity landscapes over detuning and amplitude bias.
    #[command(subcommand)]
    Robustness(RobustnessCmd),
    /// Fit signal-chain lines and compare a measured trace to a simulation.
    Calibrate(CalibrateArgs),
    /// Sample a stored shape onto a grid and export it as CSV.
    Export(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum IntegratorArg {
    Expm,
    Rk4,
    Split,
}

impl From<IntegratorArg> for Integrator {
    fn from(v: IntegratorArg) -> Integrator {
        match v {
            IntegratorArg::Expm => Integrator::Expm { substeps: 1 },
            IntegratorArg::Rk4 => Integrator::rk4(),
            IntegratorArg::Split => Integrator::fast(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MethodArg {
    Stirap,
    GrapeG,
    GrapeLambda,
    Crab,
    Pm,
}

#[derive(Args, Serialize)]
struct CommonIo {
    /// System parameter file (JSON); defaults to the built-in register.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    io: CommonIo,
    /// Pulse shape file (JSON). Omit to simulate the fixed Gaussian pair.
    #[arg(long)]
    shape: Option<PathBuf>,
    /// Total duration in us.
    #[arg(long, short = 'T')]
    t: f64,
    /// Drive frequency detuning (rad/us).
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Relative drive amplitude bias.
    #[arg(long, default_value_t = 0.0)]
    kappa: f64,
    /// Field samples over [0, T].
    #[arg(long, default_value_t = nvreg::pulses::N_SAMPLES)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = IntegratorArg::Expm)]
    integrator: IntegratorArg,
    /// Record a trajectory checkpoint every this many slices.
    #[arg(long, default_value_t = 10)]
    stride: usize,
}

#[derive(Args, Serialize)]
struct OptimizeArgs {
    #[command(flatten)]
    io: CommonIo,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, short = 'T')]
    t: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    /// Objective evaluation budget per restart.
    #[arg(long, default_value_t = 2500)]
    max_evals: usize,
    /// Amplitude slices per tone for gradient ascent.
    #[arg(long, default_value_t = 100)]
    grape_slices: usize,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    io: CommonIo,
    /// Comma-separated methods, or "all".
    #[arg(long, default_value = "all")]
    methods: String,
    #[arg(long)]
    t_start: f64,
    #[arg(long)]
    t_end: f64,
    #[arg(long, default_value_t = 1.0)]
    t_step: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    #[arg(long, default_value_t = 2500)]
    max_evals: usize,
}

#[derive(Subcommand, Serialize)]
enum RobustnessCmd {
    /// Brute-force landscape of a stored shape.
    Map(RobustnessMapArgs),
    /// Surrogate estimate of the landscape from a few samples.
    Estimate(RobustnessEstimateArgs),
    /// Robust phase-modulated optimization of the weighted average fidelity.
    Optimize(RobustnessOptimizeArgs),
}

#[derive(Args, Serialize)]
struct GridArgs {
    /// Detuning half-range, kHz (grid spans +-this).
    #[arg(long, default_value_t = 200.0)]
    delta_khz: f64,
    /// Amplitude-bias half-range.
    #[arg(long, default_value_t = 0.5)]
    kappa_max: f64,
    /// Grid points per axis.
    #[arg(long, default_value_t = 50)]
    grid_n: usize,
}

impl GridArgs {
    fn grid(&self) -> GridSpec {
        let half = units::khz(self.delta_khz);
        GridSpec::uniform(
            (-half, half),
            (-self.kappa_max, self.kappa_max),
            self.grid_n,
            self.grid_n,
        )
    }
}

#[derive(Args, Serialize)]
struct RobustnessMapArgs {
    #[command(flatten)]
    io: CommonIo,
    #[arg(long)]
    shape: PathBuf,
    #[arg(long, short = 'T')]
    t: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value_t = IntegratorArg::Split)]
    integrator: IntegratorArg,
}

#[derive(Args, Serialize)]
struct RobustnessEstimateArgs {
    #[command(flatten)]
    io: CommonIo,
    #[arg(long)]
    shape: PathBuf,
    #[arg(long, short = 'T')]
    t: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = IntegratorArg::Split)]
    integrator: IntegratorArg,
}

#[derive(Args, Serialize)]
struct RobustnessOptimizeArgs {
    #[command(flatten)]
    io: CommonIo,
    #[arg(long, short = 'T')]
    t: f64,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    grid: GridArgs,
    /// Weight width in detuning, kHz (default: quarter of the half-range).
    #[arg(long)]
    sigma_delta_khz: Option<f64>,
    /// Weight width in amplitude bias.
    #[arg(long, default_value_t = 0.15)]
    sigma_kappa: f64,
    /// Surrogate samples per candidate.
    #[arg(long, default_value_t = 16)]
    surrogate_samples: usize,
    /// Robust search trials.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Restarts for the nominal optimization that seeds the search.
    #[arg(long, default_value_t = 20)]
    nominal_restarts: usize,
    #[arg(long, default_value_t = 2500)]
    max_evals: usize,
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    #[command(flatten)]
    io: CommonIo,
    /// Measured trace CSV (time_us, volts).
    #[arg(long)]
    real: PathBuf,
    /// Simulated field CSV to compare against.
    #[arg(long)]
    sim: PathBuf,
    #[arg(long, value_enum, default_value_t = ToneArg::Pump)]
    tone: ToneArg,
    /// Optional two-column CSV of (x, y) pairs to fit a calibration line.
    #[arg(long)]
    fit: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ToneArg {
    Pump,
    Stokes,
}

#[derive(Args, Serialize)]
struct ExportArgs {
    #[command(flatten)]
    io: CommonIo,
    #[arg(long)]
    shape: PathBuf,
    #[arg(long, short = 'T')]
    t: f64,
    #[arg(long, default_value_t = nvreg::pulses::N_SAMPLES)]
    samples: usize,
}

fn load_params(config: &Option<PathBuf>) -> nvreg::Result<SystemParams> {
    match config {
        Some(path) => io::load_params(path),
        None => Ok(SystemParams::default()),
    }
}

fn load_shape(path: &Option<PathBuf>, t: f64) -> nvreg::Result<PulseShape> {
    match path {
        Some(p) => io::read_shape_json(p),
        None => Ok(PulseShape::gaussian_fixed(t)),
    }
}

fn search_config(seed: u64, restarts: usize, max_evals: usize) -> SearchConfig {
    SearchConfig {
        restarts,
        seed,
        nm: NmConfig { f_tol: 1e-4, max_evals },
        ..Default::default()
    }
}

fn run_optimizer(
    method: MethodArg,
    t: f64,
    params: &SystemParams,
    seed: u64,
    restarts: usize,
    max_evals: usize,
    grape_slices: usize,
) -> nvreg::Result<OptimizationResult> {
    let cfg = search_config(seed, restarts, max_evals);
    let grape_cfg = GrapeConfig {
        n_slices: grape_slices,
        restarts,
        seed,
        max_evals,
        ..Default::default()
    };
    match method {
        MethodArg::Stirap => optimize_stirap(t, params, &cfg),
        MethodArg::Crab => optimize_crab(t, params, &cfg),
        MethodArg::Pm => optimize_pm(t, params, &cfg),
        MethodArg::GrapeG => optimize_grape(t, params, GrapeInit::Gaussian, &grape_cfg),
        MethodArg::GrapeLambda => optimize_grape(t, params, GrapeInit::InverseLambda, &grape_cfg),
    }
}

fn write_result_bundle(
    dir: &Path,
    result: &OptimizationResult,
    params: &SystemParams,
) -> nvreg::Result<()> {
    io::write_result_json(&dir.join("result.json"), result)?;
    io::write_shape_json(&dir.join("best_shape.json"), &result.best_shape)?;
    let n = nvreg::optim::natural_samples(&result.best_shape, nvreg::pulses::N_SAMPLES);
    let field = sample(&result.best_shape, result.t_total, n);
    io::write_field_csv(&dir.join("best_field.csv"), &field)?;
    io::write_convergence_csv(&dir.join("convergence.csv"), &result.trace)?;
    let traj = propagate(
        &field,
        Disturbance::NONE,
        params,
        &DensityMatrix::pure_state(0),
        &PropagateOptions::default(),
    )?;
    io::write_trajectory_csv(&dir.join("best_trajectory.csv"), &traj)?;
    Ok(())
}

fn run(cli: &Cli) -> nvreg::Result<()> {
    let manifest = serde_json::to_value(&cli.command).expect("args serialize");
    match &cli.command {
        Command::Simulate(a) => {
            let params = load_params(&a.io.config)?;
            let shape = load_shape(&a.shape, a.t)?;
            let field = sample(&shape, a.t, a.samples);
            let opts = PropagateOptions {
                integrator: a.integrator.into(),
                checkpoint_stride: a.stride,
                ..Default::default()
            };
            let dist = Disturbance::new(a.delta, a.kappa)?;
            let traj = propagate(&field, dist, &params, &DensityMatrix::pure_state(0), &opts)?;
            io::write_field_csv(&a.io.out.join("field.csv"), &field)?;
            io::write_trajectory_csv(&a.io.out.join("trajectory.csv"), &traj)?;
            let end = traj.final_checkpoint();
            let summary = serde_json::json!({
                "t_total_us": a.t,
                "fidelity_psi2": end.populations[1],
                "populations": end.populations,
                "purity": end.purity,
                "max_trace_drift": traj.max_trace_drift,
                "max_hermiticity_fix": traj.max_hermiticity_fix,
            });
            std::fs::write(
                a.io.out.join("summary.json"),
                format!("{}\n", serde_json::to_string_pretty(&summary).unwrap()),
            )?;
            io::write_manifest(&a.io.out.join("manifest.json"), manifest, None)?;
            println!("fidelity {:.6}", end.populations[1]);
        }
        Command::Optimize(a) => {
            let params = load_params(&a.io.config)?;
            let result = run_optimizer(
                a.method,
                a.t,
                &params,
                a.seed,
                a.restarts,
                a.max_evals,
                a.grape_slices,
            )?;
            write_result_bundle(&a.io.out, &result, &params)?;
            io::write_manifest(&a.io.out.join("manifest.json"), manifest, Some(a.seed))?;
            println!(
                "{} T={} best fidelity {:.6} ({} evaluations)",
                result.method, result.t_total, result.best_fidelity, result.n_evaluations
            );
        }
        Command::Sweep(a) => {
            let params = load_params(&a.io.config)?;
            let methods: Vec<MethodArg> = if a.methods == "all" {
                vec![
                    MethodArg::Stirap,
                    MethodArg::GrapeG,
                    MethodArg::GrapeLambda,
                    MethodArg::Crab,
                    MethodArg::Pm,
                ]
            } else {
                a.methods
                    .split(',')
                    .map(|m| MethodArg::from_str(m.trim(), true).map_err(nvreg::Error::Config))
                    .collect::<nvreg::Result<_>>()?
            };
            let mut rows = String::from("t_us,method,best_fidelity,n_evaluations\n");
            let mut t = a.t_start;
            while t <= a.t_end + 1e-9 {
                for &m in &methods {
                    let r = run_optimizer(m, t, &params, a.seed, a.restarts, a.max_evals, 100)?;
                    rows.push_str(&format!(
                        "{t},{},{},{}\n",
                        r.method, r.best_fidelity, r.n_evaluations
                    ));
                    println!("T={t} {}: {:.4}", r.method, r.best_fidelity);
                }
                t += a.t_step;
            }
            std::fs::create_dir_all(&a.io.out)?;
            std::fs::write(a.io.out.join("sweep.csv"), rows)?;
            io::write_manifest(&a.io.out.join("manifest.json"), manifest, Some(a.seed))?;
        }
        Command::Robustness(cmd) => match cmd {
            RobustnessCmd::Map(a) => {
                let params = load_params(&a.io.config)?;
                let shape = io::read_shape_json(&a.shape)?;
                let cfg = LandscapeConfig {
                    integrator: a.integrator.into(),
                    ..Default::default()
                };
                let map = landscape_brute(&shape, a.t, &params, &a.grid.grid(), &cfg)?;
                io::write_map_csv(&a.io.out.join("map.csv"), &map)?;
                io::write_manifest(&a.io.out.join("manifest.json"), manifest, None)?;
                println!(
                    "map written; value nearest origin {:.4}",
                    map.value_nearest_origin()
                );
            }
            RobustnessCmd::Estimate(a) => {
                let params = load_params(&a.io.config)?;
                let shape = io::read_shape_json(&a.shape)?;
                let cfg = LandscapeConfig {
                    integrator: a.integrator.into(),
                    ..Default::default()
                };
                let map = landscape_estimate(
                    &shape,
                    a.t,
                    &params,
                    &a.grid.grid(),
                    a.samples,
                    a.seed,
                    &cfg,
                )?;
                io::write_map_csv(&a.io.out.join("map.csv"), &map)?;
                io::write_manifest(&a.io.out.join("manifest.json"), manifest, Some(a.seed))?;
                println!("estimated map written ({} samples)", map.samples.len());
            }
            RobustnessCmd::Optimize(a) => {
                let params = load_params(&a.io.config)?;
                let grid = a.grid.grid();
                let weights = WeightModel {
                    sigma_delta: a
                        .sigma_delta_khz
                        .map(units::khz)
                        .unwrap_or_else(|| WeightModel::for_grid(&grid).sigma_delta),
                    sigma_kappa: a.sigma_kappa,
                };
                // nominal optimum first: the comparison baseline and warm start
                let nominal_cfg = search_config(a.seed, a.nominal_restarts, a.max_evals);
                let nominal = optimize_pm(a.t, &params, &nominal_cfg)?;
                let land_cfg = LandscapeConfig::default();
                let nominal_map =
                    landscape_brute(&nominal.best_shape, a.t, &params, &grid, &land_cfg)?;
                let bpm_cfg = BpmConfig {
                    grid: grid.clone(),
                    n_surrogate_samples: a.surrogate_samples,
                    trials: a.trials,
                    seed: a.seed,
                    warm_start: Some(nominal.best_shape.clone()),
                    ..Default::default()
                };
                let outcome = bpm_optimize(a.t, &params, &weights, &bpm_cfg)?;
                io::write_result_json(&a.io.out.join("result.json"), &outcome.result)?;
                io::write_shape_json(
                    &a.io.out.join("best_shape.json"),
                    &outcome.result.best_shape,
                )?;
                io::write_map_csv(&a.io.out.join("robust_map.csv"), &outcome.map)?;
                io::write_map_csv(&a.io.out.join("nominal_map.csv"), &nominal_map)?;
                let cmp = serde_json::json!({
                    "nominal_average": average_fidelity_map(&nominal_map, &weights),
                    "robust_average": average_fidelity_map(&outcome.map, &weights),
                    "nominal_area_f70": nominal_map.area_at_least(0.7),
                    "robust_area_f70": outcome.map.area_at_least(0.7),
                });
                std::fs::write(
                    a.io.out.join("comparison.json"),
                    format!("{}\n", serde_json::to_string_pretty(&cmp).unwrap()),
                )?;
                io::write_manifest(&a.io.out.join("manifest.json"), manifest, Some(a.seed))?;
                println!(
                    "robust average {:.4} vs nominal {:.4}",
                    cmp["robust_average"].as_f64().unwrap(),
                    cmp["nominal_average"].as_f64().unwrap()
                );
            }
        },
        Command::Calibrate(a) => {
            let real = io::read_trace_csv(&a.real)?;
            let sim = io::read_field_csv(&a.sim)?;
            let tone = match a.tone {
                ToneArg::Pump => Tone::Pump,
                ToneArg::Stokes => Tone::Stokes,
            };
            let rescaled = rescale_trace(&real, &sim, tone)?;
            let sim_values = match tone {
                Tone::Pump => &sim.omega_p,
                Tone::Stokes => &sim.omega_s,
            };
            let discrepancy = shape_discrepancy(sim_values, &rescaled.values);
            let mut report = serde_json::json!({
                "scale_factor": rescaled.scale_factor,
                "normalized_rms_discrepancy": discrepancy,
            });
            if let Some(fit_path) = &a.fit {
                let pairs = io::read_trace_csv(fit_path)?;
                let forward = linear_fit(&pairs.times, &pairs.voltages)?;
                let reverse = linear_fit(&pairs.voltages, &pairs.times)?;
                report["fit_y_on_x"] = serde_json::to_value(&forward).unwrap();
                report["fit_x_on_y"] = serde_json::to_value(&reverse).unwrap();
            }
            std::fs::create_dir_all(&a.io.out)?;
            let rescaled_trace = nvreg::calibration::MeasuredTrace {
                times: rescaled.times.clone(),
                voltages: rescaled.values.clone(),
                channel: "rescaled".into(),
                gain: 1.0,
            };
            io::write_trace_csv(&a.io.out.join("rescaled.csv"), &rescaled_trace)?;
            std::fs::write(
                a.io.out.join("report.json"),
                format!("{}\n", serde_json::to_string_pretty(&report).unwrap()),
            )?;
            io::write_manifest(&a.io.out.join("manifest.json"), manifest, None)?;
            println!("discrepancy {discrepancy:.4}");
        }
        Command::Export(a) => {
            let shape = io::read_shape_json(&a.shape)?;
            let field = sample(&shape, a.t, a.samples);
            io::write_field_csv(&a.io.out.join("field.csv"), &field)?;
            io::write_manifest(&a.io.out.join("manifest.json"), manifest, None)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.to_string() });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
