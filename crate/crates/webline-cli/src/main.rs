//! Benchmark CLI: closed-loop runs, baseline calibration, and rollout
//! scaling measurements.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use webline::config::RunConfig;
use webline::cost::{CostVariant, ReferenceTrajectory};
use webline::harness::{
    calibrate_r_scale, compute_metrics, emit_results, run_closed_loop, Controller,
};
use webline::lmpc::LmpcController;
use webline::mppi::{mppi_step, ControlPlan, MppiController};
use webline::cost::ControlPenalty;
use webline::harness::scenario::default_line_params;
use webline::{Error, Result};

/// Tension band (N) defining convergence, shared by all benchmark cases.
const METRIC_BAND: f64 = 0.5;

#[derive(Parser)]
#[command(name = "webline", about = "Web-line tension control benchmarks")]
struct Cli {
    /// Worker threads for the Monte-Carlo rollouts (also WEBLINE_WORKERS).
    /// Changes speed only, never results.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerKind {
    MppiL1,
    MppiQuadratic,
    Lmpc,
}

#[derive(Clone, Copy, ValueEnum)]
enum StockScenario {
    TensionStep,
    SpeedUp,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop case and write CSV/JSON results.
    Run {
        /// Stock scenario name (tension-step | speed-up) or a TOML path.
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum)]
        controller: ControllerKind,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of Monte-Carlo rollouts.
        #[arg(long)]
        samples: Option<usize>,
        /// Output directory for timeseries.csv / metrics.json / webs.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Disable the plant disturbance for this run.
        #[arg(long)]
        no_noise: bool,
    },
    /// Bisect the baseline penalty scale to match the sampling
    /// controller's control amplitude.
    CalibrateLmpc {
        #[arg(long, default_value = "tension-step")]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        samples: Option<usize>,
        /// Relative amplitude tolerance.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
    /// Measure rollout wall time while doubling the sample count and the
    /// line size.
    BenchScaling {
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers.or_else(|| {
        std::env::var("WEBLINE_WORKERS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(w) = workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: could not configure {w} workers: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            scenario,
            controller,
            seed,
            samples,
            out,
            no_noise,
        } => run_case(&scenario, controller, seed, samples, &out, no_noise),
        Command::CalibrateLmpc {
            scenario,
            seed,
            samples,
            tolerance,
        } => calibrate(&scenario, seed, samples, tolerance),
        Command::BenchScaling { repeats } => bench_scaling(repeats),
    }
}

fn load_config(name: &str) -> Result<RunConfig> {
    match name {
        "tension-step" => Ok(RunConfig::tension_step()),
        "speed-up" => Ok(RunConfig::speed_up()),
        path => RunConfig::load(std::path::Path::new(path)),
    }
}

fn build_controller(
    cfg: &RunConfig,
    kind: ControllerKind,
    refs: &ReferenceTrajectory,
    seed: u64,
) -> Result<Box<dyn Controller>> {
    let params = cfg.line.build()?;
    match kind {
        ControllerKind::Lmpc => {
            let cost = cfg.build_cost()?;
            Ok(Box::new(LmpcController::new(
                params,
                cost.q_diag,
                cfg.lmpc.clone(),
                refs.clone(),
            )?))
        }
        ControllerKind::MppiL1 | ControllerKind::MppiQuadratic => {
            let mut cost_section = cfg.cost.clone();
            cost_section.variant = match kind {
                ControllerKind::MppiL1 => CostVariant::QuadraticL1,
                _ => CostVariant::Quadratic,
            };
            let cost = cost_section.build(cfg.line.n_sections)?;
            let mut mppi_cfg = cfg.mppi.clone();
            mppi_cfg.seed = seed;
            Ok(Box::new(MppiController::new(params, cost, mppi_cfg, refs.clone())?))
        }
    }
}

fn run_case(
    scenario: &str,
    kind: ControllerKind,
    seed: Option<u64>,
    samples: Option<usize>,
    out: &std::path::Path,
    no_noise: bool,
) -> Result<()> {
    let mut cfg = load_config(scenario)?;
    if let Some(k) = samples {
        cfg.mppi.num_samples = k;
    }
    if no_noise {
        cfg.scenario.plant_noise = false;
    }
    let seed = seed.unwrap_or(cfg.mppi.seed);
    let sc = cfg.build_scenario()?;
    let refs = sc.reference_trajectory()?;
    let mut controller = build_controller(&cfg, kind, &refs, seed)?;

    let started = Instant::now();
    let log = run_closed_loop(&sc, controller.as_mut(), seed)?;
    let elapsed = started.elapsed();
    let metrics = compute_metrics(&log, &refs, METRIC_BAND, sc.t_event)?;
    let paths = emit_results(&log, &metrics, out)?;

    println!(
        "{} on {scenario}: {} steps in {:.2} s",
        controller.name(),
        sc.num_steps(),
        elapsed.as_secs_f64()
    );
    for (i, (ct, md)) in metrics
        .convergence_time
        .iter()
        .zip(&metrics.max_deviation_pct)
        .enumerate()
    {
        println!("  web {}: convergence {ct:.2} s, max deviation {md:.2}%", i + 1);
    }
    println!(
        "  average: convergence {:.3} s, max deviation {:.2}%",
        metrics.avg_convergence_time, metrics.avg_max_deviation_pct
    );
    for p in paths {
        println!("  wrote {}", p.display());
    }
    Ok(())
}

fn calibrate(scenario: &str, seed: u64, samples: Option<usize>, tolerance: f64) -> Result<()> {
    let mut cfg = load_config(scenario)?;
    if let Some(k) = samples {
        cfg.mppi.num_samples = k;
    }
    let sc = cfg.build_scenario()?;
    let mut cost_section = cfg.cost.clone();
    cost_section.variant = CostVariant::Quadratic;
    let cost = cost_section.build(cfg.line.n_sections)?;
    let report = calibrate_r_scale(&sc, &cost, &cfg.mppi, &cfg.lmpc, seed, tolerance)?;
    println!(
        "calibrated r_scale = {:.6} ({} bisection steps)",
        report.r_scale, report.iterations
    );
    println!(
        "  sampling-controller amplitude: {:.4} N·m, baseline: {:.4} N·m",
        report.target_amplitude, report.achieved_amplitude
    );
    Ok(())
}

/// Median wall time of one rollout batch (sample + propagate + update) at
/// the given problem size.
fn time_batch(n: usize, k: usize, repeats: usize) -> Result<f64> {
    use nalgebra::DVector;

    let params = default_line_params(n);
    let cfg = webline::mppi::MppiConfig {
        num_samples: k,
        horizon: 9,
        temperature: 1.0,
        exploration: 1.0,
        dt: 0.01,
        seed: 1,
        tail_init: webline::mppi::TailInit::EquilibriumFeedforward,
        initial_plan: webline::mppi::InitialPlan::EquilibriumFeedforward,
    };
    let cost = webline::cost::CostConfig::bryson(
        CostVariant::Quadratic,
        n,
        10.0,
        0.1,
        100.0,
        0.0,
        1.0,
        1.0,
    )?;
    let penalty = ControlPenalty::from_params(&params, 1.0)?;
    let refs = ReferenceTrajectory::constant(&params, DVector::from_element(n, 30.0), 0.01)?;
    let mut x = refs.state_ref(0);
    x.tensions[0] += 2.0;
    let plan = ControlPlan::feedforward(&refs, 0, cfg.horizon, &params)?;

    // warm up allocators and the thread pool
    mppi_step(&x, &plan, &refs, &params, &cost, &penalty, &cfg, 0)?;

    let mut times = Vec::with_capacity(repeats);
    for rep in 0..repeats {
        let t0 = Instant::now();
        let _ = mppi_step(&x, &plan, &refs, &params, &cost, &penalty, &cfg, rep)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    Ok(times[times.len() / 2])
}

fn bench_scaling(repeats: usize) -> Result<()> {
    if repeats == 0 {
        return Err(Error::config("repeats must be at least 1"));
    }
    println!("rollout batch wall time (median of {repeats}):");
    println!("  samples sweep at N = 6:");
    let mut prev: Option<f64> = None;
    for k in [1000, 2000, 4000] {
        let t = time_batch(6, k, repeats)?;
        let ratio = prev.map(|p| t / p);
        match ratio {
            Some(r) => println!("    K = {k:5}: {:8.3} ms  (x{r:.2} vs previous)", t * 1e3),
            None => println!("    K = {k:5}: {:8.3} ms", t * 1e3),
        }
        prev = Some(t);
    }
    println!("  line-size sweep at K = 1000:");
    prev = None;
    for n in [6, 12, 24] {
        let t = time_batch(n, 1000, repeats)?;
        let ratio = prev.map(|p| t / p);
        match ratio {
            Some(r) => println!("    N = {n:5}: {:8.3} ms  (x{r:.2} vs previous)", t * 1e3),
            None => println!("    N = {n:5}: {:8.3} ms", t * 1e3),
        }
        prev = Some(t);
    }
    Ok(())
}
