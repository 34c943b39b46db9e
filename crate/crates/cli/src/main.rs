use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use polyflow_core::assumptions::{validate_assumptions, SampleSpec};
use polyflow_core::closure::closure_compare;
use polyflow_core::config::load_config;
use polyflow_core::init::{random_state, truncate_degree};
use polyflow_core::io::{write_snapshot, CsvSink};
use polyflow_core::stepper::{simulate_with, Termination};
use polyflow_core::{Error, RunConfig, Scheme, StepConfig, TrajectoryRecord};

/// Exit statuses; documented in the README.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ok = 0,
    Usage = 2,
    Io = 3,
    PotentialRejected = 4,
    Numerical = 5,
    DiagnosticFailed = 6,
    NonContraction = 7,
}

struct Failure {
    status: Status,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config { .. } | Error::Parameter(_) | Error::Unsupported(_) => Status::Usage,
            Error::Io(_) | Error::Csv(_) | Error::Format(_) => Status::Io,
            Error::NonContraction { .. } => Status::NonContraction,
            _ => Status::Numerical,
        };
        Failure { status, message: e.to_string() }
    }
}

fn fail(status: Status, message: impl Into<String>) -> Failure {
    Failure { status, message: message.into() }
}

type CmdResult = std::result::Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "polyflow", version, about = "Compressible micro-macro polymeric flow near equilibrium")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Concurrent runs of a sweep.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the potential assumptions and print the report.
    ValidatePotential,
    /// Lowest eigenvalues of L and the weighted Poincare constant.
    Spectrum,
    /// Integrate and write the energy time series.
    Simulate {
        /// Write a snapshot every N steps.
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
    /// Run with Picard stepping and print every iteration trace.
    PicardDemo,
    /// Energy-law audit at dt, dt/2, ... and the measured order.
    AuditEnergy,
    /// Cancellation residuals over random mean-zero states.
    CancellationCheck,
    /// Kinetic against closed-moment stress over the run.
    ClosureCheck,
}

fn init_threads() {
    let Ok(v) = std::env::var("POLYFLOW_THREADS") else {
        info!("worker threads: {} (rayon default)", rayon::current_num_threads());
        return;
    };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            Ok(()) => info!("worker threads: {n} (POLYFLOW_THREADS)"),
            Err(e) => warn!("POLYFLOW_THREADS = {n} ignored: {e}"),
        },
        _ => warn!("POLYFLOW_THREADS = {v:?} is not a positive integer; using {}", rayon::current_num_threads()),
    }
}

fn load(cli: &Cli) -> std::result::Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| fail(Status::Usage, "--config <file> is required"))?;
    if !path.is_file() {
        return Err(fail(Status::Io, format!("cannot read {}", path.display())));
    }
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn validate_potential(cfg: &RunConfig) -> CmdResult {
    let pot = cfg.potential_for_validation()?;
    let report = validate_assumptions(&pot, &SampleSpec::default_for(&pot));
    println!("{report}");
    if let Some(path) = &cfg.output.report {
        std::fs::write(path, report.to_key_values()).map_err(Error::from)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(fail(Status::PotentialRejected, format!("{} fails the potential assumptions", report.potential)))
    }
}

fn spectrum(cfg: &RunConfig) -> CmdResult {
    let basis = cfg.build_basis()?;
    let pot = basis.potential();
    println!(
        "potential = {}, dim_q = {}, n_q = {}, basis size = {}, thermal scale = {}",
        pot.name(),
        basis.dim_q(),
        basis.n_q(),
        basis.len(),
        pot.scale()
    );
    for (k, ev) in basis.spectrum().iter().take(10).enumerate() {
        println!("lambda_{k:<2} = {ev:.12}");
    }
    println!("poincare constant = {:.12}", basis.poincare_constant()?);
    Ok(())
}

fn with_suffix(path: &Path, index: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{index}.{ext}"),
        None => format!("{stem}_{index}"),
    };
    path.with_file_name(name)
}

fn run_one(cfg: &RunConfig, csv: Option<PathBuf>, snapshots: Option<PathBuf>) -> std::result::Result<TrajectoryRecord, Failure> {
    let model = cfg.build_model()?;
    let s0 = cfg.initial_state(&model)?;
    let mut sink = match &csv {
        Some(p) => Some(CsvSink::create(p)?),
        None => None,
    };
    let every = cfg.output.snapshot_every;
    let rec = simulate_with(&model, &cfg.stepper, &s0, |step, s, r| {
        if let Some(sink) = sink.as_mut() {
            sink.write(r)?;
        }
        if let Some(prefix) = &snapshots {
            if every > 0 && step % every == 0 {
                let name = format!("{}_{step:06}.snap", prefix.display());
                write_snapshot(Path::new(&name), s, &model.grid, &model.basis)?;
            }
        }
        Ok(())
    })?;
    if let Some(sink) = sink {
        sink.finish()?;
    }
    Ok(rec)
}

fn summarize(label: &str, rec: &TrajectoryRecord) {
    let last = rec.reports.last().expect("initial report present");
    println!(
        "{label}t = {:.6}, steps = {}, E = {:.6e}, max E/E0 = {:.6}, int D dt = {:.6e}, int |r| dt = {:.3e}, max mass drift = {:.2e}",
        last.t,
        rec.reports.len() - 1,
        last.e,
        rec.max_energy_ratio,
        rec.dissipation_integral,
        rec.audit_integral,
        rec.max_mass_drift
    );
}

fn termination_status(rec: &TrajectoryRecord) -> CmdResult {
    match &rec.termination {
        Termination::Completed => Ok(()),
        Termination::Failed { step, t, reason, non_contraction } => Err(fail(
            if *non_contraction { Status::NonContraction } else { Status::Numerical },
            format!("step {step} at t = {t:.6} failed: {reason}"),
        )),
    }
}

fn simulate(cfg: &RunConfig, snapshot_every: Option<usize>, jobs: usize) -> CmdResult {
    let mut cfg = cfg.clone();
    if let Some(n) = snapshot_every {
        cfg.output.snapshot_every = n;
        if n > 0 && cfg.output.snapshot_prefix.is_none() {
            cfg.output.snapshot_prefix = Some(PathBuf::from("snapshot"));
        }
    }
    let runs = cfg.expand()?;
    let single = runs.len() == 1;
    let job = |(i, run): (usize, &RunConfig)| {
        let csv = run.output.csv.as_ref().map(|p| if single { p.clone() } else { with_suffix(p, i) });
        let snaps = run
            .output
            .snapshot_prefix
            .as_ref()
            .map(|p| if single { p.clone() } else { with_suffix(p, i) });
        run_one(run, csv, snaps)
    };
    let results: Vec<_> = if single {
        vec![job((0, &runs[0]))]
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| fail(Status::Usage, format!("cannot start {jobs} jobs: {e}")))?;
        info!("sweep of {} runs on {} jobs", runs.len(), jobs.max(1));
        pool.install(|| runs.par_iter().enumerate().map(job).collect())
    };
    let mut first_err = None;
    for (i, res) in results.into_iter().enumerate() {
        let label = if single {
            String::new()
        } else {
            let sw = cfg.sweep.as_ref().expect("sweep present");
            format!("[{} = {}] ", sw.key, sw.values[i])
        };
        let res = res.and_then(|rec| {
            summarize(&label, &rec);
            termination_status(&rec)
        });
        if let Err(f) = res {
            eprintln!("{label}{}", f.message);
            first_err.get_or_insert(f);
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn picard_demo(cfg: &RunConfig) -> CmdResult {
    let model = cfg.build_model()?;
    let s0 = cfg.initial_state(&model)?;
    let step_cfg = StepConfig { scheme: Scheme::Picard, ..cfg.stepper };
    let rec = polyflow_core::simulate(&model, &step_cfg, &s0)?;
    for (k, tr) in rec.picard.iter().enumerate() {
        let ratios: Vec<String> = tr.ratios.iter().map(|r| format!("{r:.6}")).collect();
        println!(
            "step {:>4}: iterations {:>3}, converged {}, gmres {:>5}, ratios [{}]",
            k + 1,
            tr.iterations,
            tr.converged,
            tr.gmres_iterations,
            ratios.join(", ")
        );
        let diffs: Vec<String> = tr.differences.iter().map(|d| format!("{d:.3e}")).collect();
        println!("            differences [{}]", diffs.join(", "));
    }
    summarize("", &rec);
    termination_status(&rec)
}

fn audit_energy(cfg: &RunConfig) -> CmdResult {
    let model = cfg.build_model()?;
    let s0 = cfg.initial_state(&model)?;
    let order = cfg.stepper.scheme.order();
    let mut prev: Option<f64> = None;
    let mut last_ratio = None;
    for level in 0..=cfg.diagnostics.refinements {
        let dt = cfg.stepper.dt / 2f64.powi(level as i32);
        let step_cfg = StepConfig { dt, audit: true, ..cfg.stepper };
        let start = Instant::now();
        let rec = polyflow_core::simulate(&model, &step_cfg, &s0)?;
        termination_status(&rec)?;
        let a = rec.audit_integral;
        match prev {
            Some(p) => {
                let ratio = p / a;
                println!(
                    "dt = {dt:.6e}: int |r| dt = {a:.6e}, ratio {ratio:.4}, measured order {:.3} ({:.2}s)",
                    ratio.log2(),
                    start.elapsed().as_secs_f64()
                );
                last_ratio = Some(ratio);
            }
            None => println!("dt = {dt:.6e}: int |r| dt = {a:.6e} ({:.2}s)", start.elapsed().as_secs_f64()),
        }
        prev = Some(a);
    }
    let expected = 2f64.powi(order as i32);
    let ratio = last_ratio.expect("at least one refinement");
    println!("scheme order {order}, expected ratio {expected}");
    if (ratio - expected).abs() <= 0.15 * expected {
        Ok(())
    } else {
        Err(fail(
            Status::DiagnosticFailed,
            format!("measured ratio {ratio:.3} is not within 15% of {expected}"),
        ))
    }
}

fn cancellation_check(cfg: &RunConfig) -> CmdResult {
    let model = cfg.build_model()?;
    let d = &cfg.diagnostics;
    let amp = if cfg.initial_data.amplitude > 0.0 { cfg.initial_data.amplitude } else { 0.1 };
    println!("{:>6} {:>5} {:>14} {:>14} {:>12} {:>10}", "sample", "order", "T1", "T2", "residual", "max|m|");
    let mut worst = 0.0f64;
    for i in 0..d.samples {
        let s = random_state(&model.grid, &model.basis, amp, cfg.seed.wrapping_add(i as u64), true);
        for order in 0..=d.max_order {
            let c = model.cancellation_residual(&s, order)?;
            println!(
                "{i:>6} {order:>5} {:>14.6e} {:>14.6e} {:>12.3e} {:>10.2e}{}",
                c.t1,
                c.t2,
                c.residual,
                c.m_max,
                if c.degenerate { " degenerate" } else { "" }
            );
            worst = worst.max(c.residual.abs());
        }
    }
    println!("max |residual| = {worst:.3e} (threshold {:.1e})", d.cancellation_tol);
    if worst <= d.cancellation_tol {
        Ok(())
    } else {
        Err(fail(Status::DiagnosticFailed, format!("cancellation residual {worst:.3e} above threshold")))
    }
}

fn closure_check(cfg: &RunConfig) -> CmdResult {
    let model = cfg.build_model()?;
    let mut s0 = cfg.initial_state(&model)?;
    truncate_degree(&mut s0, &model.basis, 2);
    let order = match cfg.stepper.scheme {
        Scheme::Imex => 1,
        Scheme::Imex2 => 2,
        Scheme::Picard => return Err(fail(Status::Usage, "closure-check compares IMEX runs; set scheme to imex or imex2")),
    };
    let rep = closure_compare(&model, &s0, cfg.stepper.dt, cfg.stepper.t_end, order)?;
    for (t, d) in rep.times.iter().zip(&rep.deviations) {
        println!("t = {t:.6}  deviation = {d:.3e}");
    }
    println!("max deviation = {:.3e} (threshold {:.1e})", rep.max_deviation, cfg.diagnostics.closure_tol);
    if rep.max_deviation <= cfg.diagnostics.closure_tol {
        Ok(())
    } else {
        Err(fail(Status::DiagnosticFailed, "closure deviation above threshold"))
    }
}

fn dispatch(cli: &Cli) -> CmdResult {
    let cfg = load(cli)?;
    match &cli.command {
        Command::ValidatePotential => validate_potential(&cfg),
        Command::Spectrum => spectrum(&cfg),
        Command::Simulate { snapshot_every } => simulate(&cfg, *snapshot_every, cli.jobs),
        Command::PicardDemo => picard_demo(&cfg),
        Command::AuditEnergy => audit_energy(&cfg),
        Command::CancellationCheck => cancellation_check(&cfg),
        Command::ClosureCheck => closure_check(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    init_threads();
    match dispatch(&cli) {
        Ok(()) => ExitCode::from(Status::Ok as u8),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.status as u8)
        }
    }
}
