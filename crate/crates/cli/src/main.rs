use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sparse_ec::config::Config;
use sparse_ec::em::{em_run, EmResult};
use sparse_ec::eval::{export_figure_data, run_table1, run_table3, BenchmarkReport};
use sparse_ec::hemodynamics::{build_basis, HemoBasis};
use sparse_ec::io::{read_basis, read_dataset, write_json, write_text, RowMatrix};
use sparse_ec::sim::{simulate_dataset, simulate_neuronal};
use sparse_ec::sparse::{estimate_alpha, run_reweighted, GammaWeights, IterationRecord};
use sparse_ec::Error;

#[derive(Parser)]
#[command(name = "sparse-ec", version, about = "Sparse effective connectivity from resting-state BOLD")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed: dataset seed, basis seed or benchmark base seed depending on the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; JSON results go to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte-Carlo replicates (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate neuronal and BOLD series from the configured ground truth.
    Simulate {
        /// Skip the hemodynamic model and write only the neuronal series.
        #[arg(long)]
        neuronal_only: bool,
        /// Standard deviation of white noise added to the BOLD series.
        #[arg(long)]
        obs_noise: Option<f64>,
    },
    /// Build the FIR hemodynamic basis from sampled Balloon responses.
    BuildBasis,
    /// Estimate A and σ (and α, λ² when y and a basis are given) from measured activity.
    EstimateMeasured {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        basis: Option<PathBuf>,
    },
    /// MAP-EM estimation from a BOLD series.
    EstimateBold {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Monte-Carlo benchmarks.
    Bench {
        #[command(subcommand)]
        table: BenchTable,
    },
    /// CSV of the mean response and eigenvalue spectrum of a basis.
    ExportFig {
        #[arg(long)]
        basis: PathBuf,
    },
}

#[derive(Subcommand)]
enum BenchTable {
    /// Measured neuronal activity, exact and linearized A steps.
    Table1 {
        #[arg(long)]
        runs: Option<usize>,
    },
    /// BOLD only, MAP-EM.
    Table3 {
        #[arg(long)]
        runs: Option<usize>,
        /// Basis file; built from the configuration when omitted.
        #[arg(long)]
        basis: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct MeasuredResult {
    a_hat: RowMatrix,
    sigma_hat: f64,
    alpha_hat: Option<Vec<f64>>,
    lambda2: Option<f64>,
    gamma: GammaWeights,
    converged: bool,
    stable: bool,
    iterations: usize,
    log: Vec<IterationRecord>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 4,
        Error::Domain(_)
        | Error::Integration { .. }
        | Error::Unstable(_)
        | Error::Numerical(_)
        | Error::Optimizer { .. } => 3,
    }
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), Error> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn load_config(g: &Global) -> Result<Config, Error> {
    match &g.config {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn basis_or_build(path: Option<&Path>, cfg: &Config, verbose: bool) -> Result<HemoBasis, Error> {
    match path {
        Some(p) => read_basis(p),
        None => {
            if verbose {
                eprintln!("building basis from {} sampled responses", cfg.hemodynamics.n_samples);
            }
            build_basis(&cfg.hemodynamics)
        }
    }
}

fn write_report(g: &Global, report: &BenchmarkReport) -> Result<(), Error> {
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = &g.out {
        write_json(p, report)?;
        write_text(&p.with_extension("txt"), &text)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let g = &cli.global;
    let mut cfg = load_config(g)?;
    let out = g.out.as_deref();
    match cli.command {
        Command::Simulate { neuronal_only, obs_noise } => {
            if let Some(s) = obs_noise {
                if s.is_nan() || s < 0.0 {
                    return Err(Error::Config("--obs-noise must be >= 0".into()));
                }
                cfg.simulation.obs_noise_std = s;
            }
            cfg.validate()?;
            let seed = g.seed.unwrap_or(0);
            if neuronal_only {
                let x = simulate_neuronal(&cfg.simulation.ground_truth()?, seed)?;
                #[derive(Serialize)]
                struct Neuronal {
                    x: RowMatrix,
                    seed: u64,
                    t_r: f64,
                }
                emit(out, &Neuronal { x: RowMatrix::from_matrix(&x), seed, t_r: cfg.simulation.t_r })
            } else {
                emit(out, &simulate_dataset(&cfg.simulation, &cfg.hemodynamics, seed)?)
            }
        }
        Command::BuildBasis => {
            if let Some(seed) = g.seed {
                cfg.hemodynamics.seed = seed;
            }
            cfg.validate()?;
            emit(out, &build_basis(&cfg.hemodynamics)?)
        }
        Command::EstimateMeasured { data, basis } => {
            let ds = read_dataset(&data)?;
            let x = ds
                .x
                .ok_or_else(|| Error::Config(format!("{} has no neuronal series `x`", data.display())))?;
            let mut opts = cfg.reweighted_options();
            if let Some(t_r) = ds.t_r {
                opts.t_r = t_r;
            }
            let res = run_reweighted(&x, &opts)?;
            if g.verbose {
                for r in &res.log {
                    eprintln!(
                        "iter {:>3}  sigma2 {:.5}  change {:.2e}  pruned {}",
                        r.iteration, r.sigma2, r.relative_change, r.pruned
                    );
                }
            }
            let alpha = match (basis, &ds.y) {
                (Some(b), Some(y)) => Some(estimate_alpha(&x, y, &read_basis(&b)?)?),
                _ => None,
            };
            emit(
                out,
                &MeasuredResult {
                    a_hat: RowMatrix::from_matrix(res.a_hat.matrix()),
                    sigma_hat: res.sigma_hat,
                    alpha_hat: alpha.as_ref().map(|a| a.alpha.clone()),
                    lambda2: alpha.as_ref().map(|a| a.lambda2),
                    gamma: res.gamma,
                    converged: res.converged,
                    stable: res.stable,
                    iterations: res.iterations,
                    log: res.log,
                },
            )
        }
        Command::EstimateBold { data, basis, max_iter, tol } => {
            if let Some(k) = max_iter {
                cfg.em.max_iter = k;
            }
            if let Some(t) = tol {
                cfg.em.tol = t;
            }
            cfg.validate()?;
            let ds = read_dataset(&data)?;
            let y = ds
                .y
                .ok_or_else(|| Error::Config(format!("{} has no BOLD series `y`", data.display())))?;
            let basis = read_basis(&basis)?;
            if let Some(t_r) = ds.t_r.filter(|t| (t - basis.t_r).abs() > 1e-12) {
                return Err(Error::Config(format!(
                    "dataset sampled at {t_r} s but basis built for {} s",
                    basis.t_r
                )));
            }
            let res: EmResult = em_run(&y, &basis, &cfg.em)?;
            if g.verbose {
                for r in &res.diagnostics.iterations {
                    eprintln!(
                        "iter {:>3}  surrogate {:.4} -> {:.4}  loglik {:.4}  change {:.2e}",
                        r.iteration, r.surrogate_before, r.surrogate_after, r.log_likelihood, r.relative_change
                    );
                }
            }
            emit(out, &res)
        }
        Command::Bench { table } => {
            if let Some(seed) = g.seed {
                cfg.benchmark.base_seed = seed;
            }
            match table {
                BenchTable::Table1 { runs } => {
                    let runs = runs.unwrap_or(cfg.benchmark.table1_runs);
                    write_report(g, &run_table1(&cfg, runs, g.jobs)?)
                }
                BenchTable::Table3 { runs, basis } => {
                    let runs = runs.unwrap_or(cfg.benchmark.table3_runs);
                    let basis = basis_or_build(basis.as_deref(), &cfg, g.verbose)?;
                    write_report(g, &run_table3(&cfg, &basis, runs, g.jobs)?)
                }
            }
        }
        Command::ExportFig { basis } => {
            let basis = read_basis(&basis)?;
            match out {
                Some(p) => export_figure_data(&basis, p),
                None => {
                    print!("{}", sparse_ec::eval::figure_csv(&basis)?);
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
