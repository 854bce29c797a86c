//! `pinn-llc`: train hard-constrained PINNs for the heat equation and estimate the local
//! learning coefficient of the result.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pinn_llc::experiment::{
    emit_plot_data, extrapolation_report_config, run_experiment_config, train_grid,
    ExperimentConfig, LlcCheckpoints, RunOutcome,
};
use pinn_llc::io::write_file;
use pinn_llc::llc::{
    cross_validate_estimator, cross_validation_table, estimate_llc_run, llc_table,
};
use pinn_llc::network::{BoundaryMask, Checkpoint, MlpArchitecture};
use pinn_llc::sampler::MassMatrix;

#[derive(Parser)]
#[command(
    name = "pinn-llc",
    version,
    about = "Hard-constrained PINN training and local learning coefficient estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every cell of the grid and write logs and checkpoints.
    Train(ConfigArgs),
    /// Estimate the LLC at one checkpoint.
    Llc {
        /// Checkpoint file written by `train` or `sweep`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the grid and estimate the LLC at its checkpoints; writes the summary and plot data.
    Sweep(ConfigArgs),
    /// Train two seeds and compare their errors beyond the training horizon.
    Extrapolate(ConfigArgs),
    /// Check the LLC estimator against toy losses with known coefficients.
    Validate(ConfigArgs),
    /// Print the resolved configuration as JSON.
    Config(ConfigArgs),
}

/// Every flag overrides the matching field of the configuration file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON experiment configuration. Without one, defaults are used.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    mask: Option<MaskArg>,
    /// Hidden-layer widths, e.g. `100,100,100`.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,

    #[arg(long, value_delimiter = ',')]
    batch_sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    learning_rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    test_grid: Option<usize>,

    /// Number of fixed residual points of the LLC likelihood.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    points_seed: Option<u64>,
    #[arg(long)]
    warmup_draws: Option<usize>,
    #[arg(long)]
    main_draws: Option<usize>,
    #[arg(long)]
    target_accept: Option<f64>,
    #[arg(long)]
    max_tree_depth: Option<u32>,
    #[arg(long, value_enum)]
    mass_matrix: Option<MassArg>,
    #[arg(long)]
    sampler_seed: Option<u64>,
    #[arg(long, value_enum)]
    llc_checkpoints: Option<WhichArg>,

    #[arg(long, value_delimiter = ',')]
    extrapolation_seeds: Option<Vec<u64>>,
    #[arg(long)]
    extrapolation_iterations: Option<usize>,
    #[arg(long)]
    horizon_multiplier: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nt: Option<usize>,

    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MaskArg {
    Normalized,
    Literal,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MassArg {
    Identity,
    AdaptedDiagonal,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum WhichArg {
    All,
    Final,
    None,
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

impl ConfigArgs {
    /// Loads the file (if any) and applies the flags. `output_dir` falls back to the
    /// current directory when neither the file nor the flags give one.
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::new("."),
        };
        set(&mut c.output_dir, self.output_dir);
        set(
            &mut c.problem.mask,
            self.mask.map(|m| match m {
                MaskArg::Normalized => BoundaryMask::Normalized,
                MaskArg::Literal => BoundaryMask::Literal,
            }),
        );
        if let Some(h) = self.hidden {
            c.architecture = MlpArchitecture::space_time(&h)?;
        }
        let g = &mut c.grid;
        set(&mut g.batch_sizes, self.batch_sizes);
        set(&mut g.learning_rates, self.learning_rates);
        set(&mut g.seeds, self.seeds);
        set(&mut g.iterations, self.iterations);
        set(&mut g.log_every, self.log_every);
        set(&mut g.checkpoint_every, self.checkpoint_every);
        set(&mut g.test_grid, self.test_grid);
        let l = &mut c.llc;
        set(&mut l.n, self.n);
        set(&mut l.gamma, self.gamma);
        set(&mut l.sigma, self.sigma);
        set(&mut l.chains, self.chains);
        set(&mut l.points_seed, self.points_seed);
        let s = &mut l.sampler;
        set(&mut s.warmup_draws, self.warmup_draws);
        set(&mut s.main_draws, self.main_draws);
        set(&mut s.target_accept, self.target_accept);
        set(&mut s.max_tree_depth, self.max_tree_depth);
        set(&mut s.seed, self.sampler_seed);
        set(
            &mut s.mass_matrix,
            self.mass_matrix.map(|m| match m {
                MassArg::Identity => MassMatrix::Identity,
                MassArg::AdaptedDiagonal => MassMatrix::AdaptedDiagonal,
            }),
        );
        set(
            &mut c.llc_checkpoints,
            self.llc_checkpoints.map(|w| match w {
                WhichArg::All => LlcCheckpoints::All,
                WhichArg::Final => LlcCheckpoints::Final,
                WhichArg::None => LlcCheckpoints::None,
            }),
        );
        let x = &mut c.extrapolation;
        set(&mut x.seeds, self.extrapolation_seeds);
        set(&mut x.iterations, self.extrapolation_iterations);
        set(&mut x.horizon_multiplier, self.horizon_multiplier);
        set(&mut x.nx, self.nx);
        set(&mut x.nt, self.nt);
        set(&mut c.workers, self.workers);
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns whether every run succeeded.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Train(args) => train(args.resolve()?),
        Command::Llc { checkpoint, config } => llc(&checkpoint, config.resolve()?),
        Command::Sweep(args) => sweep(args.resolve()?),
        Command::Extrapolate(args) => extrapolate(args.resolve()?),
        Command::Validate(args) => validate(args.resolve()?),
        Command::Config(args) => {
            println!("{}", args.resolve()?.to_json());
            Ok(true)
        }
    }
}

fn train(cfg: ExperimentConfig) -> Result<bool> {
    let mut ok = true;
    for cell in train_grid(&cfg)? {
        match cell.outcome {
            Ok(run) => {
                let last = run.log.rows.last().context("empty training log")?;
                println!(
                    "{}: train_loss {:.4e}, test_mse {:.4e}{} -> {}",
                    cell.run_id,
                    last.train_loss,
                    last.test_mse,
                    if run.resumed { " (resumed)" } else { "" },
                    cell.dir.display()
                );
            }
            Err(e) => {
                ok = false;
                eprintln!("{}: failed: {e}", cell.run_id);
            }
        }
    }
    Ok(ok)
}

fn llc(checkpoint: &Path, cfg: ExperimentConfig) -> Result<bool> {
    let ck = Checkpoint::read(checkpoint)?;
    let problem = cfg.problem.build();
    let run = estimate_llc_run(&problem, &ck.arch, &ck.params, &cfg.llc)?;
    let e = &run.estimate;
    let stem = format!("llc_iter_{}", ck.iteration);
    let llc_dir = cfg.output_dir.join("llc");
    for (c, draws) in run.chains.iter().enumerate() {
        draws
            .to_table()
            .write(&llc_dir.join(format!("{stem}_chain_{c}.csv")))?;
    }
    llc_table([(ck.iteration, e)])
        .with_meta("checkpoint", checkpoint.display().to_string())
        .write(&llc_dir.join(format!("{stem}.csv")))?;
    println!("{}", serde_json::to_string_pretty(e)?);
    eprintln!(
        "iteration {}: lambda_hat {:.4} [{:.4}, {:.4}], ess {:.1}, divergences {}{}",
        ck.iteration,
        e.lambda_hat,
        e.ci_low,
        e.ci_high,
        e.ess,
        e.divergences,
        if e.negative_flag { ", negative" } else { "" }
    );
    Ok(true)
}

fn sweep(cfg: ExperimentConfig) -> Result<bool> {
    let report = run_experiment_config(&cfg)?;
    for run in &report.runs {
        match run.outcome.record() {
            Some(r) => {
                let last = r.final_llc().map_or_else(
                    || "no final estimate".to_string(),
                    |e| {
                        format!(
                            "final lambda_hat {:.4} [{:.4}, {:.4}]",
                            e.lambda_hat, e.ci_low, e.ci_high
                        )
                    },
                );
                println!(
                    "{}: eval_loss {:.4e}, {last}{}",
                    r.run_id,
                    r.final_eval_loss,
                    if run.resumed { " (resumed)" } else { "" }
                );
                for f in &r.llc_failures {
                    eprintln!(
                        "{}: llc failed at iteration {}: {}",
                        r.run_id, f.iteration, f.error
                    );
                }
            }
            None => eprintln!(
                "{}: failed: {}",
                run.outcome.run_id(),
                failure_message(&run.outcome)
            ),
        }
    }
    let cross = &report.summary.cross_run;
    if let (Some(lo), Some(hi)) = (cross.min, cross.max) {
        println!(
            "final lambda_hat across runs: min {lo:.4}, max {hi:.4}, spread {:.4}",
            hi - lo
        );
    }
    let plots = emit_plot_data(&report)?;
    println!(
        "summary: {} ({} plot files)",
        report.summary_path().display(),
        plots.len()
    );
    let llc_failures = report
        .summary
        .runs
        .iter()
        .filter_map(|o| o.record())
        .any(|r| !r.llc_failures.is_empty());
    Ok(report.failed_runs() == 0 && !llc_failures)
}

fn failure_message(outcome: &RunOutcome) -> &str {
    match outcome {
        RunOutcome::Failed { error, .. } => error,
        RunOutcome::Completed(_) => "",
    }
}

fn extrapolate(cfg: ExperimentConfig) -> Result<bool> {
    let r = extrapolation_report_config(&cfg)?;
    for s in &r.seeds {
        println!(
            "seed {}: eval_loss {:.4e}, interior_mse {:.4e}, extrapolation_mse {:.4e}, ratio {:.1}",
            s.seed,
            s.eval_loss,
            s.interior_mse,
            s.extrapolation_mse,
            s.ratio()
        );
    }
    println!(
        "relative difference of extrapolation errors: {:.3}",
        r.relative_difference
    );
    Ok(true)
}

fn validate(cfg: ExperimentConfig) -> Result<bool> {
    let rows = cross_validate_estimator(&cfg.llc)?;
    let table = cross_validation_table(&rows);
    write_file(
        &cfg.output_dir.join("validation.csv"),
        table.render().as_bytes(),
    )?;
    let mut ok = true;
    for r in &rows {
        ok &= r.agrees();
        println!(
            "{:<14} lambda_hat {:.4} [{:.4}, {:.4}] expected {:.4} volume {} -> {}",
            r.name,
            r.mcmc.lambda_hat,
            r.mcmc.ci_low,
            r.mcmc.ci_high,
            r.expected,
            r.volume.map_or_else(
                || "-".to_string(),
                |v| format!("{v:.3} (expected {})", r.expected_volume)
            ),
            if r.agrees() { "ok" } else { "MISMATCH" }
        );
    }
    Ok(ok)
}
