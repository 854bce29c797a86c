//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Trained models and LLC chains are cached under the cargo target tmpdir, keyed by the
//! hash of their configuration, so a rerun only recomputes what changed. Criteria can be
//! selected by number: `cargo test --test acceptance -- 4 6`. The full six-cell headline
//! check runs only with `PINN_LLC_FULL=1`; otherwise its reduced one-cell form runs.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use pinn_llc::autodiff::{bivariate, input_derivatives, Dual2, Scalar};
use pinn_llc::experiment::{
    config_hash, ensure_llc, ensure_trained, extrapolation_report_config, run_experiment_config,
    train_hash, ExperimentConfig, LlcCheckpoints, ProblemConfig, TrainGrid, TrainedRun,
    EVAL_POINTS, EVAL_SEED,
};
use pinn_llc::llc::{cross_validate_estimator, LlcConfig, LlcEstimate};
use pinn_llc::network::{
    hard_constrained_generic, hard_constrained_u, param_count, MlpArchitecture, ParamVector,
};
use pinn_llc::problem::{
    default_heat_problem, pinn_loss, pinn_loss_and_grad, residual_of, sample_inputs,
};
use pinn_llc::sampler::NutsConfig;
use pinn_llc::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn(&mut Context) -> Result<Outcome, String>;

const CRITERIA: [(u32, &str, Check); 10] = [
    (1, "constraint exactness", constraint_exactness),
    (2, "autodiff correctness", autodiff_correctness),
    (
        3,
        "forcing and exact solution consistency",
        forcing_consistency,
    ),
    (4, "training reproduction", training_reproduction),
    (5, "LLC estimator oracle", estimator_oracle),
    (6, "LLC headline", llc_headline),
    (7, "early-checkpoint diagnostic", early_checkpoint),
    (8, "sigma sensitivity", sigma_sensitivity),
    (9, "extrapolation", extrapolation),
    (10, "determinism", determinism),
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut ctx = Context::new();
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome =
            check(&mut ctx).unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} {id:>2} {name}: {} [{:.1}s]",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!outcome.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

/// Training cell of the headline reproduction: batch 32, learning rate 1e-4, 50,000 iterations.
fn headline_cell() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        learning_rate: 1e-4,
        iterations: 50_000,
        seed: 0,
        ..TrainConfig::default()
    }
}

/// LLC settings shared by the trained-model criteria: n = 256, γ = 1, β = 1/ln n and two
/// chains of 250 draws each. The tree depth is capped at 6 so one estimate takes minutes.
fn acceptance_llc(sigma: f64) -> LlcConfig {
    LlcConfig {
        n: 256,
        gamma: 1.0,
        sigma,
        chains: 2,
        sampler: NutsConfig {
            warmup_draws: 250,
            main_draws: 250,
            max_tree_depth: 6,
            ..NutsConfig::default()
        },
        points_seed: 0,
    }
}

struct Context {
    root: PathBuf,
    headline: Option<TrainedRun>,
    estimates: Vec<(usize, u64, LlcEstimate, f64)>,
}

impl Context {
    fn new() -> Self {
        Self {
            root: Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"),
            headline: None,
            estimates: Vec::new(),
        }
    }

    fn headline_run(&mut self) -> Result<&TrainedRun, String> {
        if self.headline.is_none() {
            let run = ensure_trained(
                &self.root.join("headline"),
                &ProblemConfig::default(),
                &MlpArchitecture::default_heat(),
                &headline_cell(),
            )
            .map_err(|e| e.to_string())?;
            self.headline = Some(run);
        }
        Ok(self.headline.as_ref().unwrap())
    }

    /// LLC estimate of the headline run at `iteration`, and the seconds it took to compute
    /// (recorded on first computation, so cached reruns still report it).
    fn estimate(&mut self, iteration: usize, sigma: f64) -> Result<(LlcEstimate, f64), String> {
        if let Some((_, _, e, secs)) = self
            .estimates
            .iter()
            .find(|(it, s, _, _)| *it == iteration && *s == sigma.to_bits())
        {
            return Ok((e.clone(), *secs));
        }
        let config = acceptance_llc(sigma);
        let root = self.root.join("headline");
        let run = self.headline_run()?;
        let ck = run
            .checkpoints
            .iter()
            .find(|c| c.iteration == iteration)
            .ok_or("missing checkpoint")?
            .clone();
        let problem = default_heat_problem();
        let points = config.points(&problem);
        let th = train_hash(&ProblemConfig::default(), &ck.arch, &headline_cell());
        let hash = config_hash(&th, &config, LlcCheckpoints::All);
        let dir = root.join(format!("llc_sigma_{sigma}"));
        let timing = dir.join(format!("seconds_{iteration}_{hash}.txt"));
        let start = Instant::now();
        let e =
            ensure_llc(&dir, &problem, &ck, &config, &points, &hash).map_err(|e| e.to_string())?;
        let secs = match fs::read_to_string(&timing)
            .ok()
            .and_then(|s| s.trim().parse().ok())
        {
            Some(s) => s,
            None => {
                let s = start.elapsed().as_secs_f64();
                fs::write(&timing, format!("{s}\n")).map_err(|e| e.to_string())?;
                s
            }
        };
        self.estimates
            .push((iteration, sigma.to_bits(), e.clone(), secs));
        Ok((e, secs))
    }
}

fn fmt_estimate(e: &LlcEstimate) -> String {
    format!("{:.3} [{:.3}, {:.3}]", e.lambda_hat, e.ci_low, e.ci_high)
}

fn constraint_exactness(_: &mut Context) -> Result<Outcome, String> {
    let problem = default_heat_problem();
    let arch = MlpArchitecture::default_heat();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let values = (0..param_count(&arch))
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let params = ParamVector::new(&arch, values).map_err(|e| e.to_string())?;
        let (x, t) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let u = |x, t| hard_constrained_u(&problem, &arch, &params, x, t).unwrap();
        worst = worst
            .max((u(x, 0.0) - (PI * x).sin()).abs())
            .max(u(0.0, t).abs())
            .max(u(2.0, t).abs());
    }
    Ok(Outcome::new(
        worst <= 1e-12,
        format!("max violation {worst:.2e} over 100 parameter vectors (≤ 1e-12)"),
    ))
}

fn autodiff_correctness(_: &mut Context) -> Result<Outcome, String> {
    let problem = default_heat_problem();
    let arch = MlpArchitecture::new(2, vec![8, 8], 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w: Vec<f64> = (0..param_count(&arch))
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let points = sample_inputs(&problem, 8, 2).points;
    let loss = |w: &[f64]| pinn_loss_and_grad(&problem, &arch, w, &points).unwrap().0;
    let (_, g) = pinn_loss_and_grad(&problem, &arch, &w, &points).map_err(|e| e.to_string())?;
    let mut worst_grad: f64 = 0.0;
    for i in 0..w.len() {
        let central = |h: f64| {
            let (mut a, mut b) = (w.clone(), w.clone());
            a[i] += h;
            b[i] -= h;
            (loss(&a) - loss(&b)) / (2.0 * h)
        };
        let fd = (4.0 * central(5e-4) - central(1e-3)) / 3.0;
        worst_grad = worst_grad.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()));
    }

    let params = ParamVector::new(&arch, w.clone()).map_err(|e| e.to_string())?;
    let h = 1e-2;
    let mut worst_xx: f64 = 0.0;
    for &(x, t) in &sample_inputs(&problem, 20, 3).points {
        let field = bivariate(|xd: Dual2<f64>, td| {
            hard_constrained_generic(&problem, &arch, &w, xd, td).unwrap()
        });
        let jet = input_derivatives(&field, x, t)
            .map_err(|e| e.to_string())?
            .d2u_dx2;
        let u = |x: f64| hard_constrained_u(&problem, &arch, &params, x, t).unwrap();
        let stencil = (-u(x + 2.0 * h) + 16.0 * u(x + h) - 30.0 * u(x) + 16.0 * u(x - h)
            - u(x - 2.0 * h))
            / (12.0 * h * h);
        worst_xx = worst_xx.max((jet - stencil).abs() / jet.abs());
    }
    Ok(Outcome::new(
        worst_grad < 1e-6 && worst_xx < 1e-5,
        format!("gradient vs central differences {worst_grad:.2e} (< 1e-6), ∂ₓₓ vs 5-point stencil {worst_xx:.2e} (< 1e-5)"),
    ))
}

fn forcing_consistency(_: &mut Context) -> Result<Outcome, String> {
    let problem = default_heat_problem();
    let exact = bivariate(|x: Dual2<f64>, t: Dual2<f64>| (-t).exp() * (x * PI).sin());
    let mut worst: f64 = 0.0;
    for &(x, t) in &sample_inputs(&problem, 1000, 4).points {
        worst = worst.max(
            residual_of(&problem, &exact, x, t)
                .map_err(|e| e.to_string())?
                .abs(),
        );
    }
    Ok(Outcome::new(
        worst <= 1e-10,
        format!("max residual of the exact solution {worst:.2e} at 1000 points (≤ 1e-10)"),
    ))
}

fn training_reproduction(ctx: &mut Context) -> Result<Outcome, String> {
    let problem = default_heat_problem();
    let run = ctx.headline_run()?;
    let params = &run.checkpoints.last().ok_or("no checkpoints")?.params;
    let eval = sample_inputs(&problem, EVAL_POINTS, EVAL_SEED);
    let loss = pinn_loss(&problem, &MlpArchitecture::default_heat(), params, &eval)
        .map_err(|e| e.to_string())?;
    let last = run.log.rows.last().ok_or("empty log")?;
    Ok(Outcome::new(
        (1e-6..=1e-4).contains(&loss),
        format!(
            "PINN loss {loss:.3e} on 4096 fresh points (in [1e-6, 1e-4]); test MSE {:.3e}",
            last.test_mse
        ),
    ))
}

fn estimator_oracle(_: &mut Context) -> Result<Outcome, String> {
    let rows = cross_validate_estimator(&LlcConfig::default()).map_err(|e| e.to_string())?;
    let detail = rows
        .iter()
        .map(|r| {
            let volume = r.volume.map_or(String::new(), |v| {
                format!(", volume {v:.3} vs {}", r.expected_volume)
            });
            format!(
                "{} λ̂ {:.4} vs {:.4} ({:.2} hw{volume})",
                r.name, r.mcmc.lambda_hat, r.expected, r.discrepancy
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Ok(Outcome::new(rows.iter().all(|r| r.agrees()), detail))
}

fn llc_headline(ctx: &mut Context) -> Result<Outcome, String> {
    if std::env::var("PINN_LLC_FULL").is_ok_and(|v| v == "1") {
        return llc_headline_full(ctx);
    }
    let training_secs = if ctx.headline.is_none() {
        let start = Instant::now();
        ctx.headline_run()?;
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    let (e, secs) = ctx.estimate(50_000, 1.0)?;
    let pass = (3.0..=20.0).contains(&e.lambda_hat) && training_secs + secs < 1800.0;
    Ok(Outcome::new(
        pass,
        format!(
            "reduced: 1 cell, 500 draws, λ̂ {} (in [3, 20]), {} divergences, sampled in {secs:.0}s (< 30 min); set PINN_LLC_FULL=1 for the six-cell check",
            fmt_estimate(&e),
            e.divergences
        ),
    ))
}

fn llc_headline_full(ctx: &mut Context) -> Result<Outcome, String> {
    let mut cfg = ExperimentConfig::new(ctx.root.join("paper_grid"));
    cfg.grid = TrainGrid::default();
    cfg.llc = acceptance_llc(1.0);
    cfg.llc_checkpoints = LlcCheckpoints::Final;
    let report = run_experiment_config(&cfg).map_err(|e| e.to_string())?;
    let finals: Vec<(String, f64)> = report.summary.cross_run.final_lambda_hat.clone();
    let in_band = finals
        .iter()
        .filter(|(_, l)| (5.0..=15.0).contains(l))
        .count();
    let c = &report.summary.cross_run;
    let (min, max) = (c.min.unwrap_or(f64::NAN), c.max.unwrap_or(f64::NAN));
    let pass = finals.len() == 6 && in_band >= 4 && max - min < min;
    let list = finals
        .iter()
        .map(|(id, l)| format!("{id} {l:.2}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Outcome::new(
        pass,
        format!(
            "full: {in_band}/6 in [5, 15] (need 4), spread {:.2} vs smallest {min:.2}; {list}",
            max - min
        ),
    ))
}

fn early_checkpoint(ctx: &mut Context) -> Result<Outcome, String> {
    let (first, _) = ctx.estimate(0, 1.0)?;
    let (last, _) = ctx.estimate(50_000, 1.0)?;
    let reported = first.negative_flag == (first.lambda_hat < 0.0);
    Ok(Outcome::new(
        first.lambda_hat < last.lambda_hat && reported,
        format!(
            "iteration 0 λ̂ {} (negative flag {}), final λ̂ {}",
            fmt_estimate(&first),
            first.negative_flag,
            fmt_estimate(&last)
        ),
    ))
}

fn sigma_sensitivity(ctx: &mut Context) -> Result<Outcome, String> {
    let (one, _) = ctx.estimate(50_000, 1.0)?;
    let (tenth, _) = ctx.estimate(50_000, 0.1)?;
    let rel = (tenth.lambda_hat - one.lambda_hat).abs()
        / tenth.lambda_hat.abs().max(one.lambda_hat.abs());
    let pass = tenth.lambda_hat >= one.lambda_hat - one.half_width() && rel <= 0.3;
    Ok(Outcome::new(
        pass,
        format!(
            "σ=0.1 λ̂ {}, σ=1 λ̂ {}, relative difference {:.1}% (≤ 30%)",
            fmt_estimate(&tenth),
            fmt_estimate(&one),
            100.0 * rel
        ),
    ))
}

fn extrapolation(ctx: &mut Context) -> Result<Outcome, String> {
    let cfg = ExperimentConfig::new(ctx.root.join("extrapolation_study"));
    let r = extrapolation_report_config(&cfg).map_err(|e| e.to_string())?;
    let mut pass = r.relative_difference >= 0.25;
    let mut parts = Vec::new();
    for s in &r.seeds {
        pass &= (1e-6..1e-4).contains(&s.eval_loss) && s.ratio() >= 10.0;
        parts.push(format!(
            "seed {}: loss {:.2e}, interior MSE {:.2e}, extrapolation MSE {:.2e} ({:.0}×)",
            s.seed,
            s.eval_loss,
            s.interior_mse,
            s.extrapolation_mse,
            s.ratio()
        ));
    }
    parts.push(format!(
        "relative difference {:.1}% (≥ 25%)",
        100.0 * r.relative_difference
    ));
    Ok(Outcome::new(pass, parts.join("; ")))
}

fn small_experiment(dir: PathBuf, workers: usize) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::new(dir);
    cfg.architecture = MlpArchitecture::space_time(&[16, 16]).map_err(|e| e.to_string())?;
    cfg.grid = TrainGrid {
        batch_sizes: vec![8, 16],
        learning_rates: vec![1e-3],
        seeds: vec![0, 1],
        iterations: 500,
        checkpoint_every: 250,
        ..TrainGrid::default()
    };
    cfg.llc.sampler = NutsConfig {
        warmup_draws: 50,
        main_draws: 50,
        max_tree_depth: 5,
        ..NutsConfig::default()
    };
    cfg.llc_checkpoints = LlcCheckpoints::Final;
    cfg.workers = workers;
    Ok(cfg)
}

fn determinism(ctx: &mut Context) -> Result<Outcome, String> {
    let base = ctx.root.join("determinism");
    let _ = fs::remove_dir_all(&base);
    // fresh runs with different worker counts, then a resumed rerun of the first
    let mut summaries = Vec::new();
    for (dir, workers) in [("a", 1), ("b", 2), ("a", 1)] {
        let report = run_experiment_config(&small_experiment(base.join(dir), workers)?)
            .map_err(|e| e.to_string())?;
        summaries.push(fs::read(report.summary_path()).map_err(|e| e.to_string())?);
    }
    let identical = summaries.windows(2).all(|w| w[0] == w[1]);
    Ok(Outcome::new(
        identical,
        format!(
            "4-run experiment: fresh rerun with another worker count and resumed rerun give {} summary.json ({} bytes)",
            if identical { "identical" } else { "DIFFERENT" },
            summaries[0].len()
        ),
    ))
}
