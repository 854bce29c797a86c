//! Local learning coefficient estimation.
//!
//! `λ̂(w*) = nβ (E[L_n(w)] − L_n(w*))`, where the expectation is under the tempered
//! posterior localized at `w*` and is estimated from NUTS chains started at `w*`. The volume
//! oracle is independent of sampling. It reads λ off the scaling `V(ε) ∝ ε^λ` of the set
//! where the loss is within `ε` of its value at `w*`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Cell, CsvTable};
use crate::network::{jet, Checkpoint, MlpArchitecture, ParamVector};
use crate::problem::{sample_inputs, HeatIbvp, ResidualModel, ResidualPointSet};
use crate::sampler::{
    inverse_temperature, nuts_sample, ChainDraws, EmpiricalLoss, NutsConfig, TemperedPosterior,
};
use crate::stats::{effective_sample_size, least_squares_slope, mean, variance};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlcConfig {
    /// Number of fixed residual points.
    pub n: usize,
    pub gamma: f64,
    pub sigma: f64,
    pub chains: usize,
    pub sampler: NutsConfig,
    pub points_seed: u64,
}

impl Default for LlcConfig {
    fn default() -> Self {
        Self {
            n: 256,
            gamma: 1.0,
            sigma: 1.0,
            chains: 2,
            sampler: NutsConfig::default(),
            points_seed: 0,
        }
    }
}

impl LlcConfig {
    pub fn validate(&self) -> Result<()> {
        inverse_temperature(self.n)?;
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        ResidualModel::new(self.sigma)?;
        if self.chains == 0 {
            return Err(Error::InvalidConfig("chains must be at least 1".into()));
        }
        self.sampler.validate()
    }

    pub fn beta(&self) -> f64 {
        1.0 / (self.n as f64).ln()
    }

    /// The fixed residual points every estimate under this configuration uses.
    pub fn points(&self, problem: &HeatIbvp) -> ResidualPointSet {
        sample_inputs(problem, self.n, self.points_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlcEstimate {
    pub lambda_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub per_chain_means: Vec<f64>,
    /// Summed over chains.
    pub ess: f64,
    pub divergences: usize,
    pub negative_flag: bool,
    /// `L_n(w*)`.
    pub anchor_loss: f64,
    /// Pooled mean of sampled `L_n`.
    pub mean_loss: f64,
}

impl LlcEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    /// Per-chain `λ̂` values, from each chain's own mean loss.
    pub fn per_chain_lambdas(&self, n_beta: f64) -> Vec<f64> {
        self.per_chain_means
            .iter()
            .map(|m| n_beta * (m - self.anchor_loss))
            .collect()
    }
}

/// An estimate together with the chains it came from.
#[derive(Debug, Clone)]
pub struct LlcRun {
    pub estimate: LlcEstimate,
    pub chains: Vec<ChainDraws>,
}

/// `L_n(w) = (1/n) Σ −log N(rᵢ(w); 0, σ²)` over a fixed residual point set.
pub struct PinnNll<'a> {
    problem: &'a HeatIbvp,
    arch: &'a MlpArchitecture,
    model: ResidualModel,
    points: &'a ResidualPointSet,
}

impl<'a> PinnNll<'a> {
    pub fn new(
        problem: &'a HeatIbvp,
        arch: &'a MlpArchitecture,
        model: ResidualModel,
        points: &'a ResidualPointSet,
    ) -> Self {
        Self {
            problem,
            arch,
            model,
            points,
        }
    }
}

impl EmpiricalLoss for PinnNll<'_> {
    fn dim(&self) -> usize {
        crate::network::param_count(self.arch)
    }

    fn sample_size(&self) -> usize {
        self.points.len()
    }

    fn loss_and_grad(&self, w: &[f64], grad: &mut [f64]) -> Result<f64> {
        let pinn = jet::mean_squared_residual(
            self.problem,
            self.arch,
            w,
            &self.points.points,
            Some(grad),
        )?;
        let scale = self.model.loss_scale();
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok(self.model.nll_from_pinn_loss(pinn))
    }
}

/// `nβ (E[L_n] − L_n(w*))` expressed through PINN losses: `(nβ/2σ²)(E[L^PINN] − L^PINN(w*))`.
pub fn lambda_from_pinn_losses(
    n_beta: f64,
    model: &ResidualModel,
    mean_pinn: f64,
    anchor_pinn: f64,
) -> f64 {
    n_beta * model.loss_scale() * (mean_pinn - anchor_pinn)
}

/// Pools chains into an estimate. The CI uses the standard error of the pooled mean, with
/// each chain's variance divided by its own effective sample size.
pub fn summarize_chains(chains: &[ChainDraws], anchor_loss: f64, n_beta: f64) -> LlcEstimate {
    let per_chain_means: Vec<f64> = chains.iter().map(|c| mean(&c.observables)).collect();
    let all: Vec<f64> = chains
        .iter()
        .flat_map(|c| c.observables.iter().copied())
        .collect();
    let mean_loss = mean(&all);
    let k = chains.len() as f64;
    let mut var_of_mean = 0.0;
    let mut ess = 0.0;
    for c in chains {
        let e = effective_sample_size(&c.observables);
        ess += e;
        var_of_mean += variance(&c.observables) / e;
    }
    let se = var_of_mean.sqrt() / k;
    let lambda_hat = n_beta * (mean_loss - anchor_loss);
    let half = Z95 * n_beta * se;
    LlcEstimate {
        lambda_hat,
        ci_low: lambda_hat - half,
        ci_high: lambda_hat + half,
        per_chain_means,
        ess,
        divergences: chains.iter().map(ChainDraws::divergences).sum(),
        negative_flag: lambda_hat < 0.0,
        anchor_loss,
        mean_loss,
    }
}

/// Estimates the LLC of any empirical loss at `w_star`. The chains run in parallel, each
/// starting exactly at `w_star`.
pub fn sample_llc<L: EmpiricalLoss + ?Sized>(
    loss: &L,
    w_star: &[f64],
    beta: f64,
    gamma: f64,
    chains: usize,
    sampler: &NutsConfig,
) -> Result<LlcRun> {
    let posterior = TemperedPosterior::new(loss, w_star, beta, gamma)?;
    let draws = (0..chains as u64)
        .into_par_iter()
        .map(|c| nuts_sample(&posterior, w_star, sampler, c))
        .collect::<Result<Vec<_>>>()?;
    let estimate = summarize_chains(&draws, posterior.anchor_loss(), posterior.n_beta());
    Ok(LlcRun {
        estimate,
        chains: draws,
    })
}

/// Estimates the LLC of the residual likelihood at `w_star`, keeping the chains.
pub fn estimate_llc_run(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    w_star: &ParamVector,
    config: &LlcConfig,
) -> Result<LlcRun> {
    let points = config.points(problem);
    estimate_llc_with_points(problem, arch, w_star, config, &points)
}

/// Estimates the LLC of the residual likelihood at `w_star`.
pub fn estimate_llc(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    w_star: &ParamVector,
    config: &LlcConfig,
) -> Result<LlcEstimate> {
    estimate_llc_run(problem, arch, w_star, config).map(|r| r.estimate)
}

/// Estimates the LLC at `w_star` on a caller-supplied residual point set.
pub fn estimate_llc_with_points(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    w_star: &ParamVector,
    config: &LlcConfig,
    points: &ResidualPointSet,
) -> Result<LlcRun> {
    config.validate()?;
    let loss = PinnNll::new(problem, arch, ResidualModel::new(config.sigma)?, points);
    sample_llc(
        &loss,
        w_star.as_slice(),
        config.beta(),
        config.gamma,
        config.chains,
        &config.sampler,
    )
}

/// One checkpoint's result in a sweep; a failure is kept as its message.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub iteration: usize,
    pub outcome: std::result::Result<LlcRun, String>,
}

impl SweepEntry {
    pub fn estimate(&self) -> Option<&LlcEstimate> {
        self.outcome.as_ref().ok().map(|r| &r.estimate)
    }
}

/// Estimates the LLC at every checkpoint on one shared point set. Failures are recorded
/// and the sweep continues.
pub fn llc_sweep(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    checkpoints: &[Checkpoint],
    config: &LlcConfig,
) -> Result<Vec<SweepEntry>> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidConfig(
            "llc sweep needs at least one checkpoint".into(),
        ));
    }
    config.validate()?;
    let points = config.points(problem);
    Ok(checkpoints
        .iter()
        .map(|c| SweepEntry {
            iteration: c.iteration,
            outcome: estimate_llc_with_points(problem, arch, &c.params, config, &points)
                .map_err(|e| e.to_string()),
        })
        .collect())
}

/// LLC results, one row per successful entry: `iteration,lambda_hat,ci_low,ci_high,ess,divergences,negative_flag`.
pub fn llc_table<'a, I: IntoIterator<Item = (usize, &'a LlcEstimate)>>(rows: I) -> CsvTable {
    let mut t = CsvTable::new(&[
        "iteration",
        "lambda_hat",
        "ci_low",
        "ci_high",
        "ess",
        "divergences",
        "negative_flag",
    ]);
    for (it, e) in rows {
        t.push([
            Cell::from(it),
            e.lambda_hat.into(),
            e.ci_low.into(),
            e.ci_high.into(),
            e.ess.into(),
            Cell::from(e.divergences),
            e.negative_flag.into(),
        ]);
    }
    t
}

/// Low-dimensional losses with known learning coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyLoss {
    /// `½ Σ hᵢ wᵢ²`.
    Quadratic { curvatures: Vec<f64> },
    /// `w₁² w₂²`.
    ProductSquare,
    /// Zero everywhere.
    Constant { dim: usize },
}

impl ToyLoss {
    pub fn dim(&self) -> usize {
        match self {
            ToyLoss::Quadratic { curvatures } => curvatures.len(),
            ToyLoss::ProductSquare => 2,
            ToyLoss::Constant { dim } => *dim,
        }
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        match self {
            ToyLoss::Quadratic { curvatures } => {
                0.5 * curvatures
                    .iter()
                    .zip(w)
                    .map(|(h, x)| h * x * x)
                    .sum::<f64>()
            }
            ToyLoss::ProductSquare => w[0] * w[0] * w[1] * w[1],
            ToyLoss::Constant { .. } => 0.0,
        }
    }

    fn value_and_grad(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            ToyLoss::Quadratic { curvatures } => {
                for ((g, h), x) in grad.iter_mut().zip(curvatures).zip(w) {
                    *g = h * x;
                }
            }
            ToyLoss::ProductSquare => {
                grad[0] = 2.0 * w[0] * w[1] * w[1];
                grad[1] = 2.0 * w[1] * w[0] * w[0];
            }
            ToyLoss::Constant { .. } => grad.fill(0.0),
        }
        self.value(w)
    }

    /// Exact `E[nβ(L − L(0))]` under the tempered posterior at `w* = 0`, where it has a
    /// closed form. For a quadratic this is `Σ nβhᵢ / (2(nβhᵢ + γ))`.
    pub fn closed_form_llc(&self, n_beta: f64, gamma: f64) -> Option<f64> {
        match self {
            ToyLoss::Quadratic { curvatures } => Some(
                curvatures
                    .iter()
                    .map(|h| n_beta * h / (2.0 * (n_beta * h + gamma)))
                    .sum(),
            ),
            ToyLoss::Constant { .. } => Some(0.0),
            ToyLoss::ProductSquare => None,
        }
    }
}

/// A toy loss presented as the average loss over `n` notional observations.
pub struct SyntheticLoss {
    pub toy: ToyLoss,
    pub n: usize,
}

impl EmpiricalLoss for SyntheticLoss {
    fn dim(&self) -> usize {
        self.toy.dim()
    }

    fn sample_size(&self) -> usize {
        self.n
    }

    fn loss_and_grad(&self, w: &[f64], grad: &mut [f64]) -> Result<f64> {
        Ok(self.toy.value_and_grad(w, grad))
    }
}

/// Monte Carlo volumes `V(ε)` of `{w ∈ B(w*, radius) : loss(w) − loss(w*) < ε}`, reported as
/// fractions of the ball, one per `ε`.
pub fn volume_fractions<F: Fn(&[f64]) -> f64>(
    loss_fn: F,
    w_star: &[f64],
    epsilons: &[f64],
    mc_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let d = w_star.len();
    if d == 0 || d > 4 {
        return Err(Error::InvalidConfig(format!(
            "volume oracle supports 1 to 4 dimensions, got {d}"
        )));
    }
    if epsilons.is_empty()
        || epsilons.iter().any(|e| !(*e > 0.0))
        || epsilons.windows(2).any(|p| p[1] >= p[0])
    {
        return Err(Error::InvalidConfig(
            "epsilons must be positive and strictly decreasing".into(),
        ));
    }
    if mc_samples == 0 || !(radius > 0.0) {
        return Err(Error::InvalidConfig(
            "need mc_samples ≥ 1 and a positive radius".into(),
        ));
    }
    let base = loss_fn(w_star);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; epsilons.len()];
    let mut w = vec![0.0; d];
    let mut dir = vec![0.0; d];
    for _ in 0..mc_samples {
        // uniform in the ball: isotropic direction, radius ∝ U^{1/d}
        let mut norm = 0.0_f64;
        for v in dir.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
            norm += *v * *v;
        }
        let r = radius * rng.random::<f64>().powf(1.0 / d as f64) / norm.sqrt();
        for ((wi, si), di) in w.iter_mut().zip(w_star).zip(&dir) {
            *wi = si + r * di;
        }
        let delta = loss_fn(&w) - base;
        // epsilons decrease, so hits form a prefix
        for (c, e) in counts.iter_mut().zip(epsilons) {
            if delta < *e {
                *c += 1;
            } else {
                break;
            }
        }
    }
    if let Some((_, &epsilon)) = counts.iter().zip(epsilons).find(|(c, _)| **c == 0) {
        return Err(Error::ResolutionFailure { epsilon });
    }
    Ok(counts
        .iter()
        .map(|&c| c as f64 / mc_samples as f64)
        .collect())
}

/// Least-squares slope of `log V(ε)` against `log ε`.
pub fn volume_scaling_lambda<F: Fn(&[f64]) -> f64>(
    loss_fn: F,
    w_star: &[f64],
    epsilons: &[f64],
    mc_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    let v = volume_fractions(loss_fn, w_star, epsilons, mc_samples, radius, seed)?;
    let lx: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = v.iter().map(|v| v.ln()).collect();
    Ok(least_squares_slope(&lx, &ly))
}

/// `count` values log-spaced from `hi` down to `lo`.
pub fn log_spaced(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    let (a, b) = (hi.ln(), lo.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1).max(1) as f64).exp())
        .collect()
}

/// One toy loss estimated by sampling and by volume scaling.
#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub name: &'static str,
    pub gamma: f64,
    pub mcmc: LlcEstimate,
    /// Closed-form value of what the sampler estimates, at this `γ`.
    pub expected: f64,
    /// Volume-scaling exponent, for losses of dimension at most four.
    pub volume: Option<f64>,
    /// What the volume exponent should be: half the number of curved directions.
    pub expected_volume: f64,
    /// `|λ̂ − expected|` in CI half-widths. Zero when both are exactly equal.
    pub discrepancy: f64,
}

impl CrossValidation {
    /// The sampler lies within three CI half-widths of the closed form, and the volume
    /// exponent (when computed) within 0.05 of its expected value.
    pub fn agrees(&self) -> bool {
        self.discrepancy <= 3.0
            && self
                .volume
                .is_none_or(|v| (v - self.expected_volume).abs() <= 0.05)
    }
}

/// Runs the toy validation suite: 1-d quadratic `w²`, 2-d quadratic `w₁² + w₂²` near
/// `γ = 0`, a 10-d quadratic with curvatures spread over five decades, and a constant loss.
/// The volume-scaling check runs for the first three.
pub fn cross_validate_estimator(config: &LlcConfig) -> Result<Vec<CrossValidation>> {
    config.validate()?;
    // ε ranges keep at least ~1000 of 10⁶ ball samples under the smallest threshold
    let cases = [
        (
            "quadratic_1d",
            ToyLoss::Quadratic {
                curvatures: vec![2.0],
            },
            config.gamma,
            log_spaced(1e-2, 1e-6, 5),
        ),
        (
            "quadratic_2d",
            ToyLoss::Quadratic {
                curvatures: vec![2.0, 2.0],
            },
            1e-6,
            log_spaced(1e-1, 1e-3, 5),
        ),
        (
            "quadratic_10d",
            ToyLoss::Quadratic {
                curvatures: log_spaced(300.0, 3e-3, 10),
            },
            config.gamma,
            Vec::new(),
        ),
        (
            "constant",
            ToyLoss::Constant { dim: 1 },
            config.gamma,
            log_spaced(1e-2, 1e-6, 5),
        ),
    ];
    let mut out = Vec::new();
    for (i, (name, toy, gamma, epsilons)) in cases.into_iter().enumerate() {
        let w_star = vec![0.0; toy.dim()];
        let loss = SyntheticLoss {
            toy: toy.clone(),
            n: config.n,
        };
        let run = sample_llc(
            &loss,
            &w_star,
            config.beta(),
            gamma,
            config.chains,
            &config.sampler,
        )?;
        let expected = toy
            .closed_form_llc(config.n as f64 * config.beta(), gamma)
            .expect("suite uses closed-form losses");
        let volume = if epsilons.is_empty() {
            None
        } else {
            Some(volume_scaling_lambda(
                |w| toy.value(w),
                &w_star,
                &epsilons,
                1_000_000,
                1.0,
                config.points_seed + i as u64,
            )?)
        };
        let expected_volume = match &toy {
            ToyLoss::Quadratic { curvatures } => curvatures.len() as f64 / 2.0,
            _ => 0.0,
        };
        let est = run.estimate;
        let diff = (est.lambda_hat - expected).abs();
        let discrepancy = if diff == 0.0 {
            0.0
        } else {
            diff / est.half_width()
        };
        out.push(CrossValidation {
            name,
            gamma,
            mcmc: est,
            expected,
            volume,
            expected_volume,
            discrepancy,
        });
    }
    Ok(out)
}

pub fn cross_validation_table(rows: &[CrossValidation]) -> CsvTable {
    let mut t = CsvTable::new(&[
        "loss",
        "gamma",
        "lambda_hat",
        "ci_low",
        "ci_high",
        "expected",
        "volume_lambda",
        "expected_volume",
        "discrepancy_half_widths",
    ]);
    for r in rows {
        t.push([
            Cell::from(r.name),
            r.gamma.into(),
            r.mcmc.lambda_hat.into(),
            r.mcmc.ci_low.into(),
            r.mcmc.ci_high.into(),
            r.expected.into(),
            r.volume.map_or(Cell::from(""), Cell::from),
            r.expected_volume.into(),
            r.discrepancy.into(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;
    use crate::problem::{default_heat_problem, nll, pinn_loss};

    fn quick_sampler(seed: u64) -> NutsConfig {
        NutsConfig {
            warmup_draws: 500,
            main_draws: 2000,
            seed,
            ..NutsConfig::default()
        }
    }

    #[test]
    fn constant_loss_has_zero_llc() {
        let loss = SyntheticLoss {
            toy: ToyLoss::Constant { dim: 3 },
            n: 256,
        };
        let run = sample_llc(
            &loss,
            &[0.0; 3],
            1.0 / 256f64.ln(),
            1.0,
            2,
            &quick_sampler(1),
        )
        .unwrap();
        let e = run.estimate;
        assert_eq!(e.lambda_hat, 0.0);
        assert!(e.ci_low <= 0.0 && 0.0 <= e.ci_high);
        assert!(!e.negative_flag);
    }

    #[test]
    fn diagonal_quadratic_matches_closed_form() {
        let toy = ToyLoss::Quadratic {
            curvatures: vec![0.05, 0.3, 1.0, 4.0, 20.0],
        };
        let n = 256;
        let beta = 1.0 / (n as f64).ln();
        let loss = SyntheticLoss {
            toy: toy.clone(),
            n,
        };
        let e = sample_llc(&loss, &[0.0; 5], beta, 1.0, 2, &quick_sampler(2))
            .unwrap()
            .estimate;
        let expected = toy.closed_form_llc(n as f64 * beta, 1.0).unwrap();
        assert!(
            (e.lambda_hat - expected).abs() < 3.0 * e.half_width(),
            "{} vs {expected} ± {}",
            e.lambda_hat,
            e.half_width()
        );
        assert!(e.ci_low <= e.lambda_hat && e.lambda_hat <= e.ci_high);
    }

    #[test]
    fn volume_oracle_on_quadratics() {
        let eps = log_spaced(1e-2, 1e-6, 5);
        let one = volume_scaling_lambda(|w| w[0] * w[0], &[0.0], &eps, 1_000_000, 1.0, 1).unwrap();
        assert!((one - 0.5).abs() < 0.05, "{one}");
        // V(ε) = ε here, so the range stops where hits are still plentiful
        let eps2 = log_spaced(1e-1, 1e-3, 5);
        let two = volume_scaling_lambda(
            |w| w[0] * w[0] + w[1] * w[1],
            &[0.0, 0.0],
            &eps2,
            1_000_000,
            1.0,
            2,
        )
        .unwrap();
        assert!((two - 1.0).abs() < 0.05, "{two}");
    }

    #[test]
    fn volume_oracle_on_a_product_of_squares() {
        let eps = log_spaced(1e-6, 1e-10, 5);
        let l = volume_scaling_lambda(
            |w| w[0] * w[0] * w[1] * w[1],
            &[0.0, 0.0],
            &eps,
            2_000_000,
            1.0,
            3,
        )
        .unwrap();
        assert!((l - 0.5).abs() < 0.1, "{l}");
    }

    #[test]
    fn volume_is_monotone_in_epsilon() {
        let eps = log_spaced(1.0, 1e-4, 9);
        let v = volume_fractions(
            |w| (w[0] - 0.2).powi(2) * (1.0 + w[1].abs()) + w[2].powi(4),
            &[0.2, 0.0, 0.0],
            &eps,
            200_000,
            1.0,
            4,
        )
        .unwrap();
        assert!(v.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn volume_oracle_reports_resolution_failure() {
        let eps = [1e-2, 1e-30];
        let err = volume_scaling_lambda(|w| w[0] * w[0], &[0.0], &eps, 1000, 1.0, 5).unwrap_err();
        assert!(matches!(err, Error::ResolutionFailure { epsilon } if epsilon == 1e-30));
        assert!(volume_scaling_lambda(|w| w[0], &[0.0; 5], &eps, 10, 1.0, 0).is_err());
        assert!(volume_scaling_lambda(|w| w[0], &[0.0], &[1e-3, 1e-2], 10, 1.0, 0).is_err());
    }

    #[test]
    fn constant_loss_has_flat_volume() {
        let eps = log_spaced(1e-2, 1e-6, 5);
        assert_eq!(
            volume_scaling_lambda(|_| 0.0, &[0.0], &eps, 1000, 1.0, 0).unwrap(),
            0.0
        );
    }

    #[test]
    fn scale_identity_between_nll_and_pinn_loss() {
        let problem = default_heat_problem();
        let arch = MlpArchitecture::space_time(&[6, 6]).unwrap();
        let points = sample_inputs(&problem, 64, 9);
        let n_beta = 64.0 / 64f64.ln();
        for sigma in [0.1, 1.0, 3.0] {
            let model = ResidualModel::new(sigma).unwrap();
            let (a, b) = (init_params(&arch, 1), init_params(&arch, 2));
            let via_nll = n_beta
                * (nll(&problem, &arch, &b, &points, &model).unwrap()
                    - nll(&problem, &arch, &a, &points, &model).unwrap());
            let pa = pinn_loss(&problem, &arch, &a, &points).unwrap();
            let pb = pinn_loss(&problem, &arch, &b, &points).unwrap();
            let via_pinn = lambda_from_pinn_losses(n_beta, &model, pb, pa);
            assert!(
                (via_nll - via_pinn).abs() <= 1e-10 * via_pinn.abs(),
                "{via_nll} vs {via_pinn}"
            );
        }
    }

    #[test]
    fn pinn_nll_gradient_is_scaled_loss_gradient() {
        let problem = default_heat_problem();
        let arch = MlpArchitecture::space_time(&[4]).unwrap();
        let points = sample_inputs(&problem, 16, 3);
        let model = ResidualModel::new(0.5).unwrap();
        let w = init_params(&arch, 4);
        let nll_loss = PinnNll::new(&problem, &arch, model, &points);
        let mut g = vec![0.0; w.len()];
        let v = nll_loss.loss_and_grad(w.as_slice(), &mut g).unwrap();
        let (p, pg) =
            crate::problem::pinn_loss_and_grad(&problem, &arch, w.as_slice(), &points.points)
                .unwrap();
        assert!((v - model.nll_from_pinn_loss(p)).abs() < 1e-15);
        for (a, b) in g.iter().zip(&pg) {
            assert!((a - 2.0 * b).abs() < 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn sweep_matches_direct_estimate_and_records_failures() {
        let problem = default_heat_problem();
        let arch = MlpArchitecture::space_time(&[4]).unwrap();
        let cfg = LlcConfig {
            n: 32,
            chains: 2,
            sampler: NutsConfig {
                warmup_draws: 50,
                main_draws: 30,
                ..NutsConfig::default()
            },
            ..LlcConfig::default()
        };
        let w = init_params(&arch, 0);
        let ck = Checkpoint {
            arch: arch.clone(),
            seed: 0,
            iteration: 7,
            params: w.clone(),
            config_hash: None,
        };
        let sweep = llc_sweep(&problem, &arch, std::slice::from_ref(&ck), &cfg).unwrap();
        let direct = estimate_llc(&problem, &arch, &w, &cfg).unwrap();
        assert_eq!(sweep[0].iteration, 7);
        assert_eq!(sweep[0].estimate().unwrap(), &direct);

        let wrong = Checkpoint {
            params: ParamVector::from_values(vec![0.0; 3]).unwrap(),
            ..ck.clone()
        };
        let sweep = llc_sweep(&problem, &arch, &[wrong, ck], &cfg).unwrap();
        assert!(sweep[0].outcome.is_err());
        assert!(sweep[1].outcome.is_ok());
        assert!(llc_sweep(&problem, &arch, &[], &cfg).is_err());
    }

    #[test]
    fn table_columns() {
        let e = LlcEstimate {
            lambda_hat: -1.0,
            ci_low: -2.0,
            ci_high: 0.0,
            per_chain_means: vec![],
            ess: 10.0,
            divergences: 3,
            negative_flag: true,
            anchor_loss: 0.0,
            mean_loss: 0.0,
        };
        let text = llc_table([(0, &e)]).render();
        assert!(text.starts_with(
            "iteration,lambda_hat,ci_low,ci_high,ess,divergences,negative_flag\n0,-1.0"
        ));
        assert!(text.trim_end().ends_with(",3,true"));
    }
}
