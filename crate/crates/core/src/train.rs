//! Adam on the residual loss with a fresh batch of residual points every iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Cell, CsvTable, ParsedTable};
use crate::network::{init_params, Checkpoint, MlpArchitecture, ParamVector};
use crate::problem::{draw_points, pinn_loss_and_grad, test_mse, HeatIbvp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub adam: AdamHyper,
    /// Test grid resolution per axis.
    #[serde(default = "default_grid")]
    pub test_grid: usize,
}

fn default_log_every() -> usize {
    100
}
fn default_checkpoint_every() -> usize {
    10_000
}
fn default_grid() -> usize {
    51
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-4,
            iterations: 50_000,
            seed: 0,
            log_every: default_log_every(),
            checkpoint_every: default_checkpoint_every(),
            adam: AdamHyper::default(),
            test_grid: default_grid(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.log_every == 0 || self.checkpoint_every == 0 {
            return bad("log_every and checkpoint_every must be at least 1");
        }
        if self.test_grid < 2 {
            return bad("test_grid must be at least 2");
        }
        Ok(())
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != grad.len() || state.v.len() != grad.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: grad.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "non-finite gradient component {i}"
        )));
    }
    state.step += 1;
    let AdamHyper { beta1, beta2, eps } = *hyper;
    let c1 = 1.0 - beta1.powf(state.step as f64);
    let c2 = 1.0 - beta2.powf(state.step as f64);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub test_mse: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["iteration", "train_loss", "test_mse"]);
        for r in &self.rows {
            t.push([
                Cell::from(r.iteration),
                r.train_loss.into(),
                r.test_mse.into(),
            ]);
        }
        t
    }

    pub fn from_table(table: &ParsedTable, origin: &std::path::Path) -> Result<Self> {
        let it = table.parse_column::<usize>("iteration", origin)?;
        let train = table.parse_column::<f64>("train_loss", origin)?;
        let test = table.parse_column::<f64>("test_mse", origin)?;
        let rows = it
            .into_iter()
            .zip(train)
            .zip(test)
            .map(|((iteration, train_loss), test_mse)| LogRow {
                iteration,
                train_loss,
                test_mse,
            })
            .collect();
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: ParamVector,
    pub log: TrainLog,
    /// Iteration 0, every `checkpoint_every` iterations, and the final state.
    pub checkpoints: Vec<Checkpoint>,
}

/// Iterations at which [`train`] checkpoints: 0, every `checkpoint_every`, and the last.
pub fn checkpoint_iterations(config: &TrainConfig) -> Vec<usize> {
    let mut its: Vec<usize> = (0..=config.iterations)
        .step_by(config.checkpoint_every.max(1))
        .collect();
    if its.last() != Some(&config.iterations) {
        its.push(config.iterations);
    }
    its
}

/// Batch stream for one iteration: independent of every other iteration, so a run can be
/// resumed without replaying earlier draws.
pub fn batch_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba7c_0000_0000);
    rng.set_stream(iteration as u64);
    rng
}

/// Trains from the seeded initialization.
pub fn train(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(problem, arch, config, |_| {})
}

/// Like [`train`], calling `on_log` with every logged row as it is produced.
pub fn train_with<F: FnMut(&LogRow)>(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    config: &TrainConfig,
    mut on_log: F,
) -> Result<TrainOutcome> {
    config.validate()?;
    problem.validate()?;
    let mut params = init_params(arch, config.seed);
    let mut state = AdamState::new(params.len());
    let mut log = TrainLog::default();
    let mut checkpoints = Vec::new();
    let snapshot = |params: &ParamVector, iteration: usize| Checkpoint {
        arch: arch.clone(),
        seed: config.seed,
        iteration,
        params: params.clone(),
        config_hash: None,
    };
    let fail = |iteration: usize, e: Error| Error::TrainingFailure {
        iteration,
        reason: e.to_string(),
    };

    // Row k describes the parameters after k updates, scored on batch k.
    for it in 0..=config.iterations {
        let batch = draw_points(problem, config.batch_size, &mut batch_rng(config.seed, it));
        let (loss, grad) = pinn_loss_and_grad(problem, arch, params.as_slice(), &batch)
            .map_err(|e| fail(it, e))?;
        if it % config.log_every == 0 || it == config.iterations {
            let mse = test_mse(problem, arch, &params, config.test_grid, config.test_grid)
                .map_err(|e| fail(it, e))?;
            let row = LogRow {
                iteration: it,
                train_loss: loss,
                test_mse: mse,
            };
            on_log(&row);
            log.rows.push(row);
        }
        if it % config.checkpoint_every == 0 || it == config.iterations {
            checkpoints.push(snapshot(&params, it));
        }
        if it == config.iterations {
            break;
        }
        adam_step(
            params.as_mut_slice(),
            &grad,
            &mut state,
            config.learning_rate,
            &config.adam,
        )
        .map_err(|e| fail(it, e))?;
        if let Some(i) = params.as_slice().iter().position(|p| !p.is_finite()) {
            return Err(fail(it, Error::NonFiniteParameter { index: i }));
        }
    }
    Ok(TrainOutcome {
        final_params: params,
        log,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::default_heat_problem;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, &AdamHyper::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_algebra() {
        let h = AdamHyper::default();
        let g = [0.3, -4.0, 1e-3];
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &g, &mut s, 0.01, &h).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = -0.01 * gi / (gi.abs() + h.eps);
            assert!((pi - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let h = AdamHyper::default();
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let lr = 1e-3;
        let mut last = 0.0;
        for _ in 0..1000 {
            let before = p[0];
            adam_step(&mut p, &[2.5], &mut s, lr, &h).unwrap();
            last = before - p[0];
        }
        assert!((last - lr).abs() < 0.01 * lr);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        assert!(adam_step(&mut p, &[f64::NAN], &mut s, 0.1, &AdamHyper::default()).is_err());
    }

    #[test]
    fn invalid_configs() {
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.adam.beta2 = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn batches_differ_across_iterations() {
        let p = default_heat_problem();
        let a = draw_points(&p, 8, &mut batch_rng(3, 0));
        let b = draw_points(&p, 8, &mut batch_rng(3, 1));
        let a2 = draw_points(&p, 8, &mut batch_rng(3, 0));
        assert_eq!(a, a2);
        assert!(a.iter().zip(&b).all(|(u, v)| u != v));
    }

    #[test]
    fn short_run_is_deterministic_and_checkpointed() {
        let p = default_heat_problem();
        let arch = MlpArchitecture::space_time(&[8, 8]).unwrap();
        let cfg = TrainConfig {
            iterations: 25,
            log_every: 10,
            checkpoint_every: 10,
            batch_size: 8,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let a = train(&p, &arch, &cfg).unwrap();
        let b = train(&p, &arch, &cfg).unwrap();
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.log, b.log);
        let parsed =
            ParsedTable::parse(&a.log.to_table().render(), std::path::Path::new("log")).unwrap();
        assert_eq!(
            TrainLog::from_table(&parsed, std::path::Path::new("log")).unwrap(),
            a.log
        );
        let iters: Vec<usize> = a.log.rows.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![0, 10, 20, 25]);
        let ck: Vec<usize> = a.checkpoints.iter().map(|c| c.iteration).collect();
        assert_eq!(ck, vec![0, 10, 20, 25]);
        assert_eq!(checkpoint_iterations(&cfg), ck);
        assert_eq!(a.checkpoints.last().unwrap().params, a.final_params);
        // resuming from a checkpoint with zero further iterations reproduces its test error
        let c10 = &a.checkpoints[1];
        let back = Checkpoint::from_bytes(&c10.to_bytes(), std::path::Path::new("mem")).unwrap();
        let mse = test_mse(&p, &arch, &back.params, 51, 51).unwrap();
        assert_eq!(mse.to_bits(), a.log.rows[1].test_mse.to_bits());
    }
}
