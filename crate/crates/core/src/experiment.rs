//! End-to-end experiments: grids of training runs with LLC sweeps, and the extrapolation
//! study. Both are driven by a versioned JSON configuration.
//!
//! Every artifact records the hash of the configuration it came from, so a rerun skips
//! any stage whose outputs are already present with a matching hash. Hashes are split by
//! stage. `train_hash` covers the problem, the architecture and one training cell.
//! `config_hash` adds the LLC settings. A change to the sampler therefore reuses the
//! trained checkpoints.
//!
//! ```text
//! <output_dir>/
//!   config.json                      resolved configuration
//!   summary.json, summary.csv        deterministic cross-run results
//!   timing.csv                       wall-clock per run (not deterministic)
//!   llc_points.csv                   the fixed residual points of every LLC estimate
//!   runs/<run_id>/
//!     train_log.csv                  iteration,train_loss,test_mse
//!     checkpoints/ckpt_<it>.bin
//!     chains/iter_<it>_chain_<c>.csv per-draw sampler output
//!     llc.csv                        iteration,lambda_hat,ci_low,ci_high,ess,divergences,negative_flag
//!     llc_failures.csv               only when some checkpoint failed
//!     run.json                       completed-run record
//!   plots/                           written by emit_plot_data
//!   extrapolation/                   written by extrapolation_report
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{write_file, Cell, CsvTable, ParsedTable};
use crate::llc::{
    estimate_llc_with_points, llc_table, summarize_chains, LlcConfig, LlcEstimate, LlcRun, PinnNll,
};
use crate::network::{jet, BoundaryMask, Checkpoint, MlpArchitecture};
use crate::problem::{
    default_heat_problem, pinn_loss, sample_inputs, uniform_grid, HeatIbvp, ResidualModel,
    ResidualPointSet,
};
use crate::sampler::{ChainDraws, EmpiricalLoss};
use crate::stats::mean;
use crate::train::{checkpoint_iterations, train, AdamHyper, TrainConfig, TrainLog};

pub const SCHEMA_VERSION: u32 = 1;

/// Size and seed of the held-out point set used for final PINN losses.
pub const EVAL_POINTS: usize = 4096;
pub const EVAL_SEED: u64 = 0xe7a1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub mask: BoundaryMask,
}

impl ProblemConfig {
    pub fn build(&self) -> HeatIbvp {
        default_heat_problem().with_mask(self.mask)
    }
}

/// Training cells: every combination of batch size, learning rate and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainGrid {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub adam: AdamHyper,
    #[serde(default = "default_test_grid")]
    pub test_grid: usize,
}

fn default_log_every() -> usize {
    TrainConfig::default().log_every
}
fn default_checkpoint_every() -> usize {
    TrainConfig::default().checkpoint_every
}
fn default_test_grid() -> usize {
    TrainConfig::default().test_grid
}
fn default_workers() -> usize {
    1
}

impl Default for TrainGrid {
    fn default() -> Self {
        Self {
            batch_sizes: vec![8, 16, 32],
            learning_rates: vec![1e-3, 1e-4],
            seeds: vec![0],
            iterations: 50_000,
            log_every: default_log_every(),
            checkpoint_every: default_checkpoint_every(),
            adam: AdamHyper::default(),
            test_grid: default_test_grid(),
        }
    }
}

impl TrainGrid {
    /// Cells in batch-major, then learning-rate, then seed order.
    pub fn cells(&self) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &batch_size in &self.batch_sizes {
            for &learning_rate in &self.learning_rates {
                for &seed in &self.seeds {
                    out.push(self.cell(batch_size, learning_rate, seed));
                }
            }
        }
        out
    }

    pub fn cell(&self, batch_size: usize, learning_rate: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size,
            learning_rate,
            iterations: self.iterations,
            seed,
            log_every: self.log_every,
            checkpoint_every: self.checkpoint_every,
            adam: self.adam,
            test_grid: self.test_grid,
        }
    }
}

/// Which checkpoints of each run get an LLC estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlcCheckpoints {
    #[default]
    All,
    Final,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtrapolationConfig {
    /// Exactly two initialization seeds.
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    /// The error grid covers `t ∈ [0, horizon_multiplier · T]`.
    pub horizon_multiplier: f64,
    pub nx: usize,
    pub nt: usize,
}

impl Default for ExtrapolationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1],
            batch_size: 32,
            learning_rate: 1e-4,
            iterations: 100_000,
            horizon_multiplier: 2.0,
            nx: 101,
            nt: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Relative paths are resolved against the configuration file's directory.
    pub output_dir: PathBuf,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default = "MlpArchitecture::default_heat")]
    pub architecture: MlpArchitecture,
    #[serde(default)]
    pub grid: TrainGrid,
    #[serde(default)]
    pub llc: LlcConfig,
    #[serde(default)]
    pub llc_checkpoints: LlcCheckpoints,
    #[serde(default)]
    pub extrapolation: ExtrapolationConfig,
    /// Grid cells run concurrently up to this many at a time.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn invalid(field: &str, message: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{field}: {message}"))
}

impl ExperimentConfig {
    /// The full six-cell grid with default settings, writing to `output_dir`.
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            output_dir: output_dir.into(),
            problem: ProblemConfig::default(),
            architecture: MlpArchitecture::default_heat(),
            grid: TrainGrid::default(),
            llc: LlcConfig::default(),
            llc_checkpoints: LlcCheckpoints::default(),
            extrapolation: ExtrapolationConfig::default(),
            workers: 1,
        }
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::ConfigParse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text, path)?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!(
                    "unsupported version {}, expected {SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }
        let g = &self.grid;
        for (name, empty) in [
            ("grid.batch_sizes", g.batch_sizes.is_empty()),
            ("grid.learning_rates", g.learning_rates.is_empty()),
            ("grid.seeds", g.seeds.is_empty()),
        ] {
            if empty {
                return Err(invalid(name, "must not be empty"));
            }
        }
        let cells = g.cells();
        for c in &cells {
            c.validate().map_err(|e| invalid("grid", e))?;
        }
        let mut ids: Vec<String> = cells.iter().map(run_id).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid("grid", format!("duplicate cell {}", w[0])));
        }
        self.llc.validate().map_err(|e| invalid("llc", e))?;
        if self.workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        let x = &self.extrapolation;
        if x.seeds.len() != 2 || x.seeds[0] == x.seeds[1] {
            return Err(invalid(
                "extrapolation.seeds",
                "need exactly two distinct seeds",
            ));
        }
        if !(x.horizon_multiplier > 1.0) {
            return Err(invalid(
                "extrapolation.horizon_multiplier",
                "must exceed 1 to leave an extrapolation window",
            ));
        }
        if x.nx < 2 || x.nt < 3 {
            return Err(invalid("extrapolation", "need nx ≥ 2 and nt ≥ 3"));
        }
        self.extrapolation_train_config(x.seeds[0])
            .validate()
            .map_err(|e| invalid("extrapolation", e))?;
        Ok(())
    }

    pub fn extrapolation_train_config(&self, seed: u64) -> TrainConfig {
        let x = &self.extrapolation;
        TrainConfig {
            iterations: x.iterations,
            checkpoint_every: x.iterations.max(1),
            ..self.grid.cell(x.batch_size, x.learning_rate, seed)
        }
    }

    /// Hash of everything that determines the results, excluding where they are written
    /// and how many workers compute them.
    pub fn experiment_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = 1;
        sha256_hex(c.to_json().as_bytes())
    }

    /// Directory holding every artifact of one grid cell.
    pub fn run_dir(&self, cell: &TrainConfig) -> PathBuf {
        self.output_dir.join("runs").join(run_id(cell))
    }

    fn worker_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| invalid("workers", e))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `bs<batch>_lr<lr>_seed<seed>`, e.g. `bs32_lr1e-4_seed0`.
pub fn run_id(cell: &TrainConfig) -> String {
    format!(
        "bs{}_lr{:e}_seed{}",
        cell.batch_size, cell.learning_rate, cell.seed
    )
}

/// Hash of everything a training run depends on.
pub fn train_hash(problem: &ProblemConfig, arch: &MlpArchitecture, cell: &TrainConfig) -> String {
    #[derive(Serialize)]
    struct Hashed<'a> {
        schema_version: u32,
        problem: &'a ProblemConfig,
        architecture: &'a MlpArchitecture,
        train: &'a TrainConfig,
    }
    sha256_hex(
        &serde_json::to_vec(&Hashed {
            schema_version: SCHEMA_VERSION,
            problem,
            architecture: arch,
            train: cell,
        })
        .expect("serializes"),
    )
}

/// Hash of a training run together with the LLC settings applied to it.
pub fn config_hash(train_hash: &str, llc: &LlcConfig, which: LlcCheckpoints) -> String {
    #[derive(Serialize)]
    struct Hashed<'a> {
        train_hash: &'a str,
        llc: &'a LlcConfig,
        llc_checkpoints: LlcCheckpoints,
    }
    sha256_hex(
        &serde_json::to_vec(&Hashed {
            train_hash,
            llc,
            llc_checkpoints: which,
        })
        .expect("serializes"),
    )
}

/// A finished training run, on disk and in memory.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub log: TrainLog,
    pub checkpoints: Vec<Checkpoint>,
    /// True when the artifacts were found on disk rather than computed.
    pub resumed: bool,
}

/// Trains one cell into `dir`, or loads it if `dir` already holds a run with the same hash.
/// The log is written last and marks the run as complete.
pub fn ensure_trained(
    dir: &Path,
    problem: &ProblemConfig,
    arch: &MlpArchitecture,
    cell: &TrainConfig,
) -> Result<TrainedRun> {
    let hash = train_hash(problem, arch, cell);
    if let Some(run) = load_trained(dir, cell, &hash) {
        return Ok(run);
    }
    let out = train(&problem.build(), arch, cell)?;
    let mut checkpoints = out.checkpoints;
    for c in &mut checkpoints {
        c.config_hash = Some(hash.clone());
        c.write(
            &dir.join("checkpoints")
                .join(Checkpoint::file_name(c.iteration)),
        )?;
    }
    out.log
        .to_table()
        .with_meta("train_hash", hash)
        .write(&dir.join("train_log.csv"))?;
    Ok(TrainedRun {
        log: out.log,
        checkpoints,
        resumed: false,
    })
}

fn load_trained(dir: &Path, cell: &TrainConfig, hash: &str) -> Option<TrainedRun> {
    let path = dir.join("train_log.csv");
    let table = ParsedTable::read(&path).ok()?;
    if table.meta("train_hash") != Some(hash) {
        return None;
    }
    let log = TrainLog::from_table(&table, &path).ok()?;
    let mut checkpoints = Vec::new();
    for it in checkpoint_iterations(cell) {
        let c = Checkpoint::read(&dir.join("checkpoints").join(Checkpoint::file_name(it))).ok()?;
        if c.config_hash.as_deref() != Some(hash) || c.iteration != it {
            return None;
        }
        checkpoints.push(c);
    }
    Some(TrainedRun {
        log,
        checkpoints,
        resumed: true,
    })
}

fn chain_path(dir: &Path, iteration: usize, chain: usize) -> PathBuf {
    dir.join("chains")
        .join(format!("iter_{iteration}_chain_{chain}.csv"))
}

/// Estimates the LLC at one checkpoint and stores every chain under `dir/chains`. If chains
/// with the same hash are already there, the estimate is recomputed from them.
pub fn ensure_llc(
    dir: &Path,
    problem: &HeatIbvp,
    checkpoint: &Checkpoint,
    config: &LlcConfig,
    points: &ResidualPointSet,
    hash: &str,
) -> Result<LlcEstimate> {
    if let Some(e) = load_llc(dir, problem, checkpoint, config, points, hash) {
        return Ok(e);
    }
    let LlcRun { estimate, chains } = estimate_llc_with_points(
        problem,
        &checkpoint.arch,
        &checkpoint.params,
        config,
        points,
    )?;
    for (c, draws) in chains.iter().enumerate() {
        draws
            .to_table()
            .with_meta("config_hash", hash)
            .write(&chain_path(dir, checkpoint.iteration, c))?;
    }
    Ok(estimate)
}

fn load_llc(
    dir: &Path,
    problem: &HeatIbvp,
    ck: &Checkpoint,
    config: &LlcConfig,
    points: &ResidualPointSet,
    hash: &str,
) -> Option<LlcEstimate> {
    let mut chains = Vec::new();
    for c in 0..config.chains {
        let path = chain_path(dir, ck.iteration, c);
        let table = ParsedTable::read(&path).ok()?;
        if table.meta("config_hash") != Some(hash) {
            return None;
        }
        let draws = ChainDraws::from_table(&table, &path).ok()?;
        if draws.len() != config.sampler.main_draws {
            return None;
        }
        chains.push(draws);
    }
    let loss = PinnNll::new(
        problem,
        &ck.arch,
        ResidualModel::new(config.sigma).ok()?,
        points,
    );
    let mut grad = vec![0.0; ck.params.len()];
    let anchor = loss.loss_and_grad(ck.params.as_slice(), &mut grad).ok()?;
    Some(summarize_chains(
        &chains,
        anchor,
        points.len() as f64 * config.beta(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlcRow {
    pub iteration: usize,
    pub estimate: LlcEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlcFailure {
    pub iteration: usize,
    pub error: String,
}

/// Deterministic results of one completed grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub iterations: usize,
    pub train_hash: String,
    pub config_hash: String,
    /// Batch loss at the last logged iteration.
    pub final_train_loss: f64,
    pub final_test_mse: f64,
    /// PINN loss of the final parameters on the held-out evaluation set.
    pub final_eval_loss: f64,
    pub llc: Vec<LlcRow>,
    pub llc_failures: Vec<LlcFailure>,
}

impl RunRecord {
    /// The estimate at the final iteration, if it was computed.
    pub fn final_llc(&self) -> Option<&LlcEstimate> {
        self.llc
            .iter()
            .find(|r| r.iteration == self.iterations)
            .map(|r| &r.estimate)
    }

    pub fn llc_at(&self, iteration: usize) -> Option<&LlcEstimate> {
        self.llc
            .iter()
            .find(|r| r.iteration == iteration)
            .map(|r| &r.estimate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed(RunRecord),
    Failed { run_id: String, error: String },
}

impl RunOutcome {
    pub fn run_id(&self) -> &str {
        match self {
            RunOutcome::Completed(r) => &r.run_id,
            RunOutcome::Failed { run_id, .. } => run_id,
        }
    }

    pub fn record(&self) -> Option<&RunRecord> {
        match self {
            RunOutcome::Completed(r) => Some(r),
            RunOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub dir: PathBuf,
    pub wall_clock_secs: f64,
    /// True when the completed record was found on disk.
    pub resumed: bool,
}

/// Spread of the final LLC estimates across completed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRunSummary {
    pub final_lambda_hat: Vec<(String, f64)>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub spread: Option<f64>,
    pub mean: Option<f64>,
}

impl CrossRunSummary {
    fn new(runs: &[RunOutcome]) -> Self {
        let final_lambda_hat: Vec<(String, f64)> = runs
            .iter()
            .filter_map(|o| o.record())
            .filter_map(|r| r.final_llc().map(|e| (r.run_id.clone(), e.lambda_hat)))
            .collect();
        let values: Vec<f64> = final_lambda_hat.iter().map(|(_, v)| *v).collect();
        let min = values.iter().copied().reduce(f64::min);
        let max = values.iter().copied().reduce(f64::max);
        Self {
            final_lambda_hat,
            min,
            max,
            spread: min.zip(max).map(|(a, b)| b - a),
            mean: (!values.is_empty()).then(|| mean(&values)),
        }
    }
}

/// The bit-reproducible content of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub experiment_hash: String,
    pub runs: Vec<RunOutcome>,
    pub cross_run: CrossRunSummary,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub summary: Summary,
    pub runs: Vec<RunReport>,
}

impl ExperimentReport {
    pub fn failed_runs(&self) -> usize {
        self.runs
            .iter()
            .filter(|r| r.outcome.record().is_none())
            .count()
    }

    pub fn summary_path(&self) -> PathBuf {
        self.output_dir.join("summary.json")
    }
}

/// One grid cell of [`train_grid`].
#[derive(Debug)]
pub struct TrainedCell {
    pub run_id: String,
    pub dir: PathBuf,
    pub outcome: Result<TrainedRun>,
}

/// Trains every grid cell without estimating any LLC. The runs land where
/// [`run_experiment_config`] looks for them, so a later sweep reuses them.
pub fn train_grid(cfg: &ExperimentConfig) -> Result<Vec<TrainedCell>> {
    cfg.validate()?;
    let pool = cfg.worker_pool()?;
    let cells = cfg.grid.cells();
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let dir = cfg.run_dir(cell);
                let outcome = ensure_trained(&dir, &cfg.problem, &cfg.architecture, cell);
                TrainedCell {
                    run_id: run_id(cell),
                    dir,
                    outcome,
                }
            })
            .collect()
    }))
}

/// Loads the configuration at `config_path` and runs it.
pub fn run_experiment(config_path: &Path) -> Result<ExperimentReport> {
    run_experiment_config(&ExperimentConfig::load(config_path)?)
}

/// Runs every grid cell: training, then the LLC sweep over the selected checkpoints.
/// Failing cells are recorded and the rest proceed.
pub fn run_experiment_config(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.json"), cfg.to_json().as_bytes())?;
    let problem = cfg.problem.build();
    let points = cfg.llc.points(&problem);
    points.write_csv(&out.join("llc_points.csv"))?;

    let pool = cfg.worker_pool()?;
    let cells = cfg.grid.cells();
    let runs: Vec<RunReport> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(cfg, &problem, &points, cell))
            .collect()
    });

    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        experiment_hash: cfg.experiment_hash(),
        runs: runs.iter().map(|r| r.outcome.clone()).collect(),
        cross_run: CrossRunSummary::new(
            &runs.iter().map(|r| r.outcome.clone()).collect::<Vec<_>>(),
        ),
    };
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_file(&out.join("summary.json"), json.as_bytes())?;
    summary_table(&summary).write(&out.join("summary.csv"))?;
    let mut timing = CsvTable::new(&["run_id", "wall_clock_seconds", "resumed"]);
    for r in &runs {
        timing.push([
            Cell::from(r.outcome.run_id()),
            r.wall_clock_secs.into(),
            r.resumed.into(),
        ]);
    }
    timing.write(&out.join("timing.csv"))?;
    Ok(ExperimentReport {
        output_dir: out.clone(),
        summary,
        runs,
    })
}

fn summary_table(summary: &Summary) -> CsvTable {
    let mut t = CsvTable::new(&[
        "run_id",
        "status",
        "batch_size",
        "learning_rate",
        "seed",
        "final_train_loss",
        "final_test_mse",
        "final_eval_loss",
        "lambda_hat",
        "ci_low",
        "ci_high",
    ])
    .with_meta("experiment_hash", summary.experiment_hash.clone());
    for o in &summary.runs {
        match o {
            RunOutcome::Completed(r) => {
                let (l, lo, hi) = r.final_llc().map_or((f64::NAN, f64::NAN, f64::NAN), |e| {
                    (e.lambda_hat, e.ci_low, e.ci_high)
                });
                t.push([
                    Cell::from(r.run_id.as_str()),
                    "completed".into(),
                    Cell::from(r.batch_size),
                    r.learning_rate.into(),
                    Cell::from(r.seed),
                    r.final_train_loss.into(),
                    r.final_test_mse.into(),
                    r.final_eval_loss.into(),
                    l.into(),
                    lo.into(),
                    hi.into(),
                ]);
            }
            RunOutcome::Failed { run_id, .. } => {
                let mut cells = vec![Cell::from(run_id.as_str()), "failed".into()];
                cells.extend((0..9).map(|_| Cell::from("")));
                t.push(cells);
            }
        }
    }
    t
}

fn run_cell(
    cfg: &ExperimentConfig,
    problem: &HeatIbvp,
    points: &ResidualPointSet,
    cell: &TrainConfig,
) -> RunReport {
    let start = Instant::now();
    let id = run_id(cell);
    let dir = cfg.run_dir(cell);
    let th = train_hash(&cfg.problem, &cfg.architecture, cell);
    let ch = config_hash(&th, &cfg.llc, cfg.llc_checkpoints);
    let record_path = dir.join("run.json");
    if let Some(record) = fs::read_to_string(&record_path)
        .ok()
        .and_then(|s| serde_json::from_str::<RunRecord>(&s).ok())
        .filter(|r| r.config_hash == ch)
    {
        return RunReport {
            outcome: RunOutcome::Completed(record),
            dir,
            wall_clock_secs: start.elapsed().as_secs_f64(),
            resumed: true,
        };
    }
    let outcome = match compute_run(cfg, problem, points, cell, &dir, &id, th, ch) {
        Ok(record) => {
            let mut json = serde_json::to_string_pretty(&record).expect("record serializes");
            json.push('\n');
            match write_file(&record_path, json.as_bytes()) {
                Ok(()) => RunOutcome::Completed(record),
                Err(e) => RunOutcome::Failed {
                    run_id: id,
                    error: e.to_string(),
                },
            }
        }
        Err(e) => RunOutcome::Failed {
            run_id: id,
            error: e.to_string(),
        },
    };
    RunReport {
        outcome,
        dir,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        resumed: false,
    }
}

#[allow(clippy::too_many_arguments)]
fn compute_run(
    cfg: &ExperimentConfig,
    problem: &HeatIbvp,
    points: &ResidualPointSet,
    cell: &TrainConfig,
    dir: &Path,
    id: &str,
    th: String,
    ch: String,
) -> Result<RunRecord> {
    let trained = ensure_trained(dir, &cfg.problem, &cfg.architecture, cell)?;
    let last = trained
        .log
        .rows
        .last()
        .ok_or_else(|| Error::TrainingFailure {
            iteration: 0,
            reason: "empty training log".into(),
        })?;
    let final_ck = trained
        .checkpoints
        .last()
        .expect("final checkpoint is always written");
    let eval = sample_inputs(problem, EVAL_POINTS, EVAL_SEED);
    let final_eval_loss = pinn_loss(problem, &cfg.architecture, &final_ck.params, &eval)?;

    let selected: Vec<&Checkpoint> = match cfg.llc_checkpoints {
        LlcCheckpoints::All => trained.checkpoints.iter().collect(),
        LlcCheckpoints::Final => vec![final_ck],
        LlcCheckpoints::None => Vec::new(),
    };
    let mut llc = Vec::new();
    let mut llc_failures = Vec::new();
    for ck in selected {
        match ensure_llc(dir, problem, ck, &cfg.llc, points, &ch) {
            Ok(estimate) => llc.push(LlcRow {
                iteration: ck.iteration,
                estimate,
            }),
            Err(e) => llc_failures.push(LlcFailure {
                iteration: ck.iteration,
                error: e.to_string(),
            }),
        }
    }
    llc_table(llc.iter().map(|r| (r.iteration, &r.estimate)))
        .with_meta("config_hash", ch.clone())
        .with_meta("train_hash", th.clone())
        .write(&dir.join("llc.csv"))?;
    let failures_path = dir.join("llc_failures.csv");
    if llc_failures.is_empty() {
        let _ = fs::remove_file(&failures_path);
    } else {
        let mut t = CsvTable::new(&["iteration", "error"]).with_meta("config_hash", ch.clone());
        for f in &llc_failures {
            t.push([
                Cell::from(f.iteration),
                Cell::from(f.error.replace([',', '\n'], ";")),
            ]);
        }
        t.write(&failures_path)?;
    }
    Ok(RunRecord {
        run_id: id.to_string(),
        batch_size: cell.batch_size,
        learning_rate: cell.learning_rate,
        seed: cell.seed,
        iterations: cell.iterations,
        train_hash: th,
        config_hash: ch,
        final_train_loss: last.train_loss,
        final_test_mse: last.test_mse,
        final_eval_loss,
        llc,
        llc_failures,
    })
}

/// Writes two plot-ready CSVs per completed run into `<output_dir>/plots`:
/// `loss_history_<run_id>.csv` (iteration,train,test) and `llc_history_<run_id>.csv`
/// (iteration,lambda_hat,ci_low,ci_high).
pub fn emit_plot_data(report: &ExperimentReport) -> Result<Vec<PathBuf>> {
    let plots = report.output_dir.join("plots");
    let mut written = Vec::new();
    for run in &report.runs {
        let Some(rec) = run.outcome.record() else {
            continue;
        };
        let log_path = run.dir.join("train_log.csv");
        let log = TrainLog::from_table(&ParsedTable::read(&log_path)?, &log_path)?;
        let mut loss = CsvTable::new(&["iteration", "train", "test"])
            .with_meta("config_hash", rec.config_hash.clone());
        for r in &log.rows {
            loss.push([
                Cell::from(r.iteration),
                r.train_loss.into(),
                r.test_mse.into(),
            ]);
        }
        let mut llc = CsvTable::new(&["iteration", "lambda_hat", "ci_low", "ci_high"])
            .with_meta("config_hash", rec.config_hash.clone());
        for r in &rec.llc {
            llc.push([
                Cell::from(r.iteration),
                r.estimate.lambda_hat.into(),
                r.estimate.ci_low.into(),
                r.estimate.ci_high.into(),
            ]);
        }
        for (name, table) in [
            (format!("loss_history_{}.csv", rec.run_id), loss),
            (format!("llc_history_{}.csv", rec.run_id), llc),
        ] {
            let path = plots.join(name);
            table.write(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Error statistics of one trained model over the interior and extended time windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedExtrapolation {
    pub seed: u64,
    /// PINN loss on the held-out evaluation set inside the training domain.
    pub eval_loss: f64,
    /// Mean squared error against the exact solution for `t ≤ T`.
    pub interior_mse: f64,
    /// Mean squared error for `T < t ≤ M·T`.
    pub extrapolation_mse: f64,
    pub error_grid: PathBuf,
}

impl SeedExtrapolation {
    pub fn ratio(&self) -> f64 {
        self.extrapolation_mse / self.interior_mse
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationReport {
    pub seeds: Vec<SeedExtrapolation>,
    /// `|a − b| / max(a, b)` of the two extrapolation MSEs.
    pub relative_difference: f64,
}

pub fn extrapolation_report(config_path: &Path) -> Result<ExtrapolationReport> {
    extrapolation_report_config(&ExperimentConfig::load(config_path)?)
}

/// Trains one model per extrapolation seed and compares their errors inside and beyond
/// the training horizon. Writes under `<output_dir>/extrapolation`.
pub fn extrapolation_report_config(cfg: &ExperimentConfig) -> Result<ExtrapolationReport> {
    cfg.validate()?;
    let x = &cfg.extrapolation;
    let problem = cfg.problem.build();
    let root = cfg.output_dir.join("extrapolation");
    let t_end = x.horizon_multiplier * problem.t_max;
    let grid = uniform_grid(&problem, x.nx, x.nt, 0.0, t_end);
    let eval = sample_inputs(&problem, EVAL_POINTS, EVAL_SEED);
    let mut seeds = Vec::new();
    for &seed in &x.seeds {
        let cell = cfg.extrapolation_train_config(seed);
        let dir = root.join(format!("seed_{seed}"));
        let trained = ensure_trained(&dir, &cfg.problem, &cfg.architecture, &cell)?;
        let params = &trained.checkpoints.last().expect("final checkpoint").params;
        let u = jet::ansatz_values(&problem, &cfg.architecture, params.as_slice(), &grid)?;
        let mut table = CsvTable::new(&["x", "t", "abs_error"])
            .with_meta(
                "train_hash",
                train_hash(&cfg.problem, &cfg.architecture, &cell),
            )
            .with_meta("horizon", crate::io::fmt_f64(t_end));
        let (mut interior, mut beyond) = (Vec::new(), Vec::new());
        for (&(xi, ti), ui) in grid.iter().zip(&u) {
            let err = ui - (problem.exact)(xi, ti);
            table.push([Cell::from(xi), ti.into(), err.abs().into()]);
            if ti <= problem.t_max {
                interior.push(err * err);
            } else {
                beyond.push(err * err);
            }
        }
        let error_grid = root.join(format!("errors_seed_{seed}.csv"));
        table.write(&error_grid)?;
        seeds.push(SeedExtrapolation {
            seed,
            eval_loss: pinn_loss(&problem, &cfg.architecture, params, &eval)?,
            interior_mse: mean(&interior),
            extrapolation_mse: mean(&beyond),
            error_grid,
        });
    }
    let (a, b) = (seeds[0].extrapolation_mse, seeds[1].extrapolation_mse);
    let report = ExtrapolationReport {
        relative_difference: (a - b).abs() / a.max(b),
        seeds,
    };
    let mut t = CsvTable::new(&[
        "seed",
        "eval_loss",
        "interior_mse",
        "extrapolation_mse",
        "ratio",
    ])
    .with_meta("experiment_hash", cfg.experiment_hash())
    .with_meta(
        "relative_difference",
        crate::io::fmt_f64(report.relative_difference),
    );
    for s in &report.seeds {
        t.push([
            Cell::from(s.seed),
            s.eval_loss.into(),
            s.interior_mse.into(),
            s.extrapolation_mse.into(),
            s.ratio().into(),
        ]);
    }
    t.write(&root.join("divergence.csv"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::NutsConfig;

    fn smoke(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(dir);
        c.architecture = MlpArchitecture::space_time(&[6, 6]).unwrap();
        c.grid = TrainGrid {
            batch_sizes: vec![8],
            learning_rates: vec![1e-3],
            seeds: vec![0],
            iterations: 40,
            log_every: 10,
            checkpoint_every: 20,
            ..TrainGrid::default()
        };
        c.llc = LlcConfig {
            n: 32,
            sampler: NutsConfig {
                warmup_draws: 30,
                main_draws: 20,
                max_tree_depth: 4,
                ..NutsConfig::default()
            },
            ..LlcConfig::default()
        };
        c.extrapolation = ExtrapolationConfig {
            iterations: 30,
            nx: 11,
            nt: 21,
            ..ExtrapolationConfig::default()
        };
        c
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_fields() {
        let c = smoke(Path::new("out"));
        assert_eq!(
            ExperimentConfig::from_json(&c.to_json(), Path::new("c.json")).unwrap(),
            c
        );
        let bad = c.to_json().replacen("\"workers\"", "\"wrokers\"", 1);
        match ExperimentConfig::from_json(&bad, Path::new("c.json")).unwrap_err() {
            Error::ConfigParse { line, message, .. } => {
                assert!(line > 1);
                assert!(message.contains("wrokers"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn minimal_config_takes_full_defaults() {
        let c = ExperimentConfig::from_json(
            r#"{"schema_version": 1, "output_dir": "x"}"#,
            Path::new("c.json"),
        )
        .unwrap();
        assert_eq!(c.grid.cells().len(), 6);
        assert_eq!(crate::network::param_count(&c.architecture), 20_601);
        assert_eq!(c.llc.n, 256);
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let mut c = smoke(Path::new("out"));
        c.grid.batch_sizes.clear();
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("grid.batch_sizes"));
        let mut c = smoke(Path::new("out"));
        c.grid.seeds = vec![1, 1];
        assert!(c.validate().unwrap_err().to_string().contains("duplicate"));
        let mut c = smoke(Path::new("out"));
        c.schema_version = 2;
        assert!(c.validate().is_err());
        let mut c = smoke(Path::new("out"));
        c.extrapolation.seeds = vec![3];
        assert!(c.validate().is_err());
    }

    #[test]
    fn run_ids_and_hashes() {
        let g = TrainGrid::default();
        let ids: Vec<String> = g.cells().iter().map(run_id).collect();
        assert_eq!(ids[0], "bs8_lr1e-3_seed0");
        assert_eq!(ids[5], "bs32_lr1e-4_seed0");
        let p = ProblemConfig::default();
        let a = MlpArchitecture::default_heat();
        let h = train_hash(&p, &a, &g.cells()[0]);
        assert_eq!(h.len(), 64);
        assert_eq!(h, train_hash(&p, &a, &g.cells()[0]));
        assert_ne!(h, train_hash(&p, &a, &g.cells()[1]));
        assert_ne!(
            config_hash(&h, &LlcConfig::default(), LlcCheckpoints::All),
            config_hash(&h, &LlcConfig::default(), LlcCheckpoints::Final)
        );
    }

    #[test]
    fn smoke_experiment_writes_and_resumes() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = smoke(tmp.path());
        let report = run_experiment_config(&cfg).unwrap();
        assert_eq!(report.failed_runs(), 0);
        let rec = report.runs[0].outcome.record().unwrap();
        assert_eq!(
            rec.llc.iter().map(|r| r.iteration).collect::<Vec<_>>(),
            vec![0, 20, 40]
        );
        let run_dir = tmp.path().join("runs").join("bs8_lr1e-3_seed0");
        for f in [
            "train_log.csv",
            "llc.csv",
            "run.json",
            "checkpoints/ckpt_0.bin",
            "checkpoints/ckpt_40.bin",
            "chains/iter_40_chain_1.csv",
        ] {
            assert!(run_dir.join(f).exists(), "{f}");
        }
        let summary = fs::read(tmp.path().join("summary.json")).unwrap();
        let again = run_experiment_config(&cfg).unwrap();
        assert!(again.runs[0].resumed);
        assert_eq!(fs::read(tmp.path().join("summary.json")).unwrap(), summary);

        // losing the record recomputes LLC estimates from the stored chains
        fs::remove_file(run_dir.join("run.json")).unwrap();
        let third = run_experiment_config(&cfg).unwrap();
        assert!(!third.runs[0].resumed);
        assert_eq!(fs::read(tmp.path().join("summary.json")).unwrap(), summary);

        let plots = emit_plot_data(&report).unwrap();
        assert_eq!(plots.len(), 2);
        let llc = ParsedTable::read(&plots[1]).unwrap();
        assert_eq!(
            llc.header,
            vec!["iteration", "lambda_hat", "ci_low", "ci_high"]
        );
        assert_eq!(llc.meta("config_hash"), Some(rec.config_hash.as_str()));
    }

    #[test]
    fn failing_cell_is_recorded_and_others_proceed() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = smoke(tmp.path());
        cfg.grid.learning_rates = vec![1e-3, 1e300];
        cfg.llc_checkpoints = LlcCheckpoints::Final;
        let report = run_experiment_config(&cfg).unwrap();
        assert_eq!(report.failed_runs(), 1);
        assert!(report.runs[0].outcome.record().is_some());
        let csv = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
        assert!(csv.contains("failed"));
    }

    #[test]
    fn extrapolation_smoke() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = smoke(tmp.path());
        let r = extrapolation_report_config(&cfg).unwrap();
        assert_eq!(r.seeds.len(), 2);
        assert!(r
            .seeds
            .iter()
            .all(|s| s.interior_mse > 0.0 && s.extrapolation_mse > 0.0));
        assert!(tmp.path().join("extrapolation/divergence.csv").exists());
        let grid = ParsedTable::read(&r.seeds[0].error_grid).unwrap();
        assert_eq!(grid.rows.len(), 11 * 21);
    }
}
