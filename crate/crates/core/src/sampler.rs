//! The No-U-Turn sampler and the tempered, localized posterior it targets.
//!
//! Trajectories are built by repeated doubling. Each new subtree is checked for a U-turn
//! across its whole span and across the two spans that straddle its midpoint. The
//! proposal is drawn multinomially: biased-progressively between subtrees and uniformly
//! within a subtree. Warmup adapts the step size by dual averaging. It can optionally
//! adapt a diagonal inverse mass matrix over doubling windows, using the usual 75/25/50
//! schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Cell, CsvTable, ParsedTable};

/// A trajectory whose energy error exceeds this is abandoned as divergent.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;

/// Log density value with one scalar carried along for every visited state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub log_density: f64,
    /// The quantity recorded for each draw, such as the empirical loss for a tempered posterior.
    pub observable: f64,
}

/// A differentiable unnormalized log density.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns the density at `position` and writes its gradient into `grad`.
    fn evaluate(&self, position: &[f64], grad: &mut [f64]) -> Result<Evaluation>;
}

/// An average loss `L_n(w)` over `n` fixed observations.
pub trait EmpiricalLoss: Sync {
    fn dim(&self) -> usize;
    fn sample_size(&self) -> usize;

    /// Returns `L_n(w)` and writes its gradient into `grad`.
    fn loss_and_grad(&self, w: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// `β = 1/ln n`.
pub fn inverse_temperature(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "sample size {n} gives no positive inverse temperature; need n ≥ 2"
        )));
    }
    Ok(1.0 / (n as f64).ln())
}

/// Density `exp{−nβ(L_n(w) − L_n(w*)) − (γ/2)‖w − w*‖²}`.
///
/// The additive constant puts the log density at exactly zero at the anchor. Its
/// observable is `L_n(w)`.
pub struct TemperedPosterior<'a, L: EmpiricalLoss + ?Sized> {
    loss: &'a L,
    anchor: Vec<f64>,
    anchor_loss: f64,
    n_beta: f64,
    gamma: f64,
}

impl<'a, L: EmpiricalLoss + ?Sized> TemperedPosterior<'a, L> {
    pub fn new(loss: &'a L, anchor: &[f64], beta: f64, gamma: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "inverse temperature must be positive, got {beta}"
            )));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "localization strength must be non-negative, got {gamma}"
            )));
        }
        if anchor.len() != loss.dim() {
            return Err(Error::LengthMismatch {
                expected: loss.dim(),
                actual: anchor.len(),
            });
        }
        if let Some(index) = anchor.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFiniteParameter { index });
        }
        let mut grad = vec![0.0; anchor.len()];
        let anchor_loss = loss.loss_and_grad(anchor, &mut grad)?;
        Ok(Self {
            loss,
            anchor: anchor.to_vec(),
            anchor_loss,
            n_beta: loss.sample_size() as f64 * beta,
            gamma,
        })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    /// `L_n(w*)`.
    pub fn anchor_loss(&self) -> f64 {
        self.anchor_loss
    }

    /// `nβ`.
    pub fn n_beta(&self) -> f64 {
        self.n_beta
    }
}

impl<L: EmpiricalLoss + ?Sized> LogDensity for TemperedPosterior<'_, L> {
    fn dim(&self) -> usize {
        self.anchor.len()
    }

    fn evaluate(&self, w: &[f64], grad: &mut [f64]) -> Result<Evaluation> {
        let loss = self.loss.loss_and_grad(w, grad)?;
        let mut sq = 0.0;
        for ((g, &wi), &ai) in grad.iter_mut().zip(w).zip(&self.anchor) {
            let d = wi - ai;
            sq += d * d;
            *g = -self.n_beta * *g - self.gamma * d;
        }
        let log_density = -self.n_beta * (loss - self.anchor_loss) - 0.5 * self.gamma * sq;
        if !log_density.is_finite() {
            return Err(Error::NumericalFailure(
                "non-finite tempered log density".into(),
            ));
        }
        Ok(Evaluation {
            log_density,
            observable: loss,
        })
    }
}

/// Value and gradient of the tempered log density at `w`, anchored at `w_star`.
pub fn tempered_log_density<L: EmpiricalLoss + ?Sized>(
    loss: &L,
    w: &[f64],
    w_star: &[f64],
    beta: f64,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let posterior = TemperedPosterior::new(loss, w_star, beta, gamma)?;
    let mut grad = vec![0.0; w.len()];
    let e = posterior.evaluate(w, &mut grad)?;
    Ok((e.log_density, grad))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassMatrix {
    #[default]
    Identity,
    AdaptedDiagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NutsConfig {
    pub warmup_draws: usize,
    pub main_draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: u32,
    pub mass_matrix: MassMatrix,
    pub seed: u64,
    /// Keep every drawn position, not just its observable.
    pub store_positions: bool,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            warmup_draws: 1000,
            main_draws: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            mass_matrix: MassMatrix::Identity,
            seed: 0,
            store_positions: false,
        }
    }
}

impl NutsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.main_draws == 0 {
            return Err(Error::InvalidConfig("main_draws must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::InvalidConfig(
                "max_tree_depth must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Post-warmup draws of one chain and their diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub chain: u64,
    pub observables: Vec<f64>,
    pub log_densities: Vec<f64>,
    pub positions: Option<Vec<Vec<f64>>>,
    pub accept_stats: Vec<f64>,
    pub divergent: Vec<bool>,
    pub tree_depths: Vec<u32>,
    pub leapfrog_steps: Vec<u32>,
    /// Adapted step size used for every main draw.
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub warmup_divergences: usize,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    pub fn divergences(&self) -> usize {
        self.divergent.iter().filter(|&&d| d).count()
    }

    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "draw",
            "observable",
            "log_density",
            "accept_stat",
            "divergent",
            "tree_depth",
            "leapfrog_steps",
        ])
        .with_meta("chain", self.chain.to_string())
        .with_meta("step_size", crate::io::fmt_f64(self.step_size))
        .with_meta("warmup_divergences", self.warmup_divergences.to_string());
        for i in 0..self.len() {
            t.push([
                Cell::from(i),
                self.observables[i].into(),
                self.log_densities[i].into(),
                self.accept_stats[i].into(),
                self.divergent[i].into(),
                Cell::from(self.tree_depths[i] as usize),
                Cell::from(self.leapfrog_steps[i] as usize),
            ]);
        }
        t
    }

    /// Reads back the per-draw columns written by [`ChainDraws::to_table`]. Positions and
    /// the mass matrix are not part of the table and come back empty.
    pub fn from_table(table: &ParsedTable, origin: &std::path::Path) -> Result<Self> {
        let meta = |key: &str| {
            table.meta(key).ok_or_else(|| Error::ConfigParse {
                path: origin.to_path_buf(),
                line: 1,
                column: 1,
                message: format!("missing {key} metadata"),
            })
        };
        let malformed = |key: &str| Error::ConfigParse {
            path: origin.to_path_buf(),
            line: 1,
            column: 1,
            message: format!("malformed {key}"),
        };
        let chain = meta("chain")?.parse().map_err(|_| malformed("chain"))?;
        let step_size = meta("step_size")?
            .parse()
            .map_err(|_| malformed("step_size"))?;
        let warmup_divergences = meta("warmup_divergences")?
            .parse()
            .map_err(|_| malformed("warmup_divergences"))?;
        Ok(Self {
            chain,
            observables: table.parse_column("observable", origin)?,
            log_densities: table.parse_column("log_density", origin)?,
            positions: None,
            accept_stats: table.parse_column("accept_stat", origin)?,
            divergent: table.parse_column("divergent", origin)?,
            tree_depths: table.parse_column("tree_depth", origin)?,
            leapfrog_steps: table.parse_column("leapfrog_steps", origin)?,
            step_size,
            inv_mass: Vec::new(),
            warmup_divergences,
        })
    }
}

/// Runs one chain from `init`. Chains with the same `config.seed` and different `chain`
/// indices use independent random streams.
pub fn nuts_sample<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    config: &NutsConfig,
    chain: u64,
) -> Result<ChainDraws> {
    config.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            actual: init.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain);
    let mut state = Point::new(dim);
    state.q.copy_from_slice(init);
    let eval = target
        .evaluate(&state.q, &mut state.grad)
        .map_err(|e| Error::SamplerFailure(format!("initial state rejected: {e}")))?;
    if !eval.log_density.is_finite() || state.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::SamplerFailure(
            "initial log density or gradient is not finite".into(),
        ));
    }
    state.log_density = eval.log_density;
    state.observable = eval.observable;

    let mut nuts = Nuts {
        target,
        rng,
        inv_mass: vec![1.0; dim],
        step_size: 1.0,
        max_depth: config.max_tree_depth,
        scratch: Scratch::default(),
    };
    nuts.step_size = nuts.reasonable_step_size(&state, 1.0)?;
    let mut averaging = DualAveraging::new(config.target_accept, nuts.step_size);
    let mut schedule = match config.mass_matrix {
        MassMatrix::AdaptedDiagonal => WindowSchedule::new(config.warmup_draws),
        MassMatrix::Identity => None,
    };
    let mut moments = Welford::new(dim);

    let mut warmup_divergences = 0;
    for i in 0..config.warmup_draws {
        let info = nuts.transition(&mut state)?;
        warmup_divergences += info.divergent as usize;
        nuts.step_size = averaging.learn(info.accept_stat);
        if let Some(s) = schedule.as_mut() {
            if s.in_window(i) {
                moments.add(&state.q);
            }
            if s.window_ends(i) {
                nuts.inv_mass = moments.regularized_variance();
                moments = Welford::new(dim);
                nuts.step_size = nuts.reasonable_step_size(&state, nuts.step_size)?;
                averaging = DualAveraging::new(config.target_accept, nuts.step_size);
            }
        }
    }
    if config.warmup_draws > 0 {
        if warmup_divergences == config.warmup_draws {
            return Err(Error::SamplerFailure(format!(
                "all {} warmup transitions diverged (final step size {:e})",
                config.warmup_draws, nuts.step_size
            )));
        }
        nuts.step_size = averaging.final_step_size();
    }

    let n = config.main_draws;
    let mut out = ChainDraws {
        chain,
        observables: Vec::with_capacity(n),
        log_densities: Vec::with_capacity(n),
        positions: config.store_positions.then(|| Vec::with_capacity(n)),
        accept_stats: Vec::with_capacity(n),
        divergent: Vec::with_capacity(n),
        tree_depths: Vec::with_capacity(n),
        leapfrog_steps: Vec::with_capacity(n),
        step_size: nuts.step_size,
        inv_mass: Vec::new(),
        warmup_divergences,
    };
    for _ in 0..n {
        let info = nuts.transition(&mut state)?;
        out.observables.push(state.observable);
        out.log_densities.push(state.log_density);
        if let Some(p) = out.positions.as_mut() {
            p.push(state.q.clone());
        }
        out.accept_stats.push(info.accept_stat);
        out.divergent.push(info.divergent);
        out.tree_depths.push(info.depth);
        out.leapfrog_steps.push(info.leapfrog_steps);
    }
    out.inv_mass = nuts.inv_mass;
    Ok(out)
}

/// Phase-space state with everything needed to continue a trajectory from it.
#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    log_density: f64,
    observable: f64,
}

impl Point {
    fn new(dim: usize) -> Self {
        Self {
            q: vec![0.0; dim],
            p: vec![0.0; dim],
            grad: vec![0.0; dim],
            log_density: 0.0,
            observable: 0.0,
        }
    }
}

/// Momentum summary of a contiguous stretch of trajectory, in build order.
#[derive(Debug, Clone)]
struct Span {
    rho: Vec<f64>,
    first_p: Vec<f64>,
    first_sharp: Vec<f64>,
    last_p: Vec<f64>,
    last_sharp: Vec<f64>,
}

impl Span {
    fn reversed(self) -> Self {
        Self {
            rho: self.rho,
            first_p: self.last_p,
            first_sharp: self.last_sharp,
            last_p: self.first_p,
            last_sharp: self.first_sharp,
        }
    }

    /// Joins `a` followed by `b`. The second value is false when the joined span or either
    /// straddling sub-span has turned back on itself.
    fn join(a: Span, b: Span) -> (Span, bool) {
        let rho: Vec<f64> = a.rho.iter().zip(&b.rho).map(|(x, y)| x + y).collect();
        let open = no_u_turn(&a.first_sharp, &b.last_sharp, rho.iter().copied())
            && no_u_turn(
                &a.first_sharp,
                &b.first_sharp,
                a.rho.iter().zip(&b.first_p).map(|(x, y)| x + y),
            )
            && no_u_turn(
                &a.last_sharp,
                &b.last_sharp,
                b.rho.iter().zip(&a.last_p).map(|(x, y)| x + y),
            );
        (
            Span {
                rho,
                first_p: a.first_p,
                first_sharp: a.first_sharp,
                last_p: b.last_p,
                last_sharp: b.last_sharp,
            },
            open,
        )
    }
}

fn no_u_turn(sharp_a: &[f64], sharp_b: &[f64], rho: impl Iterator<Item = f64>) -> bool {
    let (mut da, mut db) = (0.0, 0.0);
    for ((r, a), b) in rho.zip(sharp_a).zip(sharp_b) {
        da += a * r;
        db += b * r;
    }
    da > 0.0 && db > 0.0
}

struct Subtree {
    span: Span,
    proposal: Point,
    log_sum_weight: f64,
}

#[derive(Default)]
struct Scratch {
    leapfrog_steps: u32,
    sum_metro_prob: f64,
    divergent: bool,
}

struct TransitionInfo {
    accept_stat: f64,
    divergent: bool,
    depth: u32,
    leapfrog_steps: u32,
}

struct Nuts<'a, T: ?Sized> {
    target: &'a T,
    rng: ChaCha8Rng,
    inv_mass: Vec<f64>,
    step_size: f64,
    max_depth: u32,
    scratch: Scratch,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl<T: LogDensity + ?Sized> Nuts<'_, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_mass)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    fn energy(&self, z: &Point) -> f64 {
        let h = -z.log_density + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_mass).map(|(p, m)| p * m).collect()
    }

    fn resample_momentum(&mut self, z: &mut Point) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_mass) {
            let n: f64 = self.rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    /// One leapfrog step. A failed or non-finite evaluation leaves `z` at infinite energy.
    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_mass) {
            *q += eps * m * p;
        }
        match self.target.evaluate(&z.q, &mut z.grad) {
            Ok(e) if e.log_density.is_finite() && z.grad.iter().all(|g| g.is_finite()) => {
                z.log_density = e.log_density;
                z.observable = e.observable;
                for (p, g) in z.p.iter_mut().zip(&z.grad) {
                    *p += 0.5 * eps * g;
                }
            }
            _ => z.log_density = f64::NEG_INFINITY,
        }
    }

    /// Doubles or halves `eps` until one leapfrog step's acceptance crosses 0.8.
    fn reasonable_step_size(&mut self, start: &Point, eps: f64) -> Result<f64> {
        let threshold = 0.8_f64.ln();
        let mut eps = eps;
        let mut direction = 0.0;
        for _ in 0..200 {
            let mut z = start.clone();
            self.resample_momentum(&mut z);
            let h0 = self.energy(&z);
            self.leapfrog(&mut z, eps);
            let delta = h0 - self.energy(&z);
            if direction == 0.0 {
                direction = if delta > threshold { 1.0 } else { -1.0 };
            } else if (direction > 0.0 && !(delta > threshold))
                || (direction < 0.0 && !(delta < threshold))
            {
                return Ok(eps);
            }
            eps = if direction > 0.0 {
                eps * 2.0
            } else {
                eps * 0.5
            };
            if !(eps > 1e-300 && eps < 1e7) {
                break;
            }
        }
        Err(Error::SamplerFailure(format!(
            "no usable step size found (stopped at {eps:e})"
        )))
    }

    fn transition(&mut self, z: &mut Point) -> Result<TransitionInfo> {
        self.resample_momentum(z);
        self.scratch = Scratch::default();
        let h0 = self.energy(z);
        let sharp = self.sharp(&z.p);
        let mut span = Span {
            rho: z.p.clone(),
            first_p: z.p.clone(),
            first_sharp: sharp.clone(),
            last_p: z.p.clone(),
            last_sharp: sharp,
        };
        let mut forward_edge = z.clone();
        let mut backward_edge = z.clone();
        let mut log_sum_weight = 0.0;
        let mut depth = 0;
        while depth < self.max_depth {
            let forward = self.rng.random::<f64>() > 0.5;
            let (edge, eps) = if forward {
                (&mut forward_edge, self.step_size)
            } else {
                (&mut backward_edge, -self.step_size)
            };
            let Some(sub) = self.build_tree(depth, edge, h0, eps) else {
                break;
            };
            depth += 1;
            if sub.log_sum_weight > log_sum_weight
                || self.rng.random::<f64>() < (sub.log_sum_weight - log_sum_weight).exp()
            {
                *z = sub.proposal;
            }
            log_sum_weight = log_sum_exp(log_sum_weight, sub.log_sum_weight);
            let (joined, open) = if forward {
                Span::join(span, sub.span)
            } else {
                Span::join(sub.span.reversed(), span)
            };
            span = joined;
            if !open {
                break;
            }
        }
        let steps = self.scratch.leapfrog_steps;
        Ok(TransitionInfo {
            accept_stat: if steps == 0 {
                0.0
            } else {
                self.scratch.sum_metro_prob / steps as f64
            },
            divergent: self.scratch.divergent,
            depth,
            leapfrog_steps: steps,
        })
    }

    /// Builds `2^depth` steps outward from `edge`, leaving `edge` at the far end. `None`
    /// marks a subtree that diverged or turned back on itself.
    fn build_tree(&mut self, depth: u32, edge: &mut Point, h0: f64, eps: f64) -> Option<Subtree> {
        if depth == 0 {
            self.leapfrog(edge, eps);
            self.scratch.leapfrog_steps += 1;
            let h = self.energy(edge);
            if !(h - h0 <= MAX_ENERGY_ERROR) {
                self.scratch.divergent = true;
                return None;
            }
            let log_weight = h0 - h;
            self.scratch.sum_metro_prob += if log_weight > 0.0 {
                1.0
            } else {
                log_weight.exp()
            };
            let sharp = self.sharp(&edge.p);
            let span = Span {
                rho: edge.p.clone(),
                first_p: edge.p.clone(),
                first_sharp: sharp.clone(),
                last_p: edge.p.clone(),
                last_sharp: sharp,
            };
            return Some(Subtree {
                span,
                proposal: edge.clone(),
                log_sum_weight: log_weight,
            });
        }
        let init = self.build_tree(depth - 1, edge, h0, eps)?;
        let last = self.build_tree(depth - 1, edge, h0, eps)?;
        let log_sum_weight = log_sum_exp(init.log_sum_weight, last.log_sum_weight);
        let proposal = if self.rng.random::<f64>() < (last.log_sum_weight - log_sum_weight).exp() {
            last.proposal
        } else {
            init.proposal
        };
        let (span, open) = Span::join(init.span, last.span);
        open.then_some(Subtree {
            span,
            proposal,
            log_sum_weight,
        })
    }
}

/// Step-size adaptation by dual averaging toward a target acceptance statistic.
#[derive(Debug, Clone)]
struct DualAveraging {
    target: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(target: f64, step_size: f64) -> Self {
        Self {
            target,
            mu: (10.0 * step_size).ln(),
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup windows for metric adaptation: an initial buffer, doubling windows, and a
/// terminal buffer left for step-size adaptation alone.
#[derive(Debug, Clone)]
struct WindowSchedule {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window: usize,
    next_end: usize,
}

impl WindowSchedule {
    fn new(warmup: usize) -> Option<Self> {
        if warmup < 20 {
            return None;
        }
        let (mut init_buffer, mut term_buffer, mut window) = (75, 50, 25);
        if init_buffer + window + term_buffer > warmup {
            init_buffer = (0.15 * warmup as f64) as usize;
            term_buffer = (0.1 * warmup as f64) as usize;
            window = warmup - init_buffer - term_buffer;
        }
        Some(Self {
            warmup,
            init_buffer,
            term_buffer,
            window,
            next_end: init_buffer + window - 1,
        })
    }

    fn last_end(&self) -> usize {
        self.warmup - self.term_buffer - 1
    }

    fn in_window(&self, i: usize) -> bool {
        i >= self.init_buffer && i < self.warmup - self.term_buffer
    }

    /// True at the last draw of a window; advances to the next window.
    fn window_ends(&mut self, i: usize) -> bool {
        if i != self.next_end || i >= self.warmup - self.term_buffer {
            return false;
        }
        if self.next_end != self.last_end() {
            self.window *= 2;
            self.next_end = i + self.window;
            if self.next_end + 2 * self.window >= self.warmup - self.term_buffer {
                self.next_end = self.last_end();
            }
        }
        true
    }
}

/// Running per-coordinate variance.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    /// Sample variance shrunk toward `1e-3`, which keeps short windows well conditioned.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}
