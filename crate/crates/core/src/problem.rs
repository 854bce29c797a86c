//! Heat-equation initial/boundary value problem, residual points and losses.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{input_derivatives, BivariateFn, Dual2, Scalar};
use crate::error::{Error, Result};
use crate::network::{hard_constrained_generic, jet, BoundaryMask, MlpArchitecture, ParamVector};
use crate::stats::compensated_sum;

/// Initial condition `u(x, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// `sin(k x)`.
    Sine { wavenumber: f64 },
}

impl InitialCondition {
    pub fn eval<S: Scalar>(self, x: S) -> S {
        match self {
            InitialCondition::Sine { wavenumber } => (x * wavenumber).sin(),
        }
    }

    /// `(u₀, u₀', u₀'')` at `x`.
    pub fn jet(self, x: f64) -> [f64; 3] {
        let d = self.eval(Dual2::seed(x));
        [d.value, d.d_first, d.d_second]
    }
}

/// `∂ₜu − ∂ₓₓu = f` on `(x_lo, x_hi) × (0, t_max]` with homogeneous Dirichlet boundaries.
#[derive(Debug, Clone, Copy)]
pub struct HeatIbvp {
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_max: f64,
    pub initial: InitialCondition,
    pub forcing: fn(f64, f64) -> f64,
    pub exact: fn(f64, f64) -> f64,
    /// Boundary factor of the hard-constrained ansatz.
    pub mask: BoundaryMask,
}

fn decaying_sine(x: f64, t: f64) -> f64 {
    (-t).exp() * (PI * x).sin()
}

fn decaying_sine_forcing(x: f64, t: f64) -> f64 {
    (PI * PI - 1.0) * (-t).exp() * (PI * x).sin()
}

/// Ω = (0, 2), T = 2, `u = e^{−t} sin(πx)`, `f = (π² − 1) e^{−t} sin(πx)`.
pub fn default_heat_problem() -> HeatIbvp {
    HeatIbvp {
        x_lo: 0.0,
        x_hi: 2.0,
        t_max: 2.0,
        initial: InitialCondition::Sine { wavenumber: PI },
        forcing: decaying_sine_forcing,
        exact: decaying_sine,
        mask: BoundaryMask::Normalized,
    }
}

impl HeatIbvp {
    pub fn with_mask(mut self, mask: BoundaryMask) -> Self {
        self.mask = mask;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_lo < self.x_hi) || !(self.t_max > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need x_lo < x_hi and t_max > 0, got ({}, {}) and {}",
                self.x_lo, self.x_hi, self.t_max
            )));
        }
        Ok(())
    }
}

/// `∂ₜu − ∂ₓₓu − f` for an arbitrary smooth field `u`.
pub fn residual_of<F: BivariateFn<f64> + ?Sized>(
    problem: &HeatIbvp,
    field: &F,
    x: f64,
    t: f64,
) -> Result<f64> {
    let d = input_derivatives(field, x, t)?;
    Ok(d.du_dt - d.d2u_dx2 - (problem.forcing)(x, t))
}

/// PDE residual of the hard-constrained network at one point.
pub fn residual(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    params: &ParamVector,
    x: f64,
    t: f64,
) -> Result<f64> {
    let w = params.as_slice();
    crate::network::check_space_time_params(arch, w.len())?;
    let field = |xd: Dual2<f64>, td: Dual2<f64>| {
        hard_constrained_generic(problem, arch, w, xd, td).expect("shape checked above")
    };
    residual_of(problem, &field, x, t)
}

/// Fixed set of residual evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPointSet {
    pub points: Vec<(f64, f64)>,
    pub seed: u64,
}

impl ResidualPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `x,t` header and one row per point, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,t\n");
        for (x, t) in &self.points {
            writeln!(out, "{},{}", crate::io::fmt_f64(*x), crate::io::fmt_f64(*t)).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str, seed: u64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        if lines.next().map(str::trim) != Some("x,t") {
            return Err(Error::InvalidConfig(
                "point CSV must start with an x,t header".into(),
            ));
        }
        let points = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (x, t) = l
                    .split_once(',')
                    .ok_or_else(|| Error::InvalidConfig(format!("bad row {l:?}")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidConfig(format!("{s:?}: {e}")))
                };
                Ok((parse(x)?, parse(t)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points, seed })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `n` i.i.d. points, `x ~ U(x_lo, x_hi)`, `t ~ U(0, t_max]`.
pub fn sample_inputs(problem: &HeatIbvp, n: usize, seed: u64) -> ResidualPointSet {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ResidualPointSet {
        points: draw_points(problem, n, &mut rng),
        seed,
    }
}

pub(crate) fn draw_points<R: Rng>(problem: &HeatIbvp, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let width = problem.x_hi - problem.x_lo;
    (0..n)
        .map(|_| {
            // open interval in x, half-open (0, T] in t
            let mut u: f64 = rng.random();
            while u == 0.0 {
                u = rng.random();
            }
            let x = problem.x_lo + width * u;
            let t = problem.t_max * (1.0 - rng.random::<f64>());
            (x, t)
        })
        .collect()
}

/// Mean squared PDE residual.
pub fn pinn_loss(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    params: &ParamVector,
    points: &ResidualPointSet,
) -> Result<f64> {
    jet::mean_squared_residual(problem, arch, params.as_slice(), &points.points, None)
}

/// Mean squared PDE residual and its parameter gradient.
pub fn pinn_loss_and_grad(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    params: &[f64],
    points: &[(f64, f64)],
) -> Result<(f64, Vec<f64>)> {
    let mut g = vec![0.0; params.len()];
    let loss = jet::mean_squared_residual(problem, arch, params, points, Some(&mut g))?;
    Ok((loss, g))
}

/// Gaussian error model on residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualModel {
    sigma: f64,
}

impl ResidualModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `log(σ √(2π))`.
    pub fn log_normalizer(&self) -> f64 {
        (self.sigma * (2.0 * PI).sqrt()).ln()
    }

    /// Negative log-likelihood per point given the PINN loss.
    pub fn nll_from_pinn_loss(&self, pinn_loss: f64) -> f64 {
        pinn_loss / (2.0 * self.sigma * self.sigma) + self.log_normalizer()
    }

    /// `1 / (2σ²)`, the factor relating NLL differences to PINN-loss differences.
    pub fn loss_scale(&self) -> f64 {
        1.0 / (2.0 * self.sigma * self.sigma)
    }
}

/// Sample negative log-likelihood of zero residuals.
pub fn nll(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    params: &ParamVector,
    points: &ResidualPointSet,
    model: &ResidualModel,
) -> Result<f64> {
    Ok(model.nll_from_pinn_loss(pinn_loss(problem, arch, params, points)?))
}

/// Uniform grid over `[x_lo, x_hi] × [t_lo, t_hi]`, endpoints included, `t` varying fastest.
pub fn uniform_grid(
    problem: &HeatIbvp,
    nx: usize,
    nt: usize,
    t_lo: f64,
    t_hi: f64,
) -> Vec<(f64, f64)> {
    let step = |lo: f64, hi: f64, k: usize, n: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
    (0..nx)
        .flat_map(|i| (0..nt).map(move |j| (i, j)))
        .map(|(i, j)| {
            (
                step(problem.x_lo, problem.x_hi, i, nx),
                step(t_lo, t_hi, j, nt),
            )
        })
        .collect()
}

/// Mean squared error against the exact solution on a uniform `grid_nx × grid_nt` grid.
pub fn test_mse(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    params: &ParamVector,
    grid_nx: usize,
    grid_nt: usize,
) -> Result<f64> {
    if grid_nx < 2 || grid_nt < 2 {
        return Err(Error::InvalidConfig(
            "test grid needs at least 2 points per axis".into(),
        ));
    }
    let grid = uniform_grid(problem, grid_nx, grid_nt, 0.0, problem.t_max);
    grid_mse(problem, arch, params, &grid)
}

pub(crate) fn grid_mse(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    params: &ParamVector,
    grid: &[(f64, f64)],
) -> Result<f64> {
    let u = jet::ansatz_values(problem, arch, params.as_slice(), grid)?;
    let sq = grid.iter().zip(&u).map(|(&(x, t), v)| {
        let e = v - (problem.exact)(x, t);
        e * e
    });
    Ok(compensated_sum(sq) / grid.len() as f64)
}
