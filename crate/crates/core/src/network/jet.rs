//! Batched residual evaluation with hand-written reverse pass.
//!
//! Each point carries four channels through the network: the value and its `∂ₜ`, `∂ₓ`
//! and `∂ₓₓ` derivatives. With `N` points the channels of one layer form a
//! `width × 4N` matrix laid out as `[value | t | x | xx]`, so every affine layer is one
//! matrix product. The reverse pass differentiates the channel recurrences
//!
//! ```text
//! a   = σ(z)          a_t = σ'(z) z_t     a_x = σ'(z) z_x
//! a_xx = σ''(z) z_x² + σ'(z) z_xx
//! ```
//!
//! with respect to every weight and bias. This computes the same quantities as running
//! `Dual2<Var>` through [`super::hard_constrained_generic`] and is tested against it.

use super::{check_len, MlpArchitecture};
use crate::error::{Error, Result};
use crate::problem::HeatIbvp;
use crate::stats::compensated_sum;

const BLOCK: usize = 64;

/// `c = a · b + beta · c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rs: usize, cs: usize, rows: usize, cols: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(a.len() > last(rsa, csa, m, k) && b.len() > last(rsb, csb, k, n));
    }
    assert!(c.len() > last(rsc, csc, m, n));
    // SAFETY: every index touched is bounded by the asserts above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Channel matrices of one block of points.
struct Block {
    n: usize,
    channels: usize,
    /// `acts[0]` is the input; `acts[l + 1]` is the output of hidden layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of every layer, the last one being the network output.
    pre: Vec<Vec<f64>>,
}

impl Block {
    fn forward(
        arch: &MlpArchitecture,
        params: &[f64],
        points: &[(f64, f64)],
        channels: usize,
    ) -> Block {
        let n = points.len();
        let cols = channels * n;
        let mut input = vec![0.0; 2 * cols];
        for (i, &(x, t)) in points.iter().enumerate() {
            input[i] = x;
            input[cols + i] = t;
            if channels == 4 {
                input[cols + n + i] = 1.0; // ∂t t
                input[2 * n + i] = 1.0; // ∂x x
            }
        }
        let layers = arch.layers();
        let last = layers.len() - 1;
        let mut acts = vec![input];
        let mut pre = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            let mut z = vec![0.0; layer.fan_out * cols];
            gemm(
                layer.fan_out,
                layer.fan_in,
                cols,
                &params[layer.weight_offset..layer.bias_offset],
                (layer.fan_in, 1),
                &acts[l],
                (cols, 1),
                0.0,
                &mut z,
                (cols, 1),
            );
            for o in 0..layer.fan_out {
                let b = params[layer.bias_offset + o];
                for v in &mut z[o * cols..o * cols + n] {
                    *v += b;
                }
            }
            if l < last {
                let mut a = vec![0.0; z.len()];
                for o in 0..layer.fan_out {
                    let zr = &z[o * cols..(o + 1) * cols];
                    let ar = &mut a[o * cols..(o + 1) * cols];
                    for i in 0..n {
                        let [s, d1, d2, _] = arch.activation().derivatives(zr[i]);
                        ar[i] = s;
                        if channels == 4 {
                            let zx = zr[2 * n + i];
                            ar[n + i] = d1 * zr[n + i];
                            ar[2 * n + i] = d1 * zx;
                            ar[3 * n + i] = d2 * zx * zx + d1 * zr[3 * n + i];
                        }
                    }
                }
                acts.push(a);
            }
            pre.push(z);
        }
        Block {
            n,
            channels,
            acts,
            pre,
        }
    }

    fn output(&self) -> &[f64] {
        self.pre.last().expect("at least one layer")
    }

    /// Accumulates `∂/∂w` of `Σᵢ Σ_c out_bar[c·n + i] · out[c·n + i]` into `grad`.
    fn backward(
        &self,
        arch: &MlpArchitecture,
        params: &[f64],
        out_bar: Vec<f64>,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(self.channels, 4);
        let n = self.n;
        let cols = 4 * n;
        let layers = arch.layers();
        let mut zbar = out_bar;
        for (l, layer) in layers.iter().enumerate().rev() {
            let prev = &self.acts[l];
            gemm(
                layer.fan_out,
                cols,
                layer.fan_in,
                &zbar,
                (cols, 1),
                prev,
                (1, cols),
                1.0,
                &mut grad[layer.weight_offset..layer.bias_offset],
                (layer.fan_in, 1),
            );
            for o in 0..layer.fan_out {
                grad[layer.bias_offset + o] += zbar[o * cols..o * cols + n].iter().sum::<f64>();
            }
            if l == 0 {
                break;
            }
            let mut abar = vec![0.0; layer.fan_in * cols];
            gemm(
                layer.fan_in,
                layer.fan_out,
                cols,
                &params[layer.weight_offset..layer.bias_offset],
                (1, layer.fan_in),
                &zbar,
                (cols, 1),
                0.0,
                &mut abar,
                (cols, 1),
            );
            // abar now holds adjoints of hidden layer l-1's output channels; map them to
            // adjoints of its pre-activation channels in place.
            let z = &self.pre[l - 1];
            for j in 0..layer.fan_in {
                let zr = &z[j * cols..(j + 1) * cols];
                let sr = &prev[j * cols..j * cols + n];
                let br = &mut abar[j * cols..(j + 1) * cols];
                for i in 0..n {
                    let [_, d1, d2, d3] = arch.activation().derivatives_from_output(sr[i]);
                    let (zt, zx, zxx) = (zr[n + i], zr[2 * n + i], zr[3 * n + i]);
                    let (av, at, ax, axx) = (br[i], br[n + i], br[2 * n + i], br[3 * n + i]);
                    br[i] = av * d1 + at * d2 * zt + ax * d2 * zx + axx * (d3 * zx * zx + d2 * zxx);
                    br[n + i] = at * d1;
                    br[2 * n + i] = ax * d1 + axx * 2.0 * d2 * zx;
                    br[3 * n + i] = axx * d1;
                }
            }
            zbar = abar;
        }
    }
}

/// Per-point pieces of the residual that do not depend on the network.
struct PointTerms {
    t: f64,
    mask: [f64; 3],
    initial_xx: f64,
    forcing: f64,
}

impl PointTerms {
    fn new(problem: &HeatIbvp, x: f64, t: f64) -> Self {
        PointTerms {
            t,
            mask: problem.mask.jet(x, problem.x_lo, problem.x_hi),
            initial_xx: problem.initial.jet(x)[2],
            forcing: (problem.forcing)(x, t),
        }
    }

    /// Residual `∂ₜu − ∂ₓₓu − f` from network channels `(n, n_t, n_x, n_xx)`.
    fn residual(&self, nn: [f64; 4]) -> f64 {
        let [m, m1, m2] = self.mask;
        let t = self.t;
        let u_t = m * nn[0] + t * m * nn[1];
        let u_xx = self.initial_xx + t * (m2 * nn[0] + 2.0 * m1 * nn[2] + m * nn[3]);
        u_t - u_xx - self.forcing
    }

    /// `∂r/∂(n, n_t, n_x, n_xx)`.
    fn residual_partials(&self) -> [f64; 4] {
        let [m, m1, m2] = self.mask;
        let t = self.t;
        [m - t * m2, t * m, -2.0 * t * m1, -t * m]
    }
}

fn check(arch: &MlpArchitecture, params: &[f64]) -> Result<()> {
    check_len(arch, params.len())?;
    if arch.input_dim() != 2 || arch.output_dim() != 1 {
        return Err(Error::InvalidArchitecture(
            "residuals need a 2-input, 1-output network".into(),
        ));
    }
    Ok(())
}

fn block_residuals(
    problem: &HeatIbvp,
    block: &Block,
    points: &[(f64, f64)],
) -> Vec<(PointTerms, f64)> {
    let n = block.n;
    let out = block.output();
    points
        .iter()
        .enumerate()
        .map(|(i, &(x, t))| {
            let terms = PointTerms::new(problem, x, t);
            let r = terms.residual([out[i], out[n + i], out[2 * n + i], out[3 * n + i]]);
            (terms, r)
        })
        .collect()
}

/// PDE residual at every point.
pub fn residuals(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    params: &[f64],
    points: &[(f64, f64)],
) -> Result<Vec<f64>> {
    check(arch, params)?;
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(BLOCK) {
        let block = Block::forward(arch, params, chunk, 4);
        out.extend(
            block_residuals(problem, &block, chunk)
                .into_iter()
                .map(|(_, r)| r),
        );
    }
    if out.iter().any(|r| !r.is_finite()) {
        return Err(Error::NumericalFailure("non-finite residual".into()));
    }
    Ok(out)
}

/// `(1/N) Σ rᵢ²` and, when `grad` is given, its gradient with respect to the parameters
/// (written into `grad`, overwriting it).
pub fn mean_squared_residual(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    params: &[f64],
    points: &[(f64, f64)],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    check(arch, params)?;
    if points.is_empty() {
        return Err(Error::InvalidConfig("empty residual point set".into()));
    }
    if let Some(g) = grad.as_deref_mut() {
        if g.len() != params.len() {
            return Err(Error::LengthMismatch {
                expected: params.len(),
                actual: g.len(),
            });
        }
        g.fill(0.0);
    }
    let scale = 1.0 / points.len() as f64;
    let mut squares = Vec::with_capacity(points.len());
    for chunk in points.chunks(BLOCK) {
        let block = Block::forward(arch, params, chunk, 4);
        let res = block_residuals(problem, &block, chunk);
        squares.extend(res.iter().map(|(_, r)| r * r));
        if let Some(g) = grad.as_deref_mut() {
            let n = chunk.len();
            let mut out_bar = vec![0.0; 4 * n];
            for (i, (terms, r)) in res.iter().enumerate() {
                let rbar = 2.0 * r * scale;
                for (c, p) in terms.residual_partials().into_iter().enumerate() {
                    out_bar[c * n + i] = rbar * p;
                }
            }
            block.backward(arch, params, out_bar, g);
        }
    }
    let loss = compensated_sum(squares.iter().copied()) * scale;
    if !loss.is_finite() {
        return Err(Error::NumericalFailure("non-finite residual loss".into()));
    }
    if let Some(g) = grad {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite loss gradient".into()));
        }
    }
    Ok(loss)
}

/// Values of the hard-constrained solution at every point (no derivative channels).
pub fn ansatz_values(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    params: &[f64],
    points: &[(f64, f64)],
) -> Result<Vec<f64>> {
    check(arch, params)?;
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(BLOCK) {
        let block = Block::forward(arch, params, chunk, 1);
        let nn = block.output();
        out.extend(chunk.iter().zip(nn).map(|(&(x, t), &v)| {
            let m = problem.mask.eval(x, problem.x_lo, problem.x_hi);
            problem.initial.eval(x) + t * m * v
        }));
    }
    Ok(out)
}
