//! Multilayer perceptron, parameter layout and the hard-constrained ansatz.
//!
//! Parameters live in one flat vector. Layers are stored in order; each layer stores its
//! weight matrix row-major (`fan_out × fan_in`) followed by its bias.

mod checkpoint;
pub mod jet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual2, Scalar, Weighted};
use crate::error::{Error, Result};
use crate::problem::HeatIbvp;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    pub fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    /// Value and first three derivatives at `z`.
    #[inline]
    pub fn derivatives(self, z: f64) -> [f64; 4] {
        match self {
            Activation::Tanh => Self::derivatives_from_output(self, z.tanh()),
        }
    }

    /// Same as [`Activation::derivatives`], recovered from the activation value `σ(z)`.
    pub fn derivatives_from_output(self, s: f64) -> [f64; 4] {
        match self {
            Activation::Tanh => {
                let d1 = 1.0 - s * s;
                let d2 = -2.0 * s * d1;
                let d3 = -2.0 * d1 * d1 + 4.0 * s * s * d1;
                [s, d1, d2, d3]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ArchitectureRepr", into = "ArchitectureRepr")]
pub struct MlpArchitecture {
    input_dim: usize,
    hidden: Vec<usize>,
    output_dim: usize,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchitectureRepr {
    #[serde(default = "two")]
    input_dim: usize,
    hidden: Vec<usize>,
    #[serde(default = "one")]
    output_dim: usize,
    #[serde(default)]
    activation: Activation,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}

impl TryFrom<ArchitectureRepr> for MlpArchitecture {
    type Error = Error;
    fn try_from(r: ArchitectureRepr) -> Result<Self> {
        let mut arch = MlpArchitecture::new(r.input_dim, r.hidden, r.output_dim)?;
        arch.activation = r.activation;
        Ok(arch)
    }
}

impl From<MlpArchitecture> for ArchitectureRepr {
    fn from(a: MlpArchitecture) -> Self {
        ArchitectureRepr {
            input_dim: a.input_dim,
            hidden: a.hidden,
            output_dim: a.output_dim,
            activation: a.activation,
        }
    }
}

/// Position of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn end(&self) -> usize {
        self.bias_offset + self.fan_out
    }
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "all widths must be at least 1 (input {input_dim}, hidden {hidden:?}, output {output_dim})"
            )));
        }
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
            activation: Activation::Tanh,
        })
    }

    /// Scalar network of `(x, t)` with the given hidden widths.
    pub fn space_time(hidden: &[usize]) -> Result<Self> {
        Self::new(2, hidden.to_vec(), 1)
    }

    /// Three hidden layers of 100 units: 20,601 parameters.
    pub fn default_heat() -> Self {
        Self::space_time(&[100, 100, 100]).expect("static architecture")
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.output_dim);
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset = shape.end();
                shape
            })
            .collect()
    }

    fn check_space_time(&self) -> Result<()> {
        if self.input_dim != 2 || self.output_dim != 1 {
            return Err(Error::InvalidArchitecture(format!(
                "expected a 2-input, 1-output network, got {} -> {}",
                self.input_dim, self.output_dim
            )));
        }
        Ok(())
    }
}

/// Number of weights and biases: `Σ (fan_in + 1) · fan_out`.
pub fn param_count(arch: &MlpArchitecture) -> usize {
    arch.layers()
        .iter()
        .map(|l| (l.fan_in + 1) * l.fan_out)
        .sum()
}

/// Flat, finite parameter vector whose length matches an architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(arch: &MlpArchitecture, values: Vec<f64>) -> Result<Self> {
        let expected = param_count(arch);
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Self::from_values(values)
    }

    /// Wraps a vector without an architecture; only finiteness is checked.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParameter { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(arch: &MlpArchitecture) -> Self {
        Self(vec![0.0; param_count(arch)])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Uniform Glorot weights `±√(6/(fan_in+fan_out))`, zero biases.
pub fn init_params(arch: &MlpArchitecture, seed: u64) -> ParamVector {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values = vec![0.0; param_count(arch)];
    for layer in arch.layers() {
        let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut values[layer.weight_offset..layer.bias_offset] {
            *w = rng.random_range(-limit..limit);
        }
    }
    ParamVector(values)
}

fn check_len(arch: &MlpArchitecture, len: usize) -> Result<()> {
    let expected = param_count(arch);
    if len != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: len,
        });
    }
    Ok(())
}

pub(crate) fn check_space_time_params(arch: &MlpArchitecture, len: usize) -> Result<()> {
    arch.check_space_time()?;
    check_len(arch, len)
}

/// Forward pass over arbitrary input and weight scalar types.
pub fn forward_generic<S, W>(arch: &MlpArchitecture, params: &[W], inputs: &[S]) -> Result<Vec<S>>
where
    S: Weighted<W>,
    W: Copy,
{
    check_len(arch, params.len())?;
    if inputs.len() != arch.input_dim {
        return Err(Error::InvalidArchitecture(format!(
            "network takes {} inputs, got {}",
            arch.input_dim,
            inputs.len()
        )));
    }
    let layers = arch.layers();
    let last = layers.len() - 1;
    let mut activations = inputs.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let mut next = Vec::with_capacity(layer.fan_out);
        for o in 0..layer.fan_out {
            let row = &params[layer.weight_offset + o * layer.fan_in..][..layer.fan_in];
            let mut z = activations[0].mul_weight(row[0]);
            for (a, &w) in activations[1..].iter().zip(&row[1..]) {
                z = z + a.mul_weight(w);
            }
            z = z.add_weight(params[layer.bias_offset + o]);
            next.push(if l == last {
                z
            } else {
                arch.activation.apply(z)
            });
        }
        activations = next;
    }
    Ok(activations)
}

/// `NN_w(x, t)` for a scalar space-time network.
pub fn mlp_forward(arch: &MlpArchitecture, params: &ParamVector, x: f64, t: f64) -> Result<f64> {
    arch.check_space_time()?;
    Ok(forward_generic(arch, params.as_slice(), &[x, t])?[0])
}

/// Multiplicative factor that vanishes on the spatial boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMask {
    /// `(x − x_lo)(x − x_hi) / L²`, zero at both ends of the domain.
    #[default]
    Normalized,
    /// `x (x − 1)` regardless of the domain. Only vanishes at `x = 0` and `x = 1`.
    Literal,
}

impl BoundaryMask {
    pub fn eval<S: Scalar>(self, x: S, x_lo: f64, x_hi: f64) -> S {
        match self {
            BoundaryMask::Normalized => {
                let len = x_hi - x_lo;
                (x - x_lo) * (x - x_hi) * (1.0 / (len * len))
            }
            BoundaryMask::Literal => x * (x - 1.0),
        }
    }

    /// `(m, m', m'')` at `x`.
    pub fn jet(self, x: f64, x_lo: f64, x_hi: f64) -> [f64; 3] {
        let d = self.eval(Dual2::seed(x), x_lo, x_hi);
        [d.value, d.d_first, d.d_second]
    }
}

/// `u(x, t, w) = u₀(x) + t · m(x) · NN_w(x, t)` over any scalar type.
pub fn hard_constrained_generic<S, W>(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    params: &[W],
    x: S,
    t: S,
) -> Result<S>
where
    S: Weighted<W>,
    W: Copy,
{
    arch.check_space_time()?;
    let nn = forward_generic(arch, params, &[x, t])?[0];
    let mask = problem.mask.eval(x, problem.x_lo, problem.x_hi);
    Ok(problem.initial.eval(x) + t * mask * nn)
}

/// Hard-constrained PINN solution at `(x, t)`.
pub fn hard_constrained_u(
    problem: &HeatIbvp,
    arch: &MlpArchitecture,
    params: &ParamVector,
    x: f64,
    t: f64,
) -> Result<f64> {
    hard_constrained_generic(problem, arch, params.as_slice(), x, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::default_heat_problem;
    use std::f64::consts::PI;

    #[test]
    fn parameter_counts() {
        assert_eq!(param_count(&MlpArchitecture::default_heat()), 20_601);
        assert_eq!(
            param_count(&MlpArchitecture::space_time(&[50, 50]).unwrap()),
            2_751
        );
        assert_eq!(param_count(&MlpArchitecture::new(1, vec![], 1).unwrap()), 2);
    }

    #[test]
    fn zero_width_rejected() {
        assert!(MlpArchitecture::space_time(&[10, 0]).is_err());
        assert!(MlpArchitecture::new(0, vec![3], 1).is_err());
    }

    #[test]
    fn layers_tile_the_vector() {
        let arch = MlpArchitecture::space_time(&[7, 3]).unwrap();
        let layers = arch.layers();
        assert_eq!(layers[0].weight_offset, 0);
        for pair in layers.windows(2) {
            assert_eq!(pair[0].end(), pair[1].weight_offset);
        }
        assert_eq!(layers.last().unwrap().end(), param_count(&arch));
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let arch = MlpArchitecture::default_heat();
        let a = init_params(&arch, 7);
        let b = init_params(&arch, 7);
        let c = init_params(&arch, 8);
        assert_eq!(a, b);
        assert_eq!(a.len(), 20_601);
        let weights: Vec<usize> = arch
            .layers()
            .iter()
            .flat_map(|l| l.weight_offset..l.bias_offset)
            .collect();
        let differing = weights
            .iter()
            .filter(|&&i| a.as_slice()[i] != c.as_slice()[i])
            .count();
        assert!(differing as f64 >= 0.99 * weights.len() as f64);
        for l in arch.layers() {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            assert!(a.as_slice()[l.weight_offset..l.bias_offset]
                .iter()
                .all(|w| w.abs() <= limit));
            assert!(a.as_slice()[l.bias_offset..l.end()]
                .iter()
                .all(|&b| b == 0.0));
        }
    }

    #[test]
    fn zero_network_is_zero() {
        let arch = MlpArchitecture::space_time(&[5, 4]).unwrap();
        let p = ParamVector::zeros(&arch);
        assert_eq!(mlp_forward(&arch, &p, 0.3, 1.7).unwrap(), 0.0);
    }

    #[test]
    fn single_hidden_unit_closed_form() {
        let arch = MlpArchitecture::space_time(&[1]).unwrap();
        let (w1, w2, b, v, c) = (0.7, -1.3, 0.2, 2.5, -0.4);
        let p = ParamVector::new(&arch, vec![w1, w2, b, v, c]).unwrap();
        for &(x, t) in &[(0.0, 0.0), (0.5, 1.0), (1.9, 0.1), (-1.0, 2.0), (1.3, 1.3)] {
            let expected = v * f64::tanh(w1 * x + w2 * t + b) + c;
            assert!((mlp_forward(&arch, &p, x, t).unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let arch = MlpArchitecture::space_time(&[3]).unwrap();
        let short = ParamVector::from_values(vec![0.0; 4]).unwrap();
        assert!(matches!(
            mlp_forward(&arch, &short, 0.0, 0.0),
            Err(Error::LengthMismatch {
                expected: 13,
                actual: 4
            })
        ));
    }

    #[test]
    fn forward_is_continuous() {
        let arch = MlpArchitecture::space_time(&[16, 16]).unwrap();
        let p = init_params(&arch, 3);
        let a = mlp_forward(&arch, &p, 0.7, 0.4).unwrap();
        let b = mlp_forward(&arch, &p, 0.7 + 1e-9, 0.4).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn zero_network_ansatz_is_initial_condition() {
        let problem = default_heat_problem();
        let arch = MlpArchitecture::space_time(&[4]).unwrap();
        let p = ParamVector::zeros(&arch);
        for &(x, t) in &[(0.25, 0.5), (1.5, 2.0), (0.9, 0.0)] {
            let u = hard_constrained_u(&problem, &arch, &p, x, t).unwrap();
            assert_eq!(u, (PI * x).sin());
        }
    }

    #[test]
    fn literal_mask_misses_right_boundary() {
        let m = BoundaryMask::Literal.jet(2.0, 0.0, 2.0);
        assert_eq!(m[0], 2.0);
        let n = BoundaryMask::Normalized.jet(2.0, 0.0, 2.0);
        assert_eq!(n, [0.0, 0.5, 0.5]);
    }
}
