use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::scalar::Scalar;

/// Primitive recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Input,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddConst,
    MulConst,
    Tanh,
    Sin,
    Cos,
    Exp,
    Powi,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    kind: OpKind,
    arity: u8,
    inputs: [u32; 2],
    partials: [f64; 2],
    value: f64,
}

/// Append-only record of scalar operations.
///
/// Nodes are pushed in evaluation order, so every node's inputs precede it and a single
/// reverse sweep visits each node once. A tape is not `Sync`; each thread builds its own.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an independent variable.
    pub fn input(&self, value: f64) -> Var<'_> {
        self.push(OpKind::Input, 0, [0, 0], [0.0, 0.0], value)
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(OpKind::Const, 0, [0, 0], [0.0, 0.0], value)
    }

    fn push(
        &self,
        kind: OpKind,
        arity: u8,
        inputs: [u32; 2],
        partials: [f64; 2],
        value: f64,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = u32::try_from(nodes.len()).expect("tape exceeds u32::MAX nodes");
        nodes.push(Node {
            kind,
            arity,
            inputs,
            partials,
            value,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn unary<'t>(&'t self, a: Var<'t>, kind: OpKind, value: f64, partial: f64) -> Var<'t> {
        self.push(kind, 1, [a.index, 0], [partial, 0.0], value)
    }

    fn binary<'t>(
        &'t self,
        a: Var<'t>,
        b: Var<'t>,
        kind: OpKind,
        value: f64,
        pa: f64,
        pb: f64,
    ) -> Var<'t> {
        debug_assert!(
            std::ptr::eq(a.tape, b.tape),
            "mixing variables from different tapes"
        );
        self.push(kind, 2, [a.index, b.index], [pa, pb], value)
    }

    /// Adjoints of every node with respect to `output`.
    pub fn adjoints(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[output.index as usize] = 1.0;
        for i in (0..=output.index as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..node.arity as usize {
                adj[node.inputs[k] as usize] += a * node.partials[k];
            }
        }
        adj
    }

    /// First node (in evaluation order) whose value is non-finite.
    pub fn first_non_finite(&self) -> Option<OpKind> {
        self.nodes
            .borrow()
            .iter()
            .find(|n| !n.value.is_finite())
            .map(|n| n.kind)
    }

    /// Kind of the first node whose adjoint is non-finite.
    fn first_non_finite_adjoint(&self, adj: &[f64]) -> Option<OpKind> {
        let nodes = self.nodes.borrow();
        adj.iter()
            .zip(nodes.iter())
            .rev()
            .find(|(a, _)| !a.is_finite())
            .map(|(_, n)| n.kind)
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.index as usize
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.tape
            .binary(self, rhs, OpKind::Add, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.tape
            .binary(self, rhs, OpKind::Sub, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.tape.binary(
            self,
            rhs,
            OpKind::Mul,
            self.value * rhs.value,
            rhs.value,
            self.value,
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.tape
            .binary(self, rhs, OpKind::Div, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.tape.unary(self, OpKind::Neg, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.tape
            .unary(self, OpKind::AddConst, self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.tape
            .unary(self, OpKind::AddConst, self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.tape
            .unary(self, OpKind::MulConst, self.value * rhs, rhs)
    }
}

impl Scalar for Var<'_> {
    fn value(&self) -> f64 {
        self.value
    }

    fn lift(&self, c: f64) -> Self {
        self.tape.constant(c)
    }

    fn tanh(self) -> Self {
        let s = self.value.tanh();
        self.tape.unary(self, OpKind::Tanh, s, 1.0 - s * s)
    }

    fn sin(self) -> Self {
        self.tape
            .unary(self, OpKind::Sin, self.value.sin(), self.value.cos())
    }

    fn cos(self) -> Self {
        self.tape
            .unary(self, OpKind::Cos, self.value.cos(), -self.value.sin())
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.tape.unary(self, OpKind::Exp, e, e)
    }

    fn powi(self, n: i32) -> Self {
        let partial = if n == 0 {
            0.0
        } else {
            f64::from(n) * self.value.powi(n - 1)
        };
        self.tape
            .unary(self, OpKind::Powi, self.value.powi(n), partial)
    }
}

/// Failure of a derivative computation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("numerical failure: non-finite value produced by {op} node")]
    NumericalFailure { op: OpKind },
    #[error("non-finite input at position {index}")]
    NonFiniteInput { index: usize },
    #[error("numerical failure: non-finite {quantity}")]
    NonFiniteDerivative { quantity: &'static str },
}

/// Value and exact gradient of a scalar function of `params`.
///
/// `loss_fn` receives one tape input per parameter and must build its result from the
/// primitives of [`Scalar`].
pub fn grad<F>(loss_fn: F, params: &[f64]) -> Result<(f64, Vec<f64>), AutodiffError>
where
    F: for<'t> FnOnce(&[Var<'t>]) -> Var<'t>,
{
    if let Some(index) = params.iter().position(|p| !p.is_finite()) {
        return Err(AutodiffError::NonFiniteInput { index });
    }
    let tape = Tape::new();
    let inputs: Vec<Var<'_>> = params.iter().map(|&p| tape.input(p)).collect();
    let output = loss_fn(&inputs);
    if let Some(op) = tape.first_non_finite() {
        return Err(AutodiffError::NumericalFailure { op });
    }
    let adj = tape.adjoints(output);
    if let Some(op) = tape.first_non_finite_adjoint(&adj) {
        return Err(AutodiffError::NumericalFailure { op });
    }
    let gradient = inputs.iter().map(|v| adj[v.index()]).collect();
    Ok((output.value, gradient))
}
