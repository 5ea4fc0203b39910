//! Reverse-mode automatic differentiation on a dynamically recorded tape.
//!
//! Every operation on a [`Var`] appends a node holding its value and the
//! local partial derivative with respect to each predecessor. Nodes only
//! reference earlier nodes, so [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use fcstress_core::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = x.square();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x), 6.0);
//! ```
//!
//! Domain violations (log of a non-positive number, division by zero) do
//! not panic. The offending node evaluates to NaN, the tape remembers the
//! first violation, and `backward` reports it.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::special;

/// Operation tag recorded on each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Input,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Softplus,
    Square,
    LnGamma,
    Sum,
    Dot,
    Scale,
    Shift,
    Custom,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    value: f64,
    op: Op,
    edges_start: usize,
    edges_end: usize,
}

#[derive(Debug, Default)]
struct Inner {
    nodes: Vec<Node>,
    /// `(predecessor index, local partial)` for every node, concatenated.
    edges: Vec<(usize, f64)>,
    fault: Option<(&'static str, f64)>,
}

#[derive(Debug, Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value)
    }
}

/// Adjoints of every node reachable backwards from an output.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    /// Adjoint of `var`; zero when the output does not depend on it.
    pub fn get(&self, var: Var<'_>) -> f64 {
        self.adjoints.get(var.index).copied().unwrap_or(0.0)
    }

    pub fn wrt(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|&v| self.get(v)).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(nodes * 4),
                fault: None,
            }),
        }
    }

    /// Drops all nodes, keeping the allocations.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.nodes.clear();
        inner.edges.clear();
        inner.fault = None;
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn op(&self, var: Var<'_>) -> Op {
        self.inner.borrow().nodes[var.index].op
    }

    /// Forward value stored for node `index`.
    pub fn value_at(&self, index: usize) -> Option<f64> {
        self.inner.borrow().nodes.get(index).map(|n| n.value)
    }

    /// First domain violation recorded on this tape, if any.
    pub fn fault(&self) -> Option<Error> {
        self.inner
            .borrow()
            .fault
            .map(|(primitive, argument)| Error::Domain { primitive, argument })
    }

    /// An independent input (leaf) node.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(Op::Input, value, std::iter::empty())
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const, value, std::iter::empty())
    }

    /// Records a node with caller-supplied value and local partials.
    ///
    /// Predecessors are raw node indices. Indices must refer to earlier
    /// nodes; [`Tape::backward`] rejects the graph otherwise.
    pub fn push_node(&self, value: f64, partials: &[(usize, f64)]) -> Var<'_> {
        self.push(Op::Custom, value, partials.iter().copied())
    }

    fn push(&self, op: Op, value: f64, partials: impl Iterator<Item = (usize, f64)>) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let edges_start = inner.edges.len();
        inner.edges.extend(partials);
        let edges_end = inner.edges.len();
        let index = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            op,
            edges_start,
            edges_end,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn fail(&self, primitive: &'static str, argument: f64) {
        let mut inner = self.inner.borrow_mut();
        if inner.fault.is_none() {
            inner.fault = Some((primitive, argument));
        }
    }

    /// `Σ xs`.
    pub fn sum<'t>(&'t self, xs: &[Var<'t>]) -> Var<'t> {
        let value = xs.iter().map(|v| v.value).sum();
        self.push(Op::Sum, value, xs.iter().map(|v| (v.index, 1.0)))
    }

    /// `Σ a_i b_i` as one node.
    pub fn dot<'t>(&'t self, a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        assert_eq!(a.len(), b.len(), "dot: length mismatch");
        let value = a.iter().zip(b).map(|(x, y)| x.value * y.value).sum();
        let edges = a
            .iter()
            .zip(b)
            .flat_map(|(x, y)| [(x.index, y.value), (y.index, x.value)]);
        self.push(Op::Dot, value, edges)
    }

    /// `bias + Σ w_i x_i` for constant weights.
    pub fn affine<'t>(&'t self, weights: &[f64], xs: &[Var<'t>], bias: f64) -> Var<'t> {
        assert_eq!(weights.len(), xs.len(), "affine: length mismatch");
        let value = bias + weights.iter().zip(xs).map(|(w, x)| w * x.value).sum::<f64>();
        self.push(Op::Dot, value, weights.iter().zip(xs).map(|(&w, x)| (x.index, w)))
    }

    /// Reverse sweep from a scalar output.
    ///
    /// Fails if a domain violation was recorded or if a node refers to a
    /// node that is not strictly earlier on the tape.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        if let Some(err) = self.fault() {
            return Err(err);
        }
        let inner = self.inner.borrow();
        let mut adjoints = vec![0.0; output.index + 1];
        adjoints[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let node = inner.nodes[i];
            let edges = &inner.edges[node.edges_start..node.edges_end];
            if let Some(&(parent, _)) = edges.iter().find(|(p, _)| *p >= i) {
                return Err(Error::CyclicGraph { node: i, parent });
            }
            let a = adjoints[i];
            if a == 0.0 {
                continue;
            }
            for &(parent, partial) in edges {
                adjoints[parent] += a * partial;
            }
        }
        Ok(Gradients { adjoints })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.index
    }

    fn unary(self, op: Op, value: f64, partial: f64) -> Var<'t> {
        self.tape.push(op, value, std::iter::once((self.index, partial)))
    }

    fn binary(self, other: Var<'t>, op: Op, value: f64, da: f64, db: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        self.tape
            .push(op, value, [(self.index, da), (other.index, db)].into_iter())
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value.exp();
        self.unary(Op::Exp, e, e)
    }

    pub fn ln(self) -> Var<'t> {
        let x = self.value;
        if !(x > 0.0) {
            self.tape.fail("ln", x);
            return self.unary(Op::Ln, f64::NAN, f64::NAN);
        }
        self.unary(Op::Ln, x.ln(), 1.0 / x)
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.value.tanh();
        self.unary(Op::Tanh, t, 1.0 - t * t)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let s = special::sigmoid(self.value);
        self.unary(Op::Sigmoid, s, s * (1.0 - s))
    }

    pub fn softplus(self) -> Var<'t> {
        let x = self.value;
        self.unary(Op::Softplus, special::softplus(x), special::sigmoid(x))
    }

    pub fn square(self) -> Var<'t> {
        let x = self.value;
        self.unary(Op::Square, x * x, 2.0 * x)
    }

    pub fn ln_gamma(self) -> Var<'t> {
        let x = self.value;
        if !(x > 0.0) {
            self.tape.fail("ln_gamma", x);
            return self.unary(Op::LnGamma, f64::NAN, f64::NAN);
        }
        self.unary(Op::LnGamma, special::ln_gamma(x), special::digamma(x))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value, rhs.value);
        if b == 0.0 {
            self.tape.fail("div", b);
            return self.binary(rhs, Op::Div, f64::NAN, f64::NAN, f64::NAN);
        }
        self.binary(rhs, Op::Div, a / b, 1.0 / b, -a / (b * b))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Shift, self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Shift, self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Scale, self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        if rhs == 0.0 {
            self.tape.fail("div", rhs);
            return self.unary(Op::Div, f64::NAN, f64::NAN);
        }
        self.unary(Op::Scale, self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(Op::Shift, self - rhs.value, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

/// Central-difference gradient `(f(x+h e_i) - f(x-h e_i)) / 2h`.
pub fn finite_diff_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
