//! Scalar reverse-mode tape.
//!
//! Every arithmetic operation on a [`Var`] appends a node holding the local
//! partial derivatives with respect to at most two parents. A single reverse
//! sweep over the node list then accumulates adjoints. Because the partials
//! are themselves produced by ordinary `Var` arithmetic when the caller
//! composes operations (for example forward-mode tangents built from `Var`s),
//! gradients of expressions containing derivatives come out exact.

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};

use crate::net::kernels;

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [usize; 2],
    partials: [f64; 2],
    arity: u8,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push(Node {
            parents: [0, 0],
            partials: [0.0, 0.0],
            arity: 0,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Leaf that is never differentiated against; identical storage to a var.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.var(value)
    }

    fn unary(&self, value: f64, parent: usize, partial: f64) -> Var<'_> {
        let index = self.push(Node {
            parents: [parent, 0],
            partials: [partial, 0.0],
            arity: 1,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn binary(&self, value: f64, parents: [usize; 2], partials: [f64; 2]) -> Var<'_> {
        let index = self.push(Node {
            parents,
            partials,
            arity: 2,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Adjoint of every node with respect to `output`.
    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        debug_assert!(std::ptr::eq(output.tape, self), "variable from a different tape");
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        adjoint[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let node = nodes[i];
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            for k in 0..node.arity as usize {
                adjoint[node.parents[k]] += node.partials[k] * a;
            }
        }
        adjoint
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn tanh(self) -> Self {
        let h = kernels::tanh(self.value);
        self.tape.unary(h, self.index, 1.0 - h * h)
    }

    pub fn sin(self) -> Self {
        self.tape.unary(self.value.sin(), self.index, self.value.cos())
    }

    pub fn cos(self) -> Self {
        self.tape.unary(self.value.cos(), self.index, -self.value.sin())
    }

    pub fn relu(self) -> Self {
        self.tape
            .unary(kernels::relu(self.value), self.index, kernels::step(self.value))
    }

    /// Heaviside step as a constant: its derivative is zero almost everywhere.
    pub fn step(self) -> Self {
        self.tape.constant(kernels::step(self.value))
    }

    pub fn square(self) -> Self {
        self * self
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self.value + rhs.value, [self.index, rhs.index], [1.0, 1.0])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self.value - rhs.value, [self.index, rhs.index], [1.0, -1.0])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self.value * rhs.value, [self.index, rhs.index], [rhs.value, self.value])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(-self.value, self.index, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self.value + rhs, self.index, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self.value * rhs, self.index, rhs)
    }
}
