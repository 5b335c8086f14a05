//! Differentiation of the network.
//!
//! Two routes compute the same quantities:
//!
//! * [`eval_with_input_partials`] and [`grad_loss`] run a generic evaluation
//!   over any [`Real`] scalar. Input partials `∂u/∂θ` and `∂u/∂t` are carried
//!   as forward-mode tangents; instantiating the scalar with tape variables
//!   nests those tangents inside reverse mode, so a loss containing input
//!   partials is differentiated exactly with respect to every parameter.
//! * [`BatchEngine`] performs the same nested computation on whole batches
//!   with dense matrix products and a hand-written layer-level reverse pass.
//!   Training uses it; the generic route and finite differences check it.

mod batch;
pub mod tape;

use std::ops::{Add, Mul, Neg, Sub};

pub use batch::BatchEngine;
pub use tape::{Tape, Var};

use crate::error::{Error, Result};
use crate::net::{kernels, ActivationKind, NetConfig, ParamSet};

/// Scalar type the generic network evaluation runs over.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn value(&self) -> f64;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn relu(self) -> Self;
    /// Heaviside step with zero derivative.
    fn step(self) -> Self;
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn tanh(self) -> Self {
        kernels::tanh(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn relu(self) -> Self {
        kernels::relu(self)
    }
    fn step(self) -> Self {
        kernels::step(self)
    }
}

impl Real for Var<'_> {
    fn value(&self) -> f64 {
        Var::value(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn sin(self) -> Self {
        Var::sin(self)
    }
    fn cos(self) -> Self {
        Var::cos(self)
    }
    fn relu(self) -> Self {
        Var::relu(self)
    }
    fn step(self) -> Self {
        Var::step(self)
    }
}

/// `u` together with its input partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials<S> {
    pub u: S,
    pub du_dtheta: S,
    pub du_dt: S,
}

pub type ValueWithPartials = Partials<f64>;

/// One entry per trainable parameter, in the canonical [`ParamSet`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `(σ(z), σ'(z))`.
#[inline]
fn activate<S: Real>(z: S, kind: ActivationKind) -> (S, S) {
    match kind {
        ActivationKind::Tanh => {
            let h = z.tanh();
            (h, (h * h) * -1.0 + 1.0)
        }
        ActivationKind::Sin => (z.sin(), z.cos()),
        ActivationKind::Relu => (z.relu(), z.step()),
    }
}

#[inline]
fn dot<S: Real>(row: &[S], h: &[S]) -> S {
    let mut acc = row[0] * h[0];
    for (w, x) in row[1..].iter().zip(&h[1..]) {
        acc = acc + *w * *x;
    }
    acc
}

fn split_layer<S>(weights: &[S], offset: usize, n_in: usize, n_out: usize) -> (&[S], &[S]) {
    let w = &weights[offset..offset + n_in * n_out];
    let b = &weights[offset + n_in * n_out..offset + n_in * n_out + n_out];
    (w, b)
}

fn ensure_finite<S: Real>(values: &[S], layer: usize) -> Result<()> {
    if values.iter().all(|v| v.value().is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteLayer { layer })
    }
}

/// Generic forward pass. `weights` holds all parameters in canonical order.
pub fn eval_value<S: Real>(
    weights: &[S],
    sizes: &[usize],
    activation: ActivationKind,
    theta: f64,
    t: f64,
) -> Result<S> {
    if !theta.is_finite() || !t.is_finite() {
        return Err(Error::Domain {
            what: "network input",
            value: if theta.is_finite() { t } else { theta },
        });
    }
    let n_layers = sizes.len() - 1;
    let mut offset = 0;
    let mut h: Vec<S> = Vec::new();
    for layer in 0..n_layers {
        let (n_in, n_out) = (sizes[layer], sizes[layer + 1]);
        let (w, b) = split_layer(weights, offset, n_in, n_out);
        let last = layer + 1 == n_layers;
        let mut next = Vec::with_capacity(n_out);
        for r in 0..n_out {
            let row = &w[r * n_in..(r + 1) * n_in];
            let acc = if layer == 0 {
                row[0] * theta + row[1] * t
            } else {
                dot(row, &h)
            };
            let z = acc + b[r];
            next.push(if last { z } else { activate(z, activation).0 });
        }
        ensure_finite(&next, layer + 1)?;
        h = next;
        offset += n_in * n_out + n_out;
    }
    Ok(h[0])
}

/// Generic forward pass with two forward-mode tangent channels (θ and t).
/// The value channel performs exactly the operations of [`eval_value`].
pub fn eval_partials<S: Real>(
    weights: &[S],
    sizes: &[usize],
    activation: ActivationKind,
    theta: f64,
    t: f64,
) -> Result<Partials<S>> {
    if !theta.is_finite() || !t.is_finite() {
        return Err(Error::Domain {
            what: "network input",
            value: if theta.is_finite() { t } else { theta },
        });
    }
    let n_layers = sizes.len() - 1;
    let mut offset = 0;
    let mut h: Vec<S> = Vec::new();
    let mut h_theta: Vec<S> = Vec::new();
    let mut h_t: Vec<S> = Vec::new();
    for layer in 0..n_layers {
        let (n_in, n_out) = (sizes[layer], sizes[layer + 1]);
        let (w, b) = split_layer(weights, offset, n_in, n_out);
        let last = layer + 1 == n_layers;
        let mut next = Vec::with_capacity(n_out);
        let mut next_theta = Vec::with_capacity(n_out);
        let mut next_t = Vec::with_capacity(n_out);
        for r in 0..n_out {
            let row = &w[r * n_in..(r + 1) * n_in];
            let (acc, dz_theta, dz_t) = if layer == 0 {
                (row[0] * theta + row[1] * t, row[0], row[1])
            } else {
                (dot(row, &h), dot(row, &h_theta), dot(row, &h_t))
            };
            let z = acc + b[r];
            if last {
                next.push(z);
                next_theta.push(dz_theta);
                next_t.push(dz_t);
            } else {
                let (a, d) = activate(z, activation);
                next.push(a);
                next_theta.push(d * dz_theta);
                next_t.push(d * dz_t);
            }
        }
        ensure_finite(&next, layer + 1)?;
        ensure_finite(&next_theta, layer + 1)?;
        ensure_finite(&next_t, layer + 1)?;
        h = next;
        h_theta = next_theta;
        h_t = next_t;
        offset += n_in * n_out + n_out;
    }
    Ok(Partials {
        u: h[0],
        du_dtheta: h_theta[0],
        du_dt: h_t[0],
    })
}

/// `(u, ∂u/∂θ, ∂u/∂t)` at one point; exact derivatives of [`crate::net::forward`].
pub fn eval_with_input_partials(
    params: &ParamSet,
    config: &NetConfig,
    theta: f64,
    t: f64,
) -> Result<ValueWithPartials> {
    params.check(config)?;
    eval_partials(params.as_slice(), params.sizes(), config.activation, theta, t)
}

/// The network's parameters recorded on a tape.
pub struct TapeNet<'t> {
    tape: &'t Tape,
    params: Vec<Var<'t>>,
    sizes: Vec<usize>,
    activation: ActivationKind,
}

impl<'t> TapeNet<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn params(&self) -> &[Var<'t>] {
        &self.params
    }

    pub fn constant(&self, value: f64) -> Var<'t> {
        self.tape.constant(value)
    }

    pub fn value(&self, theta: f64, t: f64) -> Result<Var<'t>> {
        eval_value(&self.params, &self.sizes, self.activation, theta, t)
    }

    pub fn with_partials(&self, theta: f64, t: f64) -> Result<Partials<Var<'t>>> {
        eval_partials(&self.params, &self.sizes, self.activation, theta, t)
    }
}

/// Value and exact parameter gradient of a scalar loss built on a [`TapeNet`].
///
/// The closure may evaluate the network any number of times, including with
/// input partials; all of it is differentiated.
pub fn grad_loss<F>(params: &ParamSet, config: &NetConfig, loss_fn: F) -> Result<(f64, GradientVector)>
where
    F: for<'t> FnOnce(&TapeNet<'t>) -> Result<Var<'t>>,
{
    params.check(config)?;
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.as_slice().iter().map(|&p| tape.var(p)).collect();
    let net = TapeNet {
        tape: &tape,
        params: vars,
        sizes: params.sizes().to_vec(),
        activation: config.activation,
    };
    let loss = loss_fn(&net)?;
    let value = loss.value();
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "loss", index: 0 });
    }
    let adjoint = tape.gradient(loss);
    let grad: Vec<f64> = net.params.iter().map(|v| adjoint[v.index()]).collect();
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            index,
        });
    }
    Ok((value, GradientVector(grad)))
}
