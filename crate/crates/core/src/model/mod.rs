//! Kuramoto phase-density physics: initial data, the nonlocal velocity, the
//! strong-form residual and the loss terms built from them.
//!
//! The density `u(θ, t)` on the circle obeys
//! `∂t u + ∂θ (V[u] u) = 0` with `V[u](θ, t) = -K ∫ sin(θ - φ) u(φ, t) dφ`.
//! The integral is replaced by a left-endpoint Riemann sum on a fixed uniform
//! grid of `N_q` nodes; because the kernel is a trigonometric polynomial of
//! degree one, that sum is exact for any density whose Fourier content is
//! below degree `N_q - 1`.

mod objective;

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use objective::{LossParts, LossWeights, PinnObjective, ResidualTerms};

use crate::diff::{self, Partials, Real, TapeNet, Var};
use crate::error::{Error, Result};
use crate::net::{NetConfig, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialConditionKind {
    /// Parabolic bump `6/π³ (3π/2 - θ)(θ - π/2)` on `[π/2, 3π/2]`, zero elsewhere.
    Polynomial,
    /// Two mollified point masses at `3π/4` and `5π/4` (weight 1/4 each) on top
    /// of a plateau of height 1/2 over `[π/2, 3π/2)`.
    Dirac,
    /// `2/(3π)` on `[π/2, 3π/2]`, `1/(3π)` elsewhere.
    Piecewise,
}

impl InitialConditionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InitialConditionKind::Polynomial => "poly",
            InitialConditionKind::Dirac => "dirac",
            InitialConditionKind::Piecewise => "piecewise",
        }
    }
}

impl fmt::Display for InitialConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitialConditionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poly" | "polynomial" => Ok(InitialConditionKind::Polynomial),
            "dirac" => Ok(InitialConditionKind::Dirac),
            "piecewise" => Ok(InitialConditionKind::Piecewise),
            other => Err(Error::config(format!(
                "unknown initial condition `{other}` (expected poly, dirac or piecewise)"
            ))),
        }
    }
}

pub const DEFAULT_COUPLING: f64 = 1.0;
pub const DEFAULT_HORIZON: f64 = 1.0;
pub const DEFAULT_MOLLIFIER: f64 = PI / 32.0;

const POLY_SCALE: f64 = 6.0 / (PI * PI * PI);
const DIRAC_CENTERS: [f64; 2] = [3.0 * PI / 4.0, 5.0 * PI / 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Coupling strength `K`.
    pub coupling: f64,
    /// Final time `T`.
    pub horizon: f64,
    pub ic: InitialConditionKind,
    /// Mollifier half-width `ε` (Dirac initial data only).
    pub mollifier: f64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            coupling: DEFAULT_COUPLING,
            horizon: DEFAULT_HORIZON,
            ic: InitialConditionKind::Polynomial,
            mollifier: DEFAULT_MOLLIFIER,
        }
    }
}

fn overlap(lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    (hi.min(b) - lo.max(a)).max(0.0)
}

impl ProblemSpec {
    pub fn with_ic(ic: InitialConditionKind) -> Self {
        ProblemSpec {
            ic,
            ..ProblemSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coupling > 0.0 && self.coupling.is_finite()) {
            return Err(Error::config(format!(
                "coupling K must be positive, got {}",
                self.coupling
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config(format!(
                "final time T must be positive, got {}",
                self.horizon
            )));
        }
        if self.ic == InitialConditionKind::Dirac && !(self.mollifier > 0.0 && self.mollifier < PI / 4.0) {
            return Err(Error::config(format!(
                "mollifier width must lie in (0, π/4), got {}",
                self.mollifier
            )));
        }
        Ok(())
    }

    /// Exact integral of the initial density over `[lo, hi] ⊆ [0, 2π]`.
    pub fn ic_integral(&self, lo: f64, hi: f64) -> f64 {
        let (a, b) = (PI / 2.0, 3.0 * PI / 2.0);
        match self.ic {
            InitialConditionKind::Polynomial => {
                // In x = θ - π the density is c (π²/4 - x²) on |x| ≤ π/2.
                let x0 = (lo - PI).clamp(-PI / 2.0, PI / 2.0);
                let x1 = (hi - PI).clamp(-PI / 2.0, PI / 2.0);
                let anti = |x: f64| POLY_SCALE * (PI * PI / 4.0 * x - x * x * x / 3.0);
                anti(x1) - anti(x0)
            }
            InitialConditionKind::Piecewise => {
                let inside = overlap(lo, hi, a, b);
                2.0 / (3.0 * PI) * inside + 1.0 / (3.0 * PI) * ((hi - lo) - inside)
            }
            InitialConditionKind::Dirac => {
                let eps = self.mollifier;
                let bumps: f64 = DIRAC_CENTERS
                    .iter()
                    .map(|&c| overlap(lo, hi, c - eps, c + eps) / (2.0 * eps))
                    .sum();
                0.25 * bumps + 0.5 * overlap(lo, hi, a, b)
            }
        }
    }

    /// Mean of the initial density over a cell.
    pub fn ic_cell_average(&self, lo: f64, hi: f64) -> f64 {
        self.ic_integral(lo, hi) / (hi - lo)
    }

    /// `∫₀^{2π} u₀`.
    pub fn ic_mass(&self) -> f64 {
        self.ic_integral(0.0, TAU)
    }
}

/// Pointwise initial density `u₀(θ)`, `θ ∈ [0, 2π]`.
pub fn initial_condition(spec: &ProblemSpec, theta: f64) -> Result<f64> {
    if !(0.0..=TAU).contains(&theta) {
        return Err(Error::Domain {
            what: "initial-condition angle",
            value: theta,
        });
    }
    let (a, b) = (PI / 2.0, 3.0 * PI / 2.0);
    Ok(match spec.ic {
        InitialConditionKind::Polynomial => {
            if (a..=b).contains(&theta) {
                POLY_SCALE * (b - theta) * (theta - a)
            } else {
                0.0
            }
        }
        InitialConditionKind::Piecewise => {
            if (a..=b).contains(&theta) {
                2.0 / (3.0 * PI)
            } else {
                1.0 / (3.0 * PI)
            }
        }
        InitialConditionKind::Dirac => {
            let eps = spec.mollifier;
            let delta = |c: f64| {
                if (theta - c).abs() < eps {
                    1.0 / (2.0 * eps)
                } else {
                    0.0
                }
            };
            let heaviside = |x: f64| if x >= 0.0 { 1.0 } else { 0.0 };
            0.25 * (delta(DIRAC_CENTERS[0]) + delta(DIRAC_CENTERS[1]))
                + 0.5 * heaviside(theta - a) * (1.0 - heaviside(theta - b))
        }
    })
}

/// Uniform left-endpoint nodes `φ_j = j Δφ` on `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    step: f64,
}

impl QuadratureRule {
    pub fn uniform(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::config("quadrature needs at least one node"));
        }
        let step = TAU / count as f64;
        Ok(QuadratureRule {
            nodes: (0..count).map(|j| j as f64 * step).collect(),
            step,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Something that can be evaluated like the network: a density and its
/// input partials, over some scalar type.
pub trait Field {
    type Scalar: Real;
    fn value(&self, theta: f64, t: f64) -> Result<Self::Scalar>;
    fn with_partials(&self, theta: f64, t: f64) -> Result<Partials<Self::Scalar>>;
    fn constant(&self, c: f64) -> Self::Scalar;
}

/// The network evaluated in plain `f64`.
#[derive(Debug, Clone, Copy)]
pub struct NetField<'a> {
    pub params: &'a ParamSet,
    pub config: &'a NetConfig,
}

impl<'a> NetField<'a> {
    pub fn new(params: &'a ParamSet, config: &'a NetConfig) -> Result<Self> {
        params.check(config)?;
        Ok(NetField { params, config })
    }
}

impl Field for NetField<'_> {
    type Scalar = f64;
    fn value(&self, theta: f64, t: f64) -> Result<f64> {
        diff::eval_value(
            self.params.as_slice(),
            self.params.sizes(),
            self.config.activation,
            theta,
            t,
        )
    }
    fn with_partials(&self, theta: f64, t: f64) -> Result<Partials<f64>> {
        diff::eval_partials(
            self.params.as_slice(),
            self.params.sizes(),
            self.config.activation,
            theta,
            t,
        )
    }
    fn constant(&self, c: f64) -> f64 {
        c
    }
}

impl<'t> Field for TapeNet<'t> {
    type Scalar = Var<'t>;
    fn value(&self, theta: f64, t: f64) -> Result<Var<'t>> {
        TapeNet::value(self, theta, t)
    }
    fn with_partials(&self, theta: f64, t: f64) -> Result<Partials<Var<'t>>> {
        TapeNet::with_partials(self, theta, t)
    }
    fn constant(&self, c: f64) -> Var<'t> {
        TapeNet::constant(self, c)
    }
}

/// Analytic density given by closures; used for mock evaluations.
pub struct FnField<U, P> {
    value: U,
    partials: P,
}

impl<U, P> FnField<U, P>
where
    U: Fn(f64, f64) -> f64,
    P: Fn(f64, f64) -> (f64, f64),
{
    /// `partials(θ, t)` returns `(∂θ u, ∂t u)`.
    pub fn new(value: U, partials: P) -> Self {
        FnField { value, partials }
    }
}

impl<U, P> Field for FnField<U, P>
where
    U: Fn(f64, f64) -> f64,
    P: Fn(f64, f64) -> (f64, f64),
{
    type Scalar = f64;
    fn value(&self, theta: f64, t: f64) -> Result<f64> {
        Ok((self.value)(theta, t))
    }
    fn with_partials(&self, theta: f64, t: f64) -> Result<Partials<f64>> {
        let (du_dtheta, du_dt) = (self.partials)(theta, t);
        Ok(Partials {
            u: (self.value)(theta, t),
            du_dtheta,
            du_dt,
        })
    }
    fn constant(&self, c: f64) -> f64 {
        c
    }
}

/// Discrete velocity and its θ-derivative at `(θ, t)`:
/// `V = -K Σ sin(θ - φ_j) u(φ_j, t) Δφ`, `∂θV = -K Σ cos(θ - φ_j) u(φ_j, t) Δφ`.
pub fn velocity_and_slope<F: Field>(
    field: &F,
    spec: &ProblemSpec,
    quad: &QuadratureRule,
    theta: f64,
    t: f64,
) -> Result<(F::Scalar, F::Scalar)> {
    let scale = -spec.coupling * quad.step();
    let mut v = field.constant(0.0);
    let mut dv = field.constant(0.0);
    for &phi in quad.nodes() {
        let u = field.value(phi, t)?;
        let (s, c) = (theta - phi).sin_cos();
        v = v + u * s;
        dv = dv + u * c;
    }
    Ok((v * scale, dv * scale))
}

pub fn velocity_of<F: Field>(
    field: &F,
    spec: &ProblemSpec,
    quad: &QuadratureRule,
    theta: f64,
    t: f64,
) -> Result<F::Scalar> {
    Ok(velocity_and_slope(field, spec, quad, theta, t)?.0)
}

/// `r = ∂t u + (∂θV) u + V ∂θu`.
pub fn residual_of<F: Field>(
    field: &F,
    spec: &ProblemSpec,
    quad: &QuadratureRule,
    theta: f64,
    t: f64,
) -> Result<F::Scalar> {
    let p = field.with_partials(theta, t)?;
    let (v, dv) = velocity_and_slope(field, spec, quad, theta, t)?;
    Ok(p.du_dt + dv * p.u + v * p.du_dtheta)
}

/// Mean of squared residuals over the collocation points.
pub fn loss_residual_of<F: Field>(
    field: &F,
    spec: &ProblemSpec,
    quad: &QuadratureRule,
    points: &[(f64, f64)],
) -> Result<F::Scalar> {
    if points.is_empty() {
        return Err(Error::config("residual loss needs at least one collocation point"));
    }
    let mut acc = field.constant(0.0);
    for &(theta, t) in points {
        let r = residual_of(field, spec, quad, theta, t)?;
        acc = acc + r * r;
    }
    Ok(acc * (1.0 / points.len() as f64))
}

/// Mean squared mismatch against `u₀` at `t = 0`.
pub fn loss_ic_of<F: Field>(field: &F, spec: &ProblemSpec, points: &[f64]) -> Result<F::Scalar> {
    if points.is_empty() {
        return Err(Error::config("initial-condition loss needs at least one point"));
    }
    let mut acc = field.constant(0.0);
    for &theta in points {
        let e = field.value(theta, 0.0)? + (-initial_condition(spec, theta)?);
        acc = acc + e * e;
    }
    Ok(acc * (1.0 / points.len() as f64))
}

pub fn loss_total(weights: LossWeights, l_res: f64, l_ic: f64) -> f64 {
    weights.residual * l_res + weights.ic * l_ic
}

pub fn velocity(
    params: &ParamSet,
    config: &NetConfig,
    spec: &ProblemSpec,
    quad: &QuadratureRule,
    theta: f64,
    t: f64,
) -> Result<f64> {
    velocity_of(&NetField::new(params, config)?, spec, quad, theta, t)
}

pub fn residual(
    params: &ParamSet,
    config: &NetConfig,
    spec: &ProblemSpec,
    quad: &QuadratureRule,
    theta: f64,
    t: f64,
) -> Result<f64> {
    residual_of(&NetField::new(params, config)?, spec, quad, theta, t)
}

pub fn loss_residual(
    params: &ParamSet,
    config: &NetConfig,
    spec: &ProblemSpec,
    quad: &QuadratureRule,
    points: &[(f64, f64)],
) -> Result<f64> {
    loss_residual_of(&NetField::new(params, config)?, spec, quad, points)
}

pub fn loss_ic(params: &ParamSet, config: &NetConfig, spec: &ProblemSpec, points: &[f64]) -> Result<f64> {
    loss_ic_of(&NetField::new(params, config)?, spec, points)
}

#[cfg(test)]
mod tests;
