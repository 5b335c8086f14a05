use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{initial_condition, loss_total, ProblemSpec, QuadratureRule};
use crate::diff::BatchEngine;
use crate::error::{Error, Result};
use crate::net::{ActivationKind, NetConfig, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub residual: f64,
    pub ic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { residual: 1.0, ic: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub residual: f64,
    pub ic: f64,
    pub total: f64,
}

/// Rows per batched network evaluation.
const DEFAULT_CHUNK_ROWS: usize = 1024;

/// The physics-informed loss over fixed point sets, evaluated in batches.
///
/// Each collocation point needs the network at its own `N_q` quadrature
/// nodes (same time) plus its input partials, so the points split into
/// independent chunks. Chunks are evaluated in parallel and reduced in a
/// fixed order, which keeps the result independent of the thread count.
#[derive(Debug, Clone)]
pub struct PinnObjective {
    activation: ActivationKind,
    sizes: Vec<usize>,
    coupling: f64,
    quad: QuadratureRule,
    weights: LossWeights,
    colloc: Vec<(f64, f64)>,
    /// `sin(θ_i - φ_j)` and `cos(θ_i - φ_j)`, row-major `N_r × N_q`.
    sin_kernel: Vec<f64>,
    cos_kernel: Vec<f64>,
    ic_points: Vec<(f64, f64)>,
    ic_targets: Vec<f64>,
    chunk_points: usize,
}

/// Per-point quantities entering the residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualTerms {
    pub u: f64,
    pub du_dtheta: f64,
    pub du_dt: f64,
    pub velocity: f64,
    pub velocity_slope: f64,
    pub residual: f64,
}

struct ChunkOutput {
    sum_sq: f64,
    grad: Vec<f64>,
}

impl PinnObjective {
    pub fn new(
        config: &NetConfig,
        spec: &ProblemSpec,
        quad: &QuadratureRule,
        colloc: &[(f64, f64)],
        ic_points: &[f64],
        weights: LossWeights,
    ) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        if ic_points.is_empty() {
            return Err(Error::config("initial-condition loss needs at least one point"));
        }
        let ic_targets = ic_points
            .iter()
            .map(|&theta| initial_condition(spec, theta))
            .collect::<Result<Vec<_>>>()?;
        let mut objective = PinnObjective {
            activation: config.activation,
            sizes: config.layer_sizes(),
            coupling: spec.coupling,
            quad: quad.clone(),
            weights,
            colloc: Vec::new(),
            sin_kernel: Vec::new(),
            cos_kernel: Vec::new(),
            ic_points: ic_points.iter().map(|&theta| (theta, 0.0)).collect(),
            ic_targets,
            chunk_points: 1,
        };
        objective.set_chunk_rows(DEFAULT_CHUNK_ROWS);
        objective.set_collocation(colloc)?;
        Ok(objective)
    }

    /// Replaces the collocation points, keeping everything else.
    pub fn set_collocation(&mut self, colloc: &[(f64, f64)]) -> Result<()> {
        if colloc.is_empty() {
            return Err(Error::config("residual loss needs at least one collocation point"));
        }
        let nq = self.quad.len();
        self.sin_kernel.clear();
        self.cos_kernel.clear();
        self.sin_kernel.reserve(colloc.len() * nq);
        self.cos_kernel.reserve(colloc.len() * nq);
        for &(theta, _) in colloc {
            for &phi in self.quad.nodes() {
                let (s, c) = (theta - phi).sin_cos();
                self.sin_kernel.push(s);
                self.cos_kernel.push(c);
            }
        }
        self.colloc = colloc.to_vec();
        Ok(())
    }

    /// Approximate number of network rows evaluated per batch.
    pub fn set_chunk_rows(&mut self, rows: usize) {
        self.chunk_points = (rows / (self.quad.len() + 3)).max(1);
    }

    pub fn collocation(&self) -> &[(f64, f64)] {
        &self.colloc
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    fn check(&self, params: &ParamSet) -> Result<()> {
        if params.sizes() != self.sizes.as_slice() {
            return Err(Error::Shape(format!(
                "parameter layout {:?} does not match objective layout {:?}",
                params.sizes(),
                self.sizes
            )));
        }
        Ok(())
    }

    fn chunk_ranges(&self) -> Vec<std::ops::Range<usize>> {
        (0..self.colloc.len())
            .step_by(self.chunk_points)
            .map(|start| start..(start + self.chunk_points).min(self.colloc.len()))
            .collect()
    }

    fn chunk_terms(
        &self,
        engine: &mut BatchEngine,
        params: &ParamSet,
        range: std::ops::Range<usize>,
    ) -> Result<Vec<ResidualTerms>> {
        let nq = self.quad.len();
        let points = &self.colloc[range.clone()];
        let mut plain = Vec::with_capacity(points.len() * nq);
        for &(_, t) in points {
            plain.extend(self.quad.nodes().iter().map(|&phi| (phi, t)));
        }
        engine.forward(params, self.activation, &plain, points)?;
        let scale = -self.coupling * self.quad.step();
        let q = engine.plain_outputs();
        let terms = range
            .enumerate()
            .map(|(i, global)| {
                let qi = &q[i * nq..(i + 1) * nq];
                let sk = &self.sin_kernel[global * nq..(global + 1) * nq];
                let ck = &self.cos_kernel[global * nq..(global + 1) * nq];
                let (mut v, mut dv) = (0.0, 0.0);
                for j in 0..nq {
                    v += qi[j] * sk[j];
                    dv += qi[j] * ck[j];
                }
                let (v, dv) = (v * scale, dv * scale);
                let p = engine.partial_output(i);
                ResidualTerms {
                    u: p.u,
                    du_dtheta: p.du_dtheta,
                    du_dt: p.du_dt,
                    velocity: v,
                    velocity_slope: dv,
                    residual: p.du_dt + dv * p.u + v * p.du_dtheta,
                }
            })
            .collect();
        Ok(terms)
    }

    fn chunk_with_grad(
        &self,
        engine: &mut BatchEngine,
        params: &ParamSet,
        range: std::ops::Range<usize>,
    ) -> Result<ChunkOutput> {
        let nq = self.quad.len();
        let terms = self.chunk_terms(engine, params, range.clone())?;
        let sum_sq = terms.iter().map(|r| r.residual * r.residual).sum();
        let scale = -self.coupling * self.quad.step();
        let factor = 2.0 * self.weights.residual / self.colloc.len() as f64;
        let mut seed_plain = Vec::with_capacity(terms.len() * nq);
        let mut seed_partial = Vec::with_capacity(terms.len());
        for (term, global) in terms.iter().zip(range) {
            let rho = factor * term.residual;
            let sk = &self.sin_kernel[global * nq..(global + 1) * nq];
            let ck = &self.cos_kernel[global * nq..(global + 1) * nq];
            let (a, b) = (rho * scale * term.u, rho * scale * term.du_dtheta);
            seed_plain.extend(ck.iter().zip(sk).map(|(c, s)| a * c + b * s));
            seed_partial.push([rho * term.velocity_slope, rho * term.velocity, rho]);
        }
        let mut grad = vec![0.0; params.len()];
        engine.backward(params, &seed_plain, &seed_partial, &mut grad)?;
        Ok(ChunkOutput { sum_sq, grad })
    }

    /// Residual terms at every collocation point.
    pub fn residual_terms(&self, params: &ParamSet) -> Result<Vec<ResidualTerms>> {
        self.check(params)?;
        let chunks = self
            .chunk_ranges()
            .into_par_iter()
            .map_init(BatchEngine::new, |engine, range| {
                self.chunk_terms(engine, params, range)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    fn ic_errors(&self, engine: &mut BatchEngine, params: &ParamSet) -> Result<Vec<f64>> {
        engine.forward(params, self.activation, &self.ic_points, &[])?;
        Ok(engine
            .plain_outputs()
            .iter()
            .zip(&self.ic_targets)
            .map(|(u, u0)| u - u0)
            .collect())
    }

    fn parts(&self, sum_sq_res: f64, ic_errors: &[f64]) -> Result<LossParts> {
        let residual = sum_sq_res / self.colloc.len() as f64;
        let ic = ic_errors.iter().map(|e| e * e).sum::<f64>() / ic_errors.len() as f64;
        let total = loss_total(self.weights, residual, ic);
        if !total.is_finite() {
            return Err(Error::NonFinite { what: "loss", index: 0 });
        }
        Ok(LossParts { residual, ic, total })
    }

    pub fn loss(&self, params: &ParamSet) -> Result<LossParts> {
        let terms = self.residual_terms(params)?;
        let sum_sq = terms.iter().map(|r| r.residual * r.residual).sum();
        let errors = self.ic_errors(&mut BatchEngine::new(), params)?;
        self.parts(sum_sq, &errors)
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(&self, params: &ParamSet) -> Result<(LossParts, Vec<f64>)> {
        self.check(params)?;
        let chunks = self
            .chunk_ranges()
            .into_par_iter()
            .map_init(BatchEngine::new, |engine, range| {
                self.chunk_with_grad(engine, params, range)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grad = vec![0.0; params.len()];
        let mut sum_sq = 0.0;
        for chunk in &chunks {
            sum_sq += chunk.sum_sq;
            for (g, c) in grad.iter_mut().zip(&chunk.grad) {
                *g += c;
            }
        }

        let mut engine = BatchEngine::new();
        let errors = self.ic_errors(&mut engine, params)?;
        let factor = 2.0 * self.weights.ic / errors.len() as f64;
        let seeds: Vec<f64> = errors.iter().map(|e| factor * e).collect();
        engine.backward(params, &seeds, &[], &mut grad)?;

        let parts = self.parts(sum_sq, &errors)?;
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                index,
            });
        }
        Ok((parts, grad))
    }
}
