use gemm::Parallelism;

use crate::diff::ValueWithPartials;
use crate::error::{Error, Result};
use crate::net::{kernels, ActivationKind, ParamSet};

/// Row-major strided product `dst (m×n) [+]= lhs (m×k) · rhs (k×n)`.
#[allow(clippy::too_many_arguments)]
fn matmul(
    m: usize,
    n: usize,
    k: usize,
    dst: &mut [f64],
    dst_rs: usize,
    accumulate: bool,
    lhs: &[f64],
    (lhs_rs, lhs_cs): (usize, usize),
    rhs: &[f64],
    (rhs_rs, rhs_cs): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            for r in 0..m {
                dst[r * dst_rs..r * dst_rs + n].fill(0.0);
            }
        }
        return;
    }
    assert!((m - 1) * dst_rs + n <= dst.len());
    assert!((m - 1) * lhs_rs + (k - 1) * lhs_cs < lhs.len());
    assert!((k - 1) * rhs_rs + (n - 1) * rhs_cs < rhs.len());
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            1,
            dst_rs as isize,
            accumulate,
            lhs.as_ptr(),
            lhs_cs as isize,
            lhs_rs as isize,
            rhs.as_ptr(),
            rhs_cs as isize,
            rhs_rs as isize,
            1.0,
            1.0,
            false,
            false,
            false,
            Parallelism::None,
        );
    }
}

/// Batched network evaluation with nested forward/reverse differentiation.
///
/// A batch has two kinds of points. *Plain* points produce only `u`.
/// *Partial* points also produce `∂u/∂θ` and `∂u/∂t`; each contributes one
/// value row and two tangent rows. Rows are laid out as
///
/// ```text
/// [ plain (P) | partial values (C) | θ-tangents (C) | t-tangents (C) ]
/// ```
///
/// so every layer is a single matrix product over all rows. Tangent rows
/// carry no bias and are scaled by the activation derivative of their
/// parent value row. [`BatchEngine::backward`] pulls output adjoints back
/// through that structure, including the second-derivative coupling between
/// a value row and its tangents.
#[derive(Debug, Default)]
pub struct BatchEngine {
    n_plain: usize,
    n_partial: usize,
    activation: Option<ActivationKind>,
    sizes: Vec<usize>,
    /// `acts[0]` holds the inputs; `acts[l]` the outputs of hidden layer `l`.
    acts: Vec<Vec<f64>>,
    /// Activation derivative at value rows, per hidden layer.
    derivs: Vec<Vec<f64>>,
    /// Tangent pre-activations, per hidden layer.
    ztan: Vec<Vec<f64>>,
    out: Vec<f64>,
    bar: Vec<f64>,
    bar_prev: Vec<f64>,
    seed: Vec<f64>,
}

impl BatchEngine {
    pub fn new() -> Self {
        BatchEngine::default()
    }

    fn rows(&self) -> usize {
        self.n_plain + 3 * self.n_partial
    }

    fn value_rows(&self) -> usize {
        self.n_plain + self.n_partial
    }

    pub fn forward(
        &mut self,
        params: &ParamSet,
        activation: ActivationKind,
        plain: &[(f64, f64)],
        partial: &[(f64, f64)],
    ) -> Result<()> {
        self.n_plain = plain.len();
        self.n_partial = partial.len();
        self.activation = Some(activation);
        self.sizes.clear();
        self.sizes.extend_from_slice(params.sizes());
        let rows = self.rows();
        let vrows = self.value_rows();
        let depth = self.sizes.len() - 2;

        self.acts.resize_with(depth + 1, Vec::new);
        self.derivs.resize_with(depth + 1, Vec::new);
        self.ztan.resize_with(depth + 1, Vec::new);

        let inputs = &mut self.acts[0];
        inputs.clear();
        inputs.reserve(rows * 2);
        for &(theta, t) in plain.iter().chain(partial) {
            if !theta.is_finite() || !t.is_finite() {
                return Err(Error::Domain {
                    what: "network input",
                    value: if theta.is_finite() { t } else { theta },
                });
            }
            inputs.extend_from_slice(&[theta, t]);
        }
        for _ in 0..self.n_partial {
            inputs.extend_from_slice(&[1.0, 0.0]);
        }
        for _ in 0..self.n_partial {
            inputs.extend_from_slice(&[0.0, 1.0]);
        }

        for l in 1..=depth {
            let layer = params.layer(l - 1);
            let (n_in, n) = (layer.n_in, layer.n_out);
            let (prev, rest) = self.acts.split_at_mut(l);
            let prev = &prev[l - 1];
            let z = &mut rest[0];
            z.resize(rows * n, 0.0);
            matmul(rows, n, n_in, z, n, false, prev, (n_in, 1), layer.weights, (1, n_in));
            for row in z[..vrows * n].chunks_exact_mut(n) {
                for (v, b) in row.iter_mut().zip(layer.bias) {
                    *v += b;
                }
            }
            let ztan = &mut self.ztan[l];
            ztan.clear();
            ztan.extend_from_slice(&z[vrows * n..]);
            let deriv = &mut self.derivs[l];
            deriv.resize(vrows * n, 0.0);
            let (values, tangents) = z.split_at_mut(vrows * n);
            match activation {
                ActivationKind::Tanh => kernels::tanh_with_derivative(values, deriv),
                ActivationKind::Sin => kernels::sin_with_derivative(values, deriv),
                ActivationKind::Relu => kernels::relu_with_derivative(values, deriv),
            }
            let parents = &deriv[self.n_plain * n..];
            for block in tangents.chunks_exact_mut(self.n_partial.max(1) * n) {
                for (t, d) in block.iter_mut().zip(parents) {
                    *t *= d;
                }
            }
        }

        let out_layer = params.layer(depth);
        let n = out_layer.n_in;
        self.out.resize(rows, 0.0);
        matmul(
            rows,
            1,
            n,
            &mut self.out,
            1,
            false,
            &self.acts[depth],
            (n, 1),
            out_layer.weights,
            (1, 1),
        );
        let b = out_layer.bias[0];
        for u in &mut self.out[..vrows] {
            *u += b;
        }

        if self.out.iter().any(|u| !u.is_finite()) {
            let layer = (1..=depth)
                .find(|&l| self.acts[l].iter().any(|v| !v.is_finite()))
                .unwrap_or(depth + 1);
            return Err(Error::NonFiniteLayer { layer });
        }
        Ok(())
    }

    pub fn plain_outputs(&self) -> &[f64] {
        &self.out[..self.n_plain]
    }

    pub fn partial_output(&self, i: usize) -> ValueWithPartials {
        let vrows = self.value_rows();
        ValueWithPartials {
            u: self.out[self.n_plain + i],
            du_dtheta: self.out[vrows + i],
            du_dt: self.out[vrows + self.n_partial + i],
        }
    }

    /// Value rows of hidden layer `layer` (1-based), row-major.
    pub fn hidden(&self, layer: usize) -> &[f64] {
        let n = self.sizes[layer];
        &self.acts[layer][..self.value_rows() * n]
    }

    /// Accumulates into `grad` the parameter gradient of
    /// `Σ seed_plain[r] u_r + Σ (s_u u_i + s_θ ∂θu_i + s_t ∂t u_i)`
    /// for the batch of the preceding [`forward`](Self::forward) call.
    pub fn backward(
        &mut self,
        params: &ParamSet,
        seed_plain: &[f64],
        seed_partial: &[[f64; 3]],
        grad: &mut [f64],
    ) -> Result<()> {
        let activation = self
            .activation
            .ok_or_else(|| Error::Shape("backward called before forward".into()))?;
        if params.sizes() != self.sizes.as_slice() {
            return Err(Error::Shape("parameters changed between forward and backward".into()));
        }
        if seed_plain.len() != self.n_plain || seed_partial.len() != self.n_partial {
            return Err(Error::Shape(format!(
                "seed lengths ({}, {}) do not match batch ({}, {})",
                seed_plain.len(),
                seed_partial.len(),
                self.n_plain,
                self.n_partial
            )));
        }
        if grad.len() != params.len() {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries, expected {}",
                grad.len(),
                params.len()
            )));
        }
        let (np, nc) = (self.n_plain, self.n_partial);
        let rows = self.rows();
        let vrows = self.value_rows();
        let depth = self.sizes.len() - 2;

        self.seed.clear();
        self.seed.extend_from_slice(seed_plain);
        self.seed.extend(seed_partial.iter().map(|s| s[0]));
        self.seed.extend(seed_partial.iter().map(|s| s[1]));
        self.seed.extend(seed_partial.iter().map(|s| s[2]));

        // Output layer.
        let out_layer = params.layer(depth);
        let n = out_layer.n_in;
        let w_off = params.layer_offset(depth);
        matmul(
            1,
            n,
            rows,
            &mut grad[w_off..w_off + n],
            n,
            true,
            &self.seed,
            (rows, 1),
            &self.acts[depth],
            (n, 1),
        );
        grad[w_off + n] += self.seed[..vrows].iter().sum::<f64>();
        self.bar.resize(rows * n, 0.0);
        for (row, s) in self.bar.chunks_exact_mut(n).zip(&self.seed) {
            for (b, w) in row.iter_mut().zip(out_layer.weights) {
                *b = s * w;
            }
        }

        for l in (1..=depth).rev() {
            let layer = params.layer(l - 1);
            let (n_in, n) = (layer.n_in, layer.n_out);
            let deriv = &self.derivs[l];
            let act = &self.acts[l];
            let ztan = &self.ztan[l];
            let bar = &mut self.bar;

            // Value rows of partial points: first-order term plus the coupling
            // through the tangent rows (needs tangent adjoints before they are
            // overwritten below).
            for i in 0..nc {
                let r = np + i;
                let (head, tail) = bar.split_at_mut(vrows * n);
                let zb = &mut head[r * n..(r + 1) * n];
                let tb_theta = &tail[i * n..(i + 1) * n];
                let tb_t = &tail[(nc + i) * n..(nc + i + 1) * n];
                let zt_theta = &ztan[i * n..(i + 1) * n];
                let zt_t = &ztan[(nc + i) * n..(nc + i + 1) * n];
                let d = &deriv[r * n..(r + 1) * n];
                let h = &act[r * n..(r + 1) * n];
                for k in 0..n {
                    let second = match activation {
                        ActivationKind::Tanh => -2.0 * h[k] * d[k],
                        ActivationKind::Sin => -h[k],
                        ActivationKind::Relu => 0.0,
                    };
                    zb[k] = zb[k] * d[k] + second * (tb_theta[k] * zt_theta[k] + tb_t[k] * zt_t[k]);
                }
            }
            // Tangent rows.
            let parents = &deriv[np * n..vrows * n];
            for block in bar[vrows * n..].chunks_exact_mut(nc.max(1) * n) {
                for (b, d) in block.iter_mut().zip(parents) {
                    *b *= d;
                }
            }
            // Plain rows.
            for (b, d) in bar[..np * n].iter_mut().zip(&deriv[..np * n]) {
                *b *= d;
            }

            let w_off = params.layer_offset(l - 1);
            let prev = &self.acts[l - 1];
            matmul(
                n,
                n_in,
                rows,
                &mut grad[w_off..w_off + n * n_in],
                n_in,
                true,
                bar,
                (1, n),
                prev,
                (n_in, 1),
            );
            let gb = &mut grad[w_off + n * n_in..w_off + n * n_in + n];
            for row in bar[..vrows * n].chunks_exact(n) {
                for (g, b) in gb.iter_mut().zip(row) {
                    *g += b;
                }
            }

            if l > 1 {
                self.bar_prev.resize(rows * n_in, 0.0);
                matmul(
                    rows,
                    n_in,
                    n,
                    &mut self.bar_prev,
                    n_in,
                    false,
                    bar,
                    (n, 1),
                    layer.weights,
                    (n_in, 1),
                );
                std::mem::swap(&mut self.bar, &mut self.bar_prev);
            }
        }
        Ok(())
    }
}
