//! Multilayer perceptron with tanh hidden layers and a linear output.
//!
//! Parameters live in one flat vector: for each layer, the weight matrix
//! (out x in, row-major) followed by the bias.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    batch: usize,
    /// Input of every layer, then the network output.
    activations: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

/// C (m x n) = A (m x k) B (k x n) + beta C, strides given as (row, col).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the caller's slices cover the index ranges implied by the
    // dimensions and strides; each call site below documents its shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        if params.len() != mlp.params.len() {
            return Err(Error::DimensionMismatch {
                what: "mlp parameters",
                expected: mlp.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("mlp parameters".into()));
        }
        mlp.params = params;
        Ok(mlp)
    }

    /// Orthogonal weights scaled by `hidden_gain` (hidden layers) and
    /// `output_gain` (last layer), zero biases.
    pub fn orthogonal<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        let layers = sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == layers { output_gain } else { hidden_gain };
            let rows = fan_out.max(fan_in);
            let cols = fan_out.min(fan_in);
            let g = DMatrix::<f64>::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
            let qr = g.qr();
            let mut q = qr.q();
            // sign fix makes the draw uniform over orthogonal matrices
            let r = qr.r();
            for c in 0..cols {
                if r[(c, c)] < 0.0 {
                    q.column_mut(c).neg_mut();
                }
            }
            for o in 0..fan_out {
                for i in 0..fan_in {
                    let w = if fan_out >= fan_in { q[(o, i)] } else { q[(i, o)] };
                    mlp.params[offset + o * fan_in + i] = gain * w;
                }
            }
            offset += fan_out * fan_in + fan_out;
        }
        Ok(mlp)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let start = offset;
            offset += w[1] * w[0] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<MlpCache> {
        if input.len() != batch * self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "mlp input",
                expected: batch * self.input_dim(),
                got: input.len(),
            });
        }
        let n_layers = self.sizes.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        for (l, (start, fan_in, fan_out)) in self.layers().enumerate() {
            let w = &self.params[start..start + fan_out * fan_in];
            let b = &self.params[start + fan_out * fan_in..start + fan_out * fan_in + fan_out];
            let mut z = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            // Z (batch x out) = X (batch x in) W^T (in x out) + b
            let x = activations.last().unwrap();
            gemm(batch, fan_in, fan_out, x, (fan_in, 1), w, (1, fan_in), 1.0, &mut z);
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        Ok(MlpCache { batch, activations })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.activations.pop().unwrap())
    }

    /// Parameter gradient of `sum(grad_output . output)` over the batch.
    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64]) -> Result<Vec<f64>> {
        let batch = cache.batch;
        if grad_output.len() != batch * self.output_dim() {
            return Err(Error::DimensionMismatch {
                what: "mlp output gradient",
                expected: batch * self.output_dim(),
                got: grad_output.len(),
            });
        }
        let mut grads = vec![0.0; self.params.len()];
        let layers: Vec<_> = self.layers().collect();
        let mut delta = grad_output.to_vec();
        for (l, &(start, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            if l + 1 < layers.len() {
                // through tanh: a' = 1 - a^2
                for (d, a) in delta.iter_mut().zip(&cache.activations[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let x = &cache.activations[l];
            let (gw, gb) = grads[start..start + fan_out * fan_in + fan_out].split_at_mut(fan_out * fan_in);
            // dW (out x in) = dZ^T (out x batch) X (batch x in)
            gemm(fan_out, batch, fan_in, &delta, (1, fan_out), x, (fan_in, 1), 0.0, gw);
            for row in delta.chunks_exact(fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                // dX (batch x in) = dZ (batch x out) W (out x in)
                let w = &self.params[start..start + fan_out * fan_in];
                let mut dx = vec![0.0; batch * fan_in];
                gemm(batch, fan_out, fan_in, &delta, (fan_out, 1), w, (fan_in, 1), 0.0, &mut dx);
                delta = dx;
            }
        }
        Ok(grads)
    }
}
