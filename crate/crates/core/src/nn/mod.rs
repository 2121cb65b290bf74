//! Small neural-network kit: MLPs, policy heads, Adam, gradient checks and
//! checkpoint files.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod policy;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, NetRecord, StoredNet};
pub use gradcheck::{grad_check, spread_coords};
pub use mlp::{Mlp, MlpCache};
pub use policy::{CategoricalPolicy, GaussianPolicy, LogProbCache, Policy};

use rand::Rng;

use crate::error::Result;

pub const HIDDEN: [usize; 2] = [128, 128];
pub const INITIAL_STD: f64 = 0.4;

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

pub fn gaussian_policy<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Policy> {
    let mean = Mlp::orthogonal(&layer_sizes(obs_dim, hidden, act_dim), 2f64.sqrt(), 0.01, rng)?;
    Ok(Policy::Gaussian(GaussianPolicy::new(mean, INITIAL_STD)))
}

pub fn categorical_policy<R: Rng + ?Sized>(obs_dim: usize, choices: usize, hidden: &[usize], rng: &mut R) -> Result<Policy> {
    let logits = Mlp::orthogonal(&layer_sizes(obs_dim, hidden, choices), 2f64.sqrt(), 0.01, rng)?;
    Ok(Policy::Categorical(CategoricalPolicy { logits }))
}

/// Scalar regressor (value function, height estimator).
pub fn regressor<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Result<Mlp> {
    Mlp::orthogonal(&layer_sizes(input, hidden, 1), 2f64.sqrt(), 1.0, rng)
}

/// Mean squared error `1/n sum (f(x_i) - y_i)^2` and its parameter gradient.
pub fn mse_loss_grad(net: &Mlp, inputs: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = targets.len();
    let cache = net.forward_batch(inputs, n)?;
    let resid: Vec<f64> = cache.output().iter().zip(targets).map(|(p, t)| p - t).collect();
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / n as f64;
    let scale = 2.0 / n as f64;
    let grad_out: Vec<f64> = resid.iter().map(|r| r * scale).collect();
    Ok((loss, net.backward(&cache, &grad_out)?))
}
