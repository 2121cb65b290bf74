//! Central finite-difference checks of analytic gradients.

use crate::error::{Error, Result};

/// Magnitude below which gradients are compared absolutely rather than
/// relatively.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Largest relative error between `analytic` and central differences of
/// `loss` over the parameter indices `coords`:
/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], coords: &[usize], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {h}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::DimensionMismatch {
            what: "analytic gradient",
            expected: params.len(),
            got: analytic.len(),
        });
    }
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        if i >= params.len() {
            return Err(Error::InvalidArgument(format!("coordinate {i} out of range")));
        }
        work[i] = params[i] + h;
        let plus = loss(&work);
        work[i] = params[i] - h;
        let minus = loss(&work);
        work[i] = params[i];
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// `count` distinct indices spread over `0..len`, always including the
/// first and last.
pub fn spread_coords(len: usize, count: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    if count >= len {
        return (0..len).collect();
    }
    let mut out: Vec<usize> = (0..count)
        .map(|k| (k as f64 * (len - 1) as f64 / (count - 1).max(1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}
