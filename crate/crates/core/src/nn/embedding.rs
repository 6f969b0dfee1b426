use crate::error::{Error, Result};

/// Sinusoidal step embedding: entry `2k` is `sin(t / 10000^(2k/dim))` and
/// entry `2k+1` is `cos` of the same angle.
pub fn timestep_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::config(format!("step embedding size must be even, got {dim}")));
    }
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let angle = t / 10000f64.powf(2.0 * k as f64 / dim as f64);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(out)
}
