use crate::error::{Error, Result};
use crate::nn::sigmoid;

/// Mean of the per-tile sigmoid probabilities.
pub fn soft_vote(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("soft vote over zero tiles".into()));
    }
    Ok(logits.iter().map(|&l| sigmoid(l)).sum::<f64>() / logits.len() as f64)
}

/// `dL/dlogit_i` given `dL/dprobability`.
pub fn soft_vote_backward(logits: &[f64], dprob: f64) -> Vec<f64> {
    let n = logits.len() as f64;
    logits
        .iter()
        .map(|&l| {
            let s = sigmoid(l);
            dprob * s * (1.0 - s) / n
        })
        .collect()
}
