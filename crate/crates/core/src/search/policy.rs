use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::feasibility::PRUNED;

/// Per-action exploration floor used when none is configured: `0.05 / M`,
/// so at most 5% of the probability mass is spent on forced exploration.
pub fn default_floor(n_cols: usize) -> f64 {
    0.05 / n_cols as f64
}

/// Value-proportional policy over the actions that are not [`PRUNED`].
///
/// Negative values count as zero, an all-zero row falls back to uniform, and
/// each allowed action then receives at least `floor`.
pub fn action_distribution(values: &[f64], floor: f64) -> Result<Vec<f64>> {
    let allowed: Vec<bool> = values.iter().map(|&v| v != PRUNED).collect();
    masked_distribution(values, &allowed, floor)
}

pub(crate) fn masked_distribution(values: &[f64], allowed: &[bool], floor: f64) -> Result<Vec<f64>> {
    let k = allowed.iter().filter(|&&a| a).count();
    if k == 0 {
        return Err(Error::DeadEnd);
    }
    let floor = floor.clamp(0.0, 1.0 / k as f64);
    let mass: f64 = values
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(&v, _)| v.max(0.0))
        .sum();
    let scale = 1.0 - k as f64 * floor;
    Ok(values
        .iter()
        .zip(allowed)
        .map(|(&v, &a)| {
            if !a {
                0.0
            } else if mass > 0.0 {
                scale * v.max(0.0) / mass + floor
            } else {
                1.0 / k as f64
            }
        })
        .collect())
}

pub(crate) fn sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(probs)
        .expect("policy has positive mass")
        .sample(rng)
}
