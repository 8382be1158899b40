//! Discrete law of motion: Boltzmann selection over candidate next states,
//! sharpened by the effective responsiveness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LatentPoint;

/// A candidate next state reachable by one action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCandidate {
    pub action_id: usize,
    pub latent: LatentPoint,
    /// Effective coherence of the candidate state.
    pub score_eff: f64,
}

impl ActionCandidate {
    /// Coherence increment relative to the current state.
    pub fn increment(&self, current_coherence: f64) -> f64 {
        self.score_eff - current_coherence
    }
}

/// `softmax(k · s)` with max-subtraction.
pub fn boltzmann_probabilities(scores: &[f64], k_eff: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no candidates to choose from".into()));
    }
    if !(k_eff > 0.0 && k_eff.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "responsiveness must be positive, got {k_eff}"
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("score {s} is not finite")));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (k_eff * (s - max)).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Index drawn by inverse CDF from a single uniform draw.
pub fn sample_index<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probabilities.len() - 1
}

/// Boltzmann draw over candidates. Returns the chosen action id and the full
/// probability vector (in candidate order).
pub fn select_action<R: Rng + ?Sized>(
    candidates: &[ActionCandidate],
    k_eff: f64,
    rng: &mut R,
) -> Result<(usize, Vec<f64>)> {
    let scores: Vec<f64> = candidates.iter().map(|c| c.score_eff).collect();
    let probs = boltzmann_probabilities(&scores, k_eff)?;
    let idx = sample_index(&probs, rng);
    Ok((candidates[idx].action_id, probs))
}

/// First index holding the maximal score.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some(b) if *s <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Deterministic evaluation mode: highest score, ties to the lowest action id.
pub fn greedy_action(candidates: &[ActionCandidate]) -> Result<usize> {
    let mut best: Option<&ActionCandidate> = None;
    for c in candidates {
        best = match best {
            None => Some(c),
            Some(b) if c.score_eff > b.score_eff => Some(c),
            Some(b) if c.score_eff == b.score_eff && c.action_id < b.action_id => Some(c),
            keep => keep,
        };
    }
    best.map(|c| c.action_id)
        .ok_or_else(|| Error::InvalidArgument("no candidates to choose from".into()))
}
