use serde::{Deserialize, Serialize};

use super::config::EngineConfig;
use super::particle::{Channel, ContextId, ParticlePopulation};
use crate::error::{Error, Result};
use crate::geometry::{check_dims, LatentPoint};

/// Both correction fields evaluated at one query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadResult {
    pub delta_r: f64,
    pub delta_k: f64,
    /// Gated-in value particles.
    pub contributing_count: usize,
}

fn expect_channel(pop: &ParticlePopulation, channel: Channel) -> Result<()> {
    if pop.channel != channel {
        return Err(Error::InvalidArgument(format!(
            "expected a {channel:?} population, got {:?}",
            pop.channel
        )));
    }
    Ok(())
}

fn check_population_dims(pop: &ParticlePopulation, z: &LatentPoint) -> Result<()> {
    pop.iter()
        .try_for_each(|p| check_dims(p.location.dim(), z.dim()))
}

/// Additive coherence correction `Σ γ_i v_i K(z, z_i)`.
pub fn read_value(pop: &ParticlePopulation, z: &LatentPoint, active_context: ContextId) -> Result<f64> {
    expect_channel(pop, Channel::Value)?;
    check_population_dims(pop, z)?;
    Ok(value_sum(pop, z.coords(), active_context).0)
}

pub(crate) fn value_sum(pop: &ParticlePopulation, z: &[f64], active_context: ContextId) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for p in pop.iter().filter(|p| p.readable_in(active_context)) {
        sum += p.amplitude * p.kernel_at(z);
        n += 1;
    }
    (sum, n)
}

/// Numerator and denominator of the intensive responsiveness readout, over
/// crystallized gated-in particles.
pub fn responsiveness_parts(
    pop: &ParticlePopulation,
    z: &LatentPoint,
    active_context: ContextId,
) -> Result<(f64, f64)> {
    expect_channel(pop, Channel::Responsiveness)?;
    check_population_dims(pop, z)?;
    Ok(resp_parts(pop, z.coords(), active_context))
}

pub(crate) fn resp_parts(pop: &ParticlePopulation, z: &[f64], active_context: ContextId) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for p in pop
        .iter()
        .filter(|p| p.crystallized && p.readable_in(active_context))
    {
        let k = p.kernel_at(z);
        num += p.amplitude * k;
        den += k;
    }
    (num, den)
}

/// Kernel-weighted mean of `w_i` over crystallized gated-in particles; zero
/// when no such particle has any activation.
pub fn read_responsiveness(
    pop: &ParticlePopulation,
    z: &LatentPoint,
    active_context: ContextId,
) -> Result<f64> {
    let (num, den) = responsiveness_parts(pop, z, active_context)?;
    Ok(ratio_or_zero(num, den))
}

pub(crate) fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Reads both channels at `z`.
pub fn read(
    value_pop: &ParticlePopulation,
    resp_pop: &ParticlePopulation,
    z: &LatentPoint,
    active_context: ContextId,
) -> Result<ReadResult> {
    expect_channel(value_pop, Channel::Value)?;
    check_population_dims(value_pop, z)?;
    let (delta_r, contributing_count) = value_sum(value_pop, z.coords(), active_context);
    let delta_k = read_responsiveness(resp_pop, z, active_context)?;
    Ok(ReadResult {
        delta_r,
        delta_k,
        contributing_count,
    })
}

/// `R_base + δR`; deliberately unclamped.
pub fn effective_coherence(base: f64, delta_r: f64) -> f64 {
    base + delta_r
}

/// `max(k_min, k0 + δk)`.
pub fn effective_responsiveness(cfg: &EngineConfig, delta_k: f64) -> f64 {
    cfg.k_min.max(cfg.k0 + delta_k)
}
