//! The particle memory: two homologous populations (coherence corrections and
//! responsiveness modulation) with gated kernel readout, two-pass
//! discrepancy-driven writing, and an epoch-boundary lifecycle.
//!
//! The free functions operate on explicit populations; [`Memory`] bundles a
//! value/responsiveness pair with its configuration for the domains.

mod config;
mod lifecycle;
mod particle;
mod read;
mod write;

use serde::{Deserialize, Serialize};

pub use config::EngineConfig;
pub use lifecycle::{lifecycle_epoch, reset_verification, LifecycleReport};
pub use particle::{Channel, ContextId, History, Particle, ParticlePopulation};
pub use read::{
    effective_coherence, effective_responsiveness, read, read_responsiveness, read_value,
    responsiveness_parts, ReadResult,
};
pub use write::{discrepancy_variance, responsiveness_target, write_step, WriteReport};

use crate::error::Result;
use crate::geometry::LatentPoint;

/// A value population paired with its responsiveness population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Memory {
    pub value: ParticlePopulation,
    pub responsiveness: ParticlePopulation,
    pub config: EngineConfig,
}

impl Memory {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            value: ParticlePopulation::new(Channel::Value, config.capacity),
            responsiveness: ParticlePopulation::new(Channel::Responsiveness, config.capacity),
            config,
        })
    }

    /// `δR̂(z)` under the read gate of `ctx`.
    pub fn delta_r(&self, z: &LatentPoint, ctx: ContextId) -> Result<f64> {
        read_value(&self.value, z, ctx)
    }

    /// Numerator and denominator of `δk(z)`, so several memories can be
    /// pooled into one intensive average.
    pub fn delta_k_parts(&self, z: &LatentPoint, ctx: ContextId) -> Result<(f64, f64)> {
        responsiveness_parts(&self.responsiveness, z, ctx)
    }

    pub fn read(&self, z: &LatentPoint, ctx: ContextId) -> Result<ReadResult> {
        read(&self.value, &self.responsiveness, z, ctx)
    }

    pub fn write(&mut self, visited: &LatentPoint, ctx: ContextId, discrepancy: f64) -> Result<WriteReport> {
        write_step(
            &mut self.value,
            &mut self.responsiveness,
            visited,
            ctx,
            discrepancy,
            &self.config,
        )
    }

    pub fn end_epoch(&mut self) -> Result<LifecycleReport> {
        lifecycle_epoch(&mut self.value, &mut self.responsiveness, &self.config)
    }

    /// Context transition: broadcast rights are phase-local.
    pub fn begin_context(&mut self) {
        reset_verification(&mut self.value);
        reset_verification(&mut self.responsiveness);
    }

    pub fn census(&self) -> Census {
        Census::of(&self.value)
    }
}

/// `δk` pooled over several memories: `Σ num / Σ den`, zero when nothing is
/// readable.
pub fn pooled_delta_k(parts: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let (num, den) = parts
        .into_iter()
        .fold((0.0, 0.0), |(n, d), (pn, pd)| (n + pn, d + pd));
    read::ratio_or_zero(num, den)
}

/// Point-in-time counts over a value population.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub live: usize,
    pub crystallized: usize,
    pub verified: usize,
}

impl std::ops::Add for Census {
    type Output = Census;

    fn add(self, other: Census) -> Census {
        Census {
            live: self.live + other.live,
            crystallized: self.crystallized + other.crystallized,
            verified: self.verified + other.verified,
        }
    }
}

impl Census {
    pub fn of(pop: &ParticlePopulation) -> Self {
        Self {
            live: pop.len(),
            crystallized: pop.crystallized_count(),
            verified: pop.verified_count(),
        }
    }
}
