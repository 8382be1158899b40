use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::geometry::LatentPoint;

/// Context label attached to particles at birth.
pub type ContextId = u32;

/// Which payload a population carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Coherence corrections `v_i`, read additively.
    Value,
    /// Responsiveness modulation `w_i`, read as a kernel-weighted average.
    Responsiveness,
}

/// Fixed-length FIFO of recent reals; the oldest entry falls off when full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    window: usize,
    entries: VecDeque<f64>,
}

impl History {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            entries: VecDeque::with_capacity(window.max(1)),
        }
    }

    pub fn push(&mut self, value: f64) {
        if self.entries.len() == self.window {
            self.entries.pop_front();
        }
        self.entries.push_back(value);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &f64> + ExactSizeIterator {
        self.entries.iter()
    }

    /// Mean of the most recent `n` entries, `None` when empty.
    pub fn recent_mean(&self, n: usize) -> Option<f64> {
        let take = n.min(self.entries.len());
        if take == 0 {
            return None;
        }
        Some(self.entries.iter().rev().take(take).sum::<f64>() / take as f64)
    }

    /// Appends `other` after `self`, keeping only the most recent `window` entries.
    pub fn absorb(&mut self, other: &History) {
        for v in other.entries.iter() {
            self.push(*v);
        }
    }
}

/// One kernel-localized modification site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    /// Shared by a value particle and its responsiveness twin.
    pub id: u64,
    pub location: LatentPoint,
    pub amplitude: f64,
    pub sigma: f64,
    pub decay_rate: f64,
    pub birth_context: ContextId,
    /// Kernel-local discrepancy `D·K` from same-context writes.
    pub local_history: History,
    /// Raw discrepancy `D` from cross-context exposure.
    pub cross_history: History,
    pub update_count: u64,
    pub cross_count: u64,
    pub crystallized: bool,
    pub verified: bool,
}

impl Particle {
    /// A fresh transient particle.
    pub fn transient(
        id: u64,
        location: LatentPoint,
        amplitude: f64,
        sigma: f64,
        mu_base: f64,
        birth_context: ContextId,
        window: usize,
    ) -> Self {
        Self {
            id,
            location,
            amplitude,
            sigma,
            decay_rate: mu_base,
            birth_context,
            local_history: History::new(window),
            cross_history: History::new(window),
            update_count: 0,
            cross_count: 0,
            crystallized: false,
            verified: false,
        }
    }

    /// Read gate: same-context particles are always readable, other-context
    /// particles only once crystallized and verified.
    #[inline]
    pub fn readable_in(&self, active_context: ContextId) -> bool {
        self.birth_context == active_context || (self.crystallized && self.verified)
    }

    #[inline]
    pub fn kernel_at(&self, z: &[f64]) -> f64 {
        crate::geometry::kernel_from_sq(
            crate::geometry::squared_distance(self.location.coords(), z),
            self.sigma,
        )
    }
}

/// A homogeneous, capacity-bounded set of particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticlePopulation {
    pub channel: Channel,
    pub particles: Vec<Particle>,
    pub capacity: usize,
    /// Next particle id handed out at nucleation.
    pub next_id: u64,
}

impl ParticlePopulation {
    pub fn new(channel: Channel, capacity: usize) -> Self {
        Self {
            channel,
            particles: Vec::new(),
            capacity,
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Particle> {
        self.particles.iter()
    }

    pub fn crystallized_count(&self) -> usize {
        self.particles.iter().filter(|p| p.crystallized).count()
    }

    pub fn verified_count(&self) -> usize {
        self.particles.iter().filter(|p| p.verified).count()
    }

    pub fn find(&self, id: u64) -> Option<&Particle> {
        self.particles.iter().find(|p| p.id == id)
    }
}
