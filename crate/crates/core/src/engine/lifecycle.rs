use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::config::EngineConfig;
use super::particle::{Channel, Particle, ParticlePopulation};
use crate::error::{Error, Result};
use crate::geometry::squared_distance;

/// Event counts from one epoch boundary. State transitions are counted on the
/// value channel; `decayed` covers both populations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LifecycleReport {
    pub decayed: usize,
    pub crystallized: usize,
    pub dissolved: usize,
    pub verified_granted: usize,
    pub merged: usize,
    pub evicted: usize,
    /// Value particles dissolved this epoch.
    pub dissolved_ids: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Dissolve,
    Verify,
}

/// Runs decay, crystallization, the Crucible, then merge and capacity control,
/// in that order, on both populations.
pub fn lifecycle_epoch(
    value_pop: &mut ParticlePopulation,
    resp_pop: &mut ParticlePopulation,
    cfg: &EngineConfig,
) -> Result<LifecycleReport> {
    if value_pop.channel != Channel::Value || resp_pop.channel != Channel::Responsiveness {
        return Err(Error::InvalidArgument(
            "lifecycle_epoch needs (value, responsiveness) populations".into(),
        ));
    }
    let mut report = LifecycleReport::default();

    for p in value_pop
        .particles
        .iter_mut()
        .chain(resp_pop.particles.iter_mut())
    {
        p.amplitude *= 1.0 - p.decay_rate;
        report.decayed += 1;
    }

    if cfg.crystallization_enabled {
        report.crystallized = crystallize(value_pop, cfg);
        crystallize(resp_pop, cfg);
    }

    if cfg.crucible_enabled {
        let verdicts = crucible_verdicts(value_pop, cfg);
        for p in value_pop.particles.iter_mut() {
            match verdicts.get(&p.id) {
                Some(Verdict::Dissolve) => {
                    dissolve(p, cfg);
                    report.dissolved += 1;
                    report.dissolved_ids.push(p.id);
                }
                Some(Verdict::Verify) if !p.verified => {
                    p.verified = true;
                    report.verified_granted += 1;
                }
                _ => {}
            }
        }
        // Responsiveness twins inherit the value particle's verdict.
        for p in resp_pop.particles.iter_mut() {
            match verdicts.get(&p.id) {
                Some(Verdict::Dissolve) => dissolve(p, cfg),
                Some(Verdict::Verify) if p.crystallized => p.verified = true,
                _ => {}
            }
        }
    }

    report.merged = merge_close(value_pop, cfg.merge_factor, cfg.v_max);
    merge_close(resp_pop, cfg.merge_factor, cfg.w_max);

    report.evicted = enforce_capacity(value_pop);
    enforce_capacity(resp_pop);

    Ok(report)
}

fn crystallize(pop: &mut ParticlePopulation, cfg: &EngineConfig) -> usize {
    let mut n = 0;
    for p in pop.particles.iter_mut().filter(|p| !p.crystallized) {
        let converged = p
            .local_history
            .recent_mean(cfg.history_window)
            .is_some_and(|m| m.abs() < cfg.theta_conv);
        if p.update_count >= cfg.n_cryst_min as u64 && converged {
            p.crystallized = true;
            p.decay_rate = cfg.mu_cryst;
            n += 1;
        }
    }
    n
}

fn crucible_verdicts(value_pop: &ParticlePopulation, cfg: &EngineConfig) -> HashMap<u64, Verdict> {
    let mut verdicts = HashMap::new();
    for p in value_pop
        .iter()
        .filter(|p| p.crystallized && p.cross_count >= cfg.n_cross_min as u64)
    {
        let Some(raw_mean) = p.cross_history.recent_mean(cfg.history_window) else {
            continue;
        };
        if p.amplitude * raw_mean < cfg.theta_rev {
            verdicts.insert(p.id, Verdict::Dissolve);
        } else if p.cross_count >= cfg.n_verify as u64 {
            verdicts.insert(p.id, Verdict::Verify);
        }
    }
    verdicts
}

fn dissolve(p: &mut Particle, cfg: &EngineConfig) {
    p.decay_rate = cfg.mu_base;
    p.crystallized = false;
    p.verified = false;
    p.cross_history.clear();
    p.cross_count = 0;
}

/// Clears broadcast rights across a population; called at context transitions.
pub fn reset_verification(pop: &mut ParticlePopulation) {
    for p in pop.particles.iter_mut() {
        p.verified = false;
    }
}

/// Greedy same-context merging in ascending distance order. Each particle
/// takes part in at most one merge per pass. Returns the number of merges.
fn merge_close(pop: &mut ParticlePopulation, merge_factor: f64, amp_max: f64) -> usize {
    let n = pop.particles.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        let a = &pop.particles[i];
        for j in (i + 1)..n {
            let b = &pop.particles[j];
            if a.birth_context != b.birth_context {
                continue;
            }
            let radius = merge_factor * a.sigma.min(b.sigma);
            let sq = squared_distance(a.location.coords(), b.location.coords());
            if sq < radius * radius {
                pairs.push((sq, i, j));
            }
        }
    }
    if pairs.is_empty() {
        return 0;
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut used = vec![false; n];
    let mut absorbed = vec![false; n];
    let mut merges = 0;
    for (_, i, j) in pairs {
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        let (keep, drop) = if pop.particles[j].update_count > pop.particles[i].update_count {
            (j, i)
        } else {
            (i, j)
        };
        let other = pop.particles[drop].clone();
        absorb(&mut pop.particles[keep], &other, amp_max);
        absorbed[drop] = true;
        merges += 1;
    }
    let mut idx = 0;
    pop.particles.retain(|_| {
        let keep = !absorbed[idx];
        idx += 1;
        keep
    });
    merges
}

fn absorb(into: &mut Particle, other: &Particle, amp_max: f64) {
    into.amplitude = (into.amplitude + other.amplitude).clamp(-amp_max, amp_max);
    into.update_count += other.update_count;
    into.cross_count += other.cross_count;
    // Consolidated histories hold the absorbed particle's entries first.
    let mut local = other.local_history.clone();
    local.absorb(&into.local_history);
    into.local_history = local;
    let mut cross = other.cross_history.clone();
    cross.absorb(&into.cross_history);
    into.cross_history = cross;
    into.decay_rate = into.decay_rate.min(other.decay_rate);
    into.crystallized = into.crystallized || other.crystallized;
    into.verified = into.verified && other.verified;
}

/// Keeps every crystallized particle first, then transient ones by update
/// count (ties by insertion order). Survivors keep their original order.
fn enforce_capacity(pop: &mut ParticlePopulation) -> usize {
    let n = pop.particles.len();
    if n <= pop.capacity {
        return 0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let pa = &pop.particles[a];
        let pb = &pop.particles[b];
        pb.crystallized
            .cmp(&pa.crystallized)
            .then(pb.update_count.cmp(&pa.update_count))
            .then(a.cmp(&b))
    });
    let mut keep = vec![false; n];
    for &i in order.iter().take(pop.capacity) {
        keep[i] = true;
    }
    let mut idx = 0;
    pop.particles.retain(|_| {
        let k = keep[idx];
        idx += 1;
        k
    });
    n - pop.capacity
}
