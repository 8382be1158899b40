use serde::{Deserialize, Serialize};

use super::config::EngineConfig;
use super::particle::{Channel, ContextId, Particle, ParticlePopulation};
use crate::error::{Error, Result};
use crate::geometry::{check_dims, LatentPoint};

/// What one interaction wrote.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteReport {
    /// Pass-1 cross-context exposures (both populations).
    pub exposures: usize,
    /// Pass-2 local updates to value particles.
    pub updates: usize,
    pub nucleations: usize,
    /// Responsiveness amplitudes moved toward their variance target.
    pub responsiveness_moves: usize,
}

/// Applies one discrepancy signal observed at `visited` under `active_context`.
///
/// Pass 1 feeds the raw `D` into the cross-context books of crystallized
/// other-context particles that are activated above `theta_exposure`.
/// Pass 2 writes `η_i K D` into every same-context value amplitude; particles
/// activated above `theta_exposure` also log `D·K` and count the update.
/// A new value/responsiveness pair nucleates at `visited` when no same-context
/// value particle reaches `theta_create`. Finally crystallized same-context
/// responsiveness particles move toward the variance-derived target.
pub fn write_step(
    value_pop: &mut ParticlePopulation,
    resp_pop: &mut ParticlePopulation,
    visited: &LatentPoint,
    active_context: ContextId,
    discrepancy: f64,
    cfg: &EngineConfig,
) -> Result<WriteReport> {
    if value_pop.channel != Channel::Value || resp_pop.channel != Channel::Responsiveness {
        return Err(Error::InvalidArgument(
            "write_step needs (value, responsiveness) populations".into(),
        ));
    }
    if !discrepancy.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "discrepancy must be finite, got {discrepancy}"
        )));
    }
    for p in value_pop.iter().chain(resp_pop.iter()) {
        check_dims(p.location.dim(), visited.dim())?;
    }

    let mut report = WriteReport::default();
    if !cfg.writes_enabled {
        return Ok(report);
    }
    let z = visited.coords();
    let d = discrepancy;

    // One scan per population; every particle's own updates keep the order
    // pass 1, pass 2, responsiveness move.
    let mut max_activation: f64 = 0.0;
    for p in value_pop.particles.iter_mut() {
        let same = p.birth_context == active_context;
        if !same && !(cfg.crucible_enabled && p.crystallized) {
            continue;
        }
        let k = p.kernel_at(z);
        if !same {
            if k >= cfg.theta_exposure {
                p.cross_history.push(d);
                p.cross_count += 1;
                report.exposures += 1;
            }
            continue;
        }
        max_activation = max_activation.max(k);
        let eta = cfg.eta(p.crystallized);
        p.amplitude = (p.amplitude + eta * k * d).clamp(-cfg.v_max, cfg.v_max);
        if k >= cfg.theta_exposure {
            p.local_history.push(d * k);
            p.update_count += 1;
            report.updates += 1;
        }
    }
    for p in resp_pop.particles.iter_mut() {
        let same = p.birth_context == active_context;
        if !same && !(cfg.crucible_enabled && p.crystallized) {
            continue;
        }
        let k = p.kernel_at(z);
        if k < cfg.theta_exposure {
            continue;
        }
        if !same {
            p.cross_history.push(d);
            p.cross_count += 1;
            report.exposures += 1;
            continue;
        }
        p.local_history.push(d * k);
        p.update_count += 1;
        if cfg.agency_enabled && p.crystallized {
            if let Some(var) = discrepancy_variance(p, cfg) {
                let target = responsiveness_target(var, cfg);
                p.amplitude = (p.amplitude + cfg.eta_w * (target - p.amplitude))
                    .clamp(-cfg.w_max, cfg.w_max);
                report.responsiveness_moves += 1;
            }
        }
    }

    if max_activation < cfg.theta_create {
        nucleate(value_pop, resp_pop, visited, active_context, d, cfg);
        report.nucleations += 1;
    }

    Ok(report)
}

fn nucleate(
    value_pop: &mut ParticlePopulation,
    resp_pop: &mut ParticlePopulation,
    visited: &LatentPoint,
    ctx: ContextId,
    d: f64,
    cfg: &EngineConfig,
) {
    let id = value_pop.next_id;
    value_pop.next_id += 1;
    resp_pop.next_id = resp_pop.next_id.max(value_pop.next_id);

    let amplitude = (cfg.eta_base * d).clamp(-cfg.v_max, cfg.v_max);
    let mut v = Particle::transient(
        id,
        visited.clone(),
        amplitude,
        cfg.sigma_star,
        cfg.mu_base,
        ctx,
        cfg.history_window,
    );
    // The birth write is the particle's first local update (K = 1).
    v.local_history.push(d);
    v.update_count = 1;

    let mut w = v.clone();
    w.amplitude = 0.0;

    value_pop.particles.push(v);
    resp_pop.particles.push(w);
}

/// Rolling variance of a particle's local discrepancy log, skipping the
/// first `transient_exclusion` entries of its lifetime. `None` with fewer
/// than two usable entries.
pub fn discrepancy_variance(p: &Particle, cfg: &EngineConfig) -> Option<f64> {
    let len = p.local_history.len();
    let oldest_lifetime_index = (p.update_count as usize).saturating_sub(len);
    let skip = cfg.transient_exclusion.saturating_sub(oldest_lifetime_index).min(len);
    let usable: Vec<f64> = p
        .local_history
        .iter()
        .skip(skip)
        .copied()
        .collect::<Vec<_>>();
    let usable = &usable[usable.len().saturating_sub(cfg.history_window)..];
    if usable.len() < 2 {
        return None;
    }
    let n = usable.len() as f64;
    let mean = usable.iter().sum::<f64>() / n;
    Some(usable.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
}

/// `clip(w_max (1 − D_var/θ_w), ±w_max)`.
pub fn responsiveness_target(d_var: f64, cfg: &EngineConfig) -> f64 {
    (cfg.w_max * (1.0 - d_var / cfg.theta_w)).clamp(-cfg.w_max, cfg.w_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: &[f64]) -> LatentPoint {
        LatentPoint::new(c.to_vec()).unwrap()
    }

    fn pops() -> (ParticlePopulation, ParticlePopulation) {
        (
            ParticlePopulation::new(Channel::Value, 100),
            ParticlePopulation::new(Channel::Responsiveness, 100),
        )
    }

    #[test]
    fn empty_populations_nucleate_a_pair() {
        let cfg = EngineConfig::default();
        let (mut v, mut r) = pops();
        let rep = write_step(&mut v, &mut r, &pt(&[0.2, -0.4]), 0, 0.8, &cfg).unwrap();
        assert_eq!(rep.nucleations, 1);
        assert_eq!(v.len(), 1);
        assert_eq!(r.len(), 1);
        assert!((v.particles[0].amplitude - cfg.eta_base * 0.8).abs() < 1e-15);
        assert_eq!(r.particles[0].amplitude, 0.0);
        assert_eq!(v.particles[0].id, r.particles[0].id);
        assert_eq!(v.particles[0].sigma, cfg.sigma_star);
        assert!(!v.particles[0].crystallized);
    }

    #[test]
    fn same_context_write_at_center() {
        let cfg = EngineConfig {
            eta_base: 0.5,
            v_max: 1.0,
            ..EngineConfig::default()
        };
        let (mut v, mut r) = pops();
        v.particles
            .push(Particle::transient(0, pt(&[1.0, 1.0]), 0.0, 0.64, 0.06, 0, 20));
        let rep = write_step(&mut v, &mut r, &pt(&[1.0, 1.0]), 0, 0.4, &cfg).unwrap();
        assert_eq!(rep.nucleations, 0);
        assert!((v.particles[0].amplitude - 0.2).abs() < 1e-15);
        assert_eq!(v.particles[0].local_history.iter().copied().collect::<Vec<_>>(), vec![0.4]);
        assert_eq!(v.particles[0].update_count, 1);
    }

    #[test]
    fn cross_context_exposure_logs_raw_discrepancy() {
        let cfg = EngineConfig::default();
        let (mut v, mut r) = pops();
        let sigma = 1.0;
        // Place the particle so that K = 0.9 at the origin.
        let dist = (2.0 * sigma * sigma * (1.0f64 / 0.9).ln()).sqrt();
        let mut p = Particle::transient(0, pt(&[dist, 0.0]), 0.5, sigma, cfg.mu_cryst, 1, 20);
        p.crystallized = true;
        v.particles.push(p);
        write_step(&mut v, &mut r, &pt(&[0.0, 0.0]), 0, -0.7, &cfg).unwrap();
        let p = &v.particles[0];
        assert_eq!(p.cross_history.iter().copied().collect::<Vec<_>>(), vec![-0.7]);
        assert_eq!(p.cross_count, 1);
        assert_eq!(p.amplitude, 0.5);
        assert!(p.local_history.is_empty());
    }

    #[test]
    fn amplitude_is_clipped() {
        let cfg = EngineConfig {
            eta_base: 0.9,
            v_max: 1.0,
            ..EngineConfig::default()
        };
        let (mut v, mut r) = pops();
        v.particles
            .push(Particle::transient(0, pt(&[0.0]), 0.95, 1.0, 0.06, 0, 20));
        write_step(&mut v, &mut r, &pt(&[0.0]), 0, 1.0, &cfg).unwrap();
        assert_eq!(v.particles[0].amplitude, 1.0);
    }

    #[test]
    fn disabled_writes_touch_nothing() {
        let cfg = EngineConfig {
            writes_enabled: false,
            ..EngineConfig::default()
        };
        let (mut v, mut r) = pops();
        let rep = write_step(&mut v, &mut r, &pt(&[0.0]), 0, 1.0, &cfg).unwrap();
        assert_eq!(rep, WriteReport::default());
        assert!(v.is_empty() && r.is_empty());
    }

    #[test]
    fn responsiveness_target_examples() {
        let cfg = EngineConfig {
            w_max: 5.0,
            theta_w: 0.05,
            ..EngineConfig::default()
        };
        assert_eq!(responsiveness_target(0.0, &cfg), 5.0);
        assert_eq!(responsiveness_target(0.05, &cfg), 0.0);
        assert_eq!(responsiveness_target(1.0, &cfg), -5.0);
    }

    #[test]
    fn variance_skips_lifetime_transient() {
        let cfg = EngineConfig {
            transient_exclusion: 2,
            history_window: 20,
            ..EngineConfig::default()
        };
        let mut p = Particle::transient(0, pt(&[0.0]), 0.0, 1.0, 0.06, 0, 20);
        for v in [10.0, -10.0, 1.0, 3.0] {
            p.local_history.push(v);
            p.update_count += 1;
        }
        // Only [1, 3] remain: variance 1.
        assert_eq!(discrepancy_variance(&p, &cfg), Some(1.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cfg = EngineConfig::default();
        let (mut v, mut r) = pops();
        write_step(&mut v, &mut r, &pt(&[0.0, 0.0]), 0, 0.5, &cfg).unwrap();
        assert!(matches!(
            write_step(&mut v, &mut r, &pt(&[0.0]), 0, 0.5, &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
