//! Engine property checks shared by the acceptance run and the property tests.
//!
//! Every check draws its own inputs from a seeded stream and returns the
//! first violation it finds.

#![allow(dead_code)]

use ibf_core::engine::{
    lifecycle_epoch, read, read_value, write_step, Channel, ContextId, EngineConfig, Particle, ParticlePopulation,
};
use ibf_core::geometry::{gaussian_kernel, LatentPoint};
use ibf_core::policy::{boltzmann_probabilities, sample_index};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn point<R: Rng>(rng: &mut R, dim: usize, spread: f64) -> LatentPoint {
    LatentPoint::new((0..dim).map(|_| rng.random_range(-spread..spread)).collect()).unwrap()
}

/// Independent kernel: `exp(-|a-b|^2 / (2 s^2))` written out longhand.
pub fn oracle_kernel(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let mut sq = 0.0;
    for i in 0..a.len() {
        sq += (a[i] - b[i]).powi(2);
    }
    (-sq / (2.0 * sigma * sigma)).exp()
}

/// A random population pair in a legal lifecycle state.
pub fn random_population<R: Rng>(
    rng: &mut R,
    n: usize,
    dim: usize,
    contexts: u32,
) -> (ParticlePopulation, ParticlePopulation) {
    let mut value = ParticlePopulation::new(Channel::Value, 1000);
    let mut resp = ParticlePopulation::new(Channel::Responsiveness, 1000);
    for id in 0..n as u64 {
        let ctx: ContextId = rng.random_range(0..contexts);
        let sigma = rng.random_range(0.2..1.5);
        let mut p = Particle::transient(id, point(rng, dim, 2.0), rng.random_range(-1.0..1.0), sigma, 0.06, ctx, 20);
        p.crystallized = rng.random_bool(0.5);
        p.verified = p.crystallized && rng.random_bool(0.5);
        let mut w = p.clone();
        w.amplitude = rng.random_range(-5.0..5.0);
        value.particles.push(p);
        resp.particles.push(w);
    }
    value.next_id = n as u64;
    resp.next_id = n as u64;
    (value, resp)
}

fn gate(p: &Particle, ctx: ContextId) -> bool {
    p.birth_context == ctx || (p.crystallized && p.verified)
}

/// Symmetry, unit self-similarity, range and monotone decay with distance.
pub fn kernel_symmetry_and_monotonicity(seed: u64, trials: usize) -> Check {
    let mut r = rng(seed);
    for _ in 0..trials {
        let dim = r.random_range(1..6);
        let a = point(&mut r, dim, 3.0);
        let b = point(&mut r, dim, 3.0);
        let s = r.random_range(0.05..3.0);
        let kab = gaussian_kernel(&a, &b, s).unwrap();
        let kba = gaussian_kernel(&b, &a, s).unwrap();
        if kab != kba {
            return Err(format!("asymmetric kernel: {kab} vs {kba}"));
        }
        if gaussian_kernel(&a, &a, s).unwrap() != 1.0 {
            return Err("K(a, a) != 1".into());
        }
        if !(0.0..=1.0).contains(&kab) {
            return Err(format!("kernel out of range: {kab}"));
        }
        let dir: Vec<f64> = b.coords().iter().zip(a.coords()).map(|(x, y)| x - y).collect();
        let mut prev = 1.0;
        for step in 1..8 {
            let t = step as f64 * 0.2;
            let c = LatentPoint::new(a.coords().iter().zip(&dir).map(|(x, d)| x + t * d).collect()).unwrap();
            let k = gaussian_kernel(&a, &c, s).unwrap();
            if k > prev {
                return Err(format!("kernel increased with distance: {prev} -> {k}"));
            }
            prev = k;
        }
    }
    Ok(())
}

/// Gated readout against a brute-force sum over every particle.
pub fn readout_matches_brute_force(seed: u64, trials: usize) -> Check {
    let mut r = rng(seed);
    for _ in 0..trials {
        let dim = r.random_range(1..5);
        let n = r.random_range(0..30);
        let (value, resp) = random_population(&mut r, n, dim, 3);
        let z = point(&mut r, dim, 2.0);
        let ctx = r.random_range(0..3);
        let mut dr = 0.0;
        let (mut num, mut den) = (0.0, 0.0);
        for (v, w) in value.particles.iter().zip(&resp.particles) {
            if !gate(v, ctx) {
                continue;
            }
            let k = oracle_kernel(v.location.coords(), z.coords(), v.sigma);
            dr += v.amplitude * k;
            if w.crystallized {
                num += w.amplitude * k;
                den += k;
            }
        }
        let dk = if den > 0.0 { num / den } else { 0.0 };
        let got = read(&value, &resp, &z, ctx).unwrap();
        if (got.delta_r - dr).abs() > 1e-12 || (got.delta_k - dk).abs() > 1e-12 {
            return Err(format!("readout ({}, {}) != brute force ({dr}, {dk})", got.delta_r, got.delta_k));
        }
    }
    Ok(())
}

/// Particles the gate excludes have no influence on the readout, whatever
/// their amplitude.
pub fn gating_is_sound(seed: u64, populations: usize) -> Check {
    let mut r = rng(seed);
    for _ in 0..populations {
        let dim = r.random_range(1..4);
        let n = r.random_range(1..25);
        let (value, _) = random_population(&mut r, n, dim, 3);
        let ctx = r.random_range(0..3);
        let z = point(&mut r, dim, 2.0);
        let before = read_value(&value, &z, ctx).unwrap();
        let mut scrambled = value.clone();
        let mut readable_only = value.clone();
        readable_only.particles.retain(|p| gate(p, ctx));
        for p in scrambled.particles.iter_mut().filter(|p| !gate(p, ctx)) {
            p.amplitude = r.random_range(-1.0..1.0);
        }
        let after = read_value(&scrambled, &z, ctx).unwrap();
        let filtered = read_value(&readable_only, &z, ctx).unwrap();
        if before != after || before != filtered {
            return Err(format!("gated-off particles leaked: {before} vs {after} vs {filtered}"));
        }
        for p in value.iter() {
            if p.birth_context != ctx && !(p.crystallized && p.verified) && p.readable_in(ctx) {
                return Err(format!("particle {} readable without verification", p.id));
            }
        }
    }
    Ok(())
}

fn random_config<R: Rng>(r: &mut R) -> EngineConfig {
    EngineConfig {
        eta_base: r.random_range(0.1..2.0),
        eta_cryst: r.random_range(0.01..1.0),
        v_max: r.random_range(0.2..2.0),
        w_max: r.random_range(0.5..6.0),
        sigma_star: r.random_range(0.2..1.5),
        theta_create: r.random_range(0.05..0.9),
        n_cryst_min: r.random_range(1..4),
        n_cross_min: r.random_range(1..3),
        n_verify: r.random_range(1..4),
        theta_conv: r.random_range(0.05..1.0),
        crucible_enabled: r.random_bool(0.8),
        agency_enabled: r.random_bool(0.8),
        ..EngineConfig::default()
    }
}

/// State-machine invariants that must hold between any two operations.
pub fn state_is_legal(value: &ParticlePopulation, resp: &ParticlePopulation, cfg: &EngineConfig) -> Check {
    for (pop, amp_max) in [(value, cfg.v_max), (resp, cfg.w_max)] {
        for p in pop.iter() {
            if !p.amplitude.is_finite() || p.amplitude.abs() > amp_max {
                return Err(format!("particle {} amplitude {} outside ±{amp_max}", p.id, p.amplitude));
            }
            if p.verified && !p.crystallized {
                return Err(format!("particle {} verified but not crystallized", p.id));
            }
            let mu = if p.crystallized { cfg.mu_cryst } else { cfg.mu_base };
            if p.decay_rate != mu {
                return Err(format!("particle {} decays at {} in the wrong regime", p.id, p.decay_rate));
            }
        }
    }
    Ok(())
}

/// Capacity holds after every epoch boundary; writes may overshoot in between.
pub fn within_capacity(value: &ParticlePopulation, resp: &ParticlePopulation) -> Check {
    for pop in [value, resp] {
        if pop.len() > pop.capacity {
            return Err(format!("population over capacity after lifecycle: {} > {}", pop.len(), pop.capacity));
        }
    }
    Ok(())
}

/// Random interleavings of writes, lifecycle epochs and context switches
/// never break amplitude bounds or the lifecycle state machine.
pub fn random_sequences_stay_legal(seed: u64, sequences: usize) -> Check {
    let mut r = rng(seed);
    for _ in 0..sequences {
        let cfg = EngineConfig {
            capacity: r.random_range(2..12),
            ..random_config(&mut r)
        };
        let dim = r.random_range(1..3);
        let mut value = ParticlePopulation::new(Channel::Value, cfg.capacity);
        let mut resp = ParticlePopulation::new(Channel::Responsiveness, cfg.capacity);
        let mut ctx: ContextId = 0;
        for _ in 0..r.random_range(1..12) {
            match r.random_range(0..10) {
                0..=6 => {
                    let z = point(&mut r, dim, 1.0);
                    let d = r.random_range(-5.0..5.0);
                    write_step(&mut value, &mut resp, &z, ctx, d, &cfg).map_err(|e| e.to_string())?;
                }
                7 | 8 => {
                    let before: Vec<(u64, bool, bool)> =
                        value.iter().map(|p| (p.id, p.crystallized, p.verified)).collect();
                    let rep = lifecycle_epoch(&mut value, &mut resp, &cfg).map_err(|e| e.to_string())?;
                    within_capacity(&value, &resp)?;
                    for id in &rep.dissolved_ids {
                        match before.iter().find(|b| b.0 == *id) {
                            Some((_, true, _)) => {}
                            _ => return Err(format!("particle {id} dissolved without being crystallized")),
                        }
                        if let Some(p) = value.find(*id) {
                            if p.crystallized || p.cross_count != 0 {
                                return Err(format!("dissolved particle {id} kept crystal state"));
                            }
                        }
                    }
                }
                _ => {
                    ctx = (ctx + 1) % 3;
                    value.particles.iter_mut().for_each(|p| p.verified = false);
                    resp.particles.iter_mut().for_each(|p| p.verified = false);
                }
            }
            state_is_legal(&value, &resp, &cfg)?;
        }
    }
    Ok(())
}

/// Replays a logged write sequence against one crystallized particle of each
/// context and rebuilds its two histories by hand: kernel-local `D·K` for
/// same-context writes and raw `D` for cross-context exposure, both only at
/// activations of at least `theta_exposure`.
pub fn histories_match_replayed_log(seed: u64, logs: usize) -> Check {
    let mut r = rng(seed);
    for _ in 0..logs {
        let cfg = EngineConfig {
            theta_create: 1e-300,
            history_window: 50,
            ..EngineConfig::default()
        };
        let dim = 2;
        let mut value = ParticlePopulation::new(Channel::Value, 10);
        let mut resp = ParticlePopulation::new(Channel::Responsiveness, 10);
        for (id, ctx) in [(0u64, 0u32), (1, 1)] {
            let mut p = Particle::transient(id, point(&mut r, dim, 0.3), 0.0, 0.6, cfg.mu_base, ctx, 50);
            p.crystallized = true;
            p.decay_rate = cfg.mu_cryst;
            let mut w = p.clone();
            w.amplitude = 0.0;
            value.particles.push(p);
            resp.particles.push(w);
        }
        value.next_id = 2;
        resp.next_id = 2;
        let mut expected_local: [Vec<f64>; 2] = [vec![], vec![]];
        let mut expected_cross: [Vec<f64>; 2] = [vec![], vec![]];
        let mut expected_amp = [0.0f64; 2];
        let locs: Vec<Vec<f64>> = value.iter().map(|p| p.location.coords().to_vec()).collect();
        for _ in 0..40 {
            let z = point(&mut r, dim, 1.0);
            let ctx: ContextId = r.random_range(0..2);
            let d = r.random_range(-1.0..1.0);
            write_step(&mut value, &mut resp, &z, ctx, d, &cfg).map_err(|e| e.to_string())?;
            for i in 0..2 {
                let k = oracle_kernel(&locs[i], z.coords(), 0.6);
                if i as u32 == ctx {
                    expected_amp[i] = (expected_amp[i] + cfg.eta_cryst * k * d).clamp(-cfg.v_max, cfg.v_max);
                    if k >= cfg.theta_exposure {
                        expected_local[i].push(d * k);
                    }
                } else if k >= cfg.theta_exposure {
                    expected_cross[i].push(d);
                }
            }
        }
        for i in 0..2 {
            let p = &value.particles[i];
            let local: Vec<f64> = p.local_history.iter().copied().collect();
            let cross: Vec<f64> = p.cross_history.iter().copied().collect();
            let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
            if !close(&local, &expected_local[i]) {
                return Err(format!("particle {i} local history {local:?} != {:?}", expected_local[i]));
            }
            if !close(&cross, &expected_cross[i]) {
                return Err(format!("particle {i} cross history {cross:?} != {:?}", expected_cross[i]));
            }
            if p.update_count as usize != expected_local[i].len() || p.cross_count as usize != expected_cross[i].len() {
                return Err(format!("particle {i} counts disagree with its histories"));
            }
            if (p.amplitude - expected_amp[i]).abs() > 1e-12 {
                return Err(format!("particle {i} amplitude {} != {}", p.amplitude, expected_amp[i]));
            }
        }
    }
    Ok(())
}

/// Fraction of amplitude left after 100 idle epochs, for a crystal and a
/// transient particle.
pub fn idle_retention(epochs: usize) -> (f64, f64) {
    let cfg = EngineConfig::default();
    let mut value = ParticlePopulation::new(Channel::Value, 10);
    let mut resp = ParticlePopulation::new(Channel::Responsiveness, 10);
    let mut crystal = Particle::transient(0, LatentPoint::new(vec![0.0, 0.0]).unwrap(), 0.5, 0.6, cfg.mu_base, 0, 20);
    crystal.crystallized = true;
    crystal.decay_rate = cfg.mu_cryst;
    let transient = Particle::transient(1, LatentPoint::new(vec![10.0, 10.0]).unwrap(), 0.5, 0.6, cfg.mu_base, 0, 20);
    value.particles = vec![crystal, transient];
    for _ in 0..epochs {
        lifecycle_epoch(&mut value, &mut resp, &cfg).unwrap();
    }
    let amp = |id| value.find(id).map_or(0.0, |p| p.amplitude / 0.5);
    (amp(0), amp(1))
}

pub fn decay_bridges_timescales() -> Check {
    let (crystal, transient) = idle_retention(100);
    let c_expected = 0.999f64.powi(100);
    let t_expected = 0.94f64.powi(100);
    if (crystal - c_expected).abs() > 1e-12 || (crystal - 0.905).abs() > 1e-3 {
        return Err(format!("crystal retained {crystal}, expected {c_expected}"));
    }
    if (transient - t_expected).abs() > 1e-12 || (transient - 0.002).abs() > 5e-4 {
        return Err(format!("transient retained {transient}, expected {t_expected}"));
    }
    Ok(())
}

/// Normalization, invariance to a common score shift, and sampling
/// frequencies within three standard errors of the probabilities.
pub fn softmax_properties(seed: u64, trials: usize, draws: usize) -> Check {
    let mut r = rng(seed);
    for _ in 0..trials {
        let n = r.random_range(1..8);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let k = r.random_range(0.1..20.0);
        let p = boltzmann_probabilities(&scores, k).map_err(|e| e.to_string())?;
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 || p.iter().any(|x| *x < 0.0) {
            return Err(format!("probabilities sum to {total}"));
        }
        let shift = r.random_range(-100.0..100.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let q = boltzmann_probabilities(&shifted, k).map_err(|e| e.to_string())?;
        if p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(format!("shift changed probabilities: {p:?} vs {q:?}"));
        }
        let z: f64 = scores.iter().map(|s| (k * s).exp()).sum();
        for (pi, s) in p.iter().zip(&scores) {
            if (pi - (k * s).exp() / z).abs() > 1e-9 {
                return Err("softmax disagrees with the direct formula".into());
            }
        }
    }
    let scores = [0.3, -0.2, 0.9, 0.1];
    let p = boltzmann_probabilities(&scores, 2.0).map_err(|e| e.to_string())?;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        counts[sample_index(&p, &mut r)] += 1;
    }
    for i in 0..4 {
        let expected = p[i] * draws as f64;
        let sd = (draws as f64 * p[i] * (1.0 - p[i])).sqrt();
        if (counts[i] as f64 - expected).abs() > 3.0 * sd {
            return Err(format!("action {i}: {} draws, expected {expected:.0} ± {sd:.0}", counts[i]));
        }
    }
    Ok(())
}

/// Central differences of the MLP output and squared loss against the
/// analytic gradient, over `draws` random parameter vectors. Returns the
/// worst relative error seen.
pub fn mlp_gradient_worst_error(seed: u64, draws: usize, step: f64) -> Result<f64, String> {
    use ibf_core::baselines::MlpModel;
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let mut m = MlpModel::new(6, 8, 0.0, &mut r).map_err(|e| e.to_string())?;
        let theta: Vec<f64> = (0..m.param_count()).map(|_| r.random_range(-1.0..1.0)).collect();
        m.set_params(&theta).map_err(|e| e.to_string())?;
        let z = point(&mut r, 6, 1.5);
        let target = r.random_range(-1.0..1.0);
        let out = m.forward(&z).map_err(|e| e.to_string())?;
        let grad = m.output_gradient(&z).map_err(|e| e.to_string())?;
        let mut probe = m.clone();
        for i in 0..theta.len() {
            let mut at = |delta: f64| {
                let mut t = theta.clone();
                t[i] += delta;
                probe.set_params(&t).unwrap();
                probe.forward(&z).unwrap()
            };
            let (hi, lo) = (at(step), at(-step));
            let numeric_out = (hi - lo) / (2.0 * step);
            let numeric_loss = (0.5 * (hi - target).powi(2) - 0.5 * (lo - target).powi(2)) / (2.0 * step);
            let analytic_loss = (out - target) * grad[i];
            for (a, n) in [(grad[i], numeric_out), (analytic_loss, numeric_loss)] {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                if (a - n).abs() > 1e-10 {
                    worst = worst.max(rel);
                }
            }
        }
    }
    Ok(worst)
}
