//! Two-dimensional two-context toy world. Inputs are standard-normal points in
//! the plane; action scores combine an invariant term on `x₁` with a
//! context-signed term on `x₂`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::{ContextId, EngineConfig};
use crate::error::{Error, Result};
use crate::evaluator::FrozenEvaluator;
use crate::experiment::{
    apply_overrides, check_override_scope, quantize, select_overrides, sig6, stream_rng,
    CalibrationRecord, Diagnostics, Domain, ExperimentReport, KEffSummary, Metrics,
    RunOutput, RunSpec, RunStatus, Snapshot, SnapshotParticle,
};
use crate::geometry::{covariance_spectrum, participation_ratio, LatentPoint};
use crate::protocol::{run_protocol, Environment, IbfAgent, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Context sign in A; B uses `−u_a`.
    pub u_a: f64,
    pub p: [f64; 2],
    pub r: [f64; 2],
    pub epochs_per_phase: usize,
    pub interactions_per_epoch: usize,
    /// Held-out states per context for greedy accuracy.
    pub eval_states: usize,
    /// Gain of the frozen baseline; small values keep it near 0.5.
    pub baseline_gain: f64,
    /// Bandwidth ratio `σ / √d_eff`.
    pub kappa: f64,
    pub calibration_samples: usize,
    pub grid_resolution: usize,
    pub grid_extent: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            u_a: 1.0,
            p: [1.0, -1.0],
            r: [1.0, -1.0],
            epochs_per_phase: 25,
            interactions_per_epoch: 200,
            eval_states: 2000,
            baseline_gain: 0.25,
            kappa: 0.45,
            calibration_samples: 5000,
            grid_resolution: 60,
            grid_extent: 3.0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_phase == 0 || self.interactions_per_epoch == 0 || self.eval_states == 0 {
            return Err(Error::InvalidArgument("toy schedule sizes must be positive".into()));
        }
        if !(self.baseline_gain > 0.0 && self.kappa > 0.0 && self.grid_extent > 0.0) {
            return Err(Error::InvalidArgument("toy gains and extents must be positive".into()));
        }
        if self.calibration_samples < 2 || self.grid_resolution == 0 {
            return Err(Error::InvalidArgument("toy sample counts too small".into()));
        }
        Ok(())
    }

    /// Context sign: `u_a` in A, `−u_a` in B.
    pub fn u(&self, phase: usize) -> f64 {
        if phase == 0 {
            self.u_a
        } else {
            -self.u_a
        }
    }
}

/// `β·x₁·p_j + α·u_c·x₂·r_j`.
pub fn toy_score(x: &[f64; 2], phase: usize, j: usize, cfg: &ToyConfig) -> f64 {
    cfg.beta * x[0] * cfg.p[j] + cfg.alpha * cfg.u(phase) * x[1] * cfg.r[j]
}

/// Highest-scoring action, ties to action 0.
pub fn toy_correct_action(x: &[f64; 2], phase: usize, cfg: &ToyConfig) -> usize {
    if toy_score(x, phase, 1, cfg) > toy_score(x, phase, 0, cfg) {
        1
    } else {
        0
    }
}

pub fn toy_imposed_reward(chosen: usize, correct: usize) -> f64 {
    crate::protocol::imposed_reward(chosen, correct)
}

/// Engine defaults for the toy before calibration fills in `sigma_star`.
pub fn toy_engine_defaults() -> EngineConfig {
    EngineConfig::default()
}

/// Toy world with a per-action memory slot; candidates share the input point.
pub struct ToyEnv {
    pub config: ToyConfig,
    pub evaluator: FrozenEvaluator,
}

impl ToyEnv {
    fn pair(x: &[f64]) -> [f64; 2] {
        [x[0], x[1]]
    }
}

impl Environment for ToyEnv {
    fn action_count(&self) -> usize {
        2
    }

    fn memory_count(&self) -> usize {
        2
    }

    fn candidate(&self, x: &[f64], action: usize) -> (usize, LatentPoint) {
        (action, self.query_latent(x))
    }

    fn query_latent(&self, x: &[f64]) -> LatentPoint {
        LatentPoint::new(x[..2].to_vec()).expect("finite toy state")
    }

    fn base_score(&self, x: &[f64], action: usize) -> f64 {
        let mut z = [x[0], x[1], 0.0, 0.0];
        z[2 + action] = 1.0;
        self.evaluator.evaluate_unchecked(&z)
    }

    fn correct_action(&self, x: &[f64], phase: usize) -> usize {
        toy_correct_action(&Self::pair(x), phase, &self.config)
    }
}

pub(crate) fn normal_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Cell centers of a square grid, row-major from the top row.
pub(crate) fn grid_points(resolution: usize, extent: f64) -> Vec<[f64; 2]> {
    let step = 2.0 * extent / resolution as f64;
    let mut out = Vec::with_capacity(resolution * resolution);
    for row in 0..resolution {
        let y = extent - (row as f64 + 0.5) * step;
        for col in 0..resolution {
            out.push([-extent + (col as f64 + 0.5) * step, y]);
        }
    }
    out
}

/// Bandwidth by transplanting the ratio `kappa` onto the measured `d_eff` of
/// the input distribution.
pub fn toy_calibration<R: Rng + ?Sized>(cfg: &ToyConfig, rng: &mut R) -> Result<CalibrationRecord> {
    let samples = (0..cfg.calibration_samples)
        .map(|_| LatentPoint::new(normal_vec(rng, 2)))
        .collect::<Result<Vec<_>>>()?;
    let d_eff = participation_ratio(&covariance_spectrum(&samples)?)?;
    Ok(CalibrationRecord {
        method: "kappa_transplant".into(),
        d_eff: sig6(d_eff),
        sigma_star: sig6(cfg.kappa * d_eff.sqrt()),
        kappa: cfg.kappa,
        sibling_distance_median: None,
        epsilon_bleed: None,
    })
}

/// Snapshot cadence in epochs.
pub const SNAPSHOT_EVERY: usize = 5;

/// Preference field `δR₀ − δR₁` over the grid, plus particle markers.
pub fn toy_snapshot(agent: &IbfAgent, cfg: &ToyConfig, phase: usize, epoch: usize) -> Result<Snapshot> {
    let ctx = phase as ContextId;
    let values = grid_points(cfg.grid_resolution, cfg.grid_extent)
        .into_iter()
        .map(|g| {
            let z = LatentPoint::new(g.to_vec())?;
            Ok(agent.memories[0].delta_r(&z, ctx)? - agent.memories[1].delta_r(&z, ctx)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let particles = agent
        .memories
        .iter()
        .enumerate()
        .flat_map(|(action, m)| {
            m.value.iter().map(move |p| SnapshotParticle {
                x: p.location.coords()[0],
                y: p.location.coords()[1],
                action,
                crystallized: p.crystallized,
                readable: p.readable_in(ctx),
            })
        })
        .collect();
    Ok(Snapshot {
        phase,
        epoch,
        extent: cfg.grid_extent,
        resolution: cfg.grid_resolution,
        values,
        particles,
    })
}

pub fn run_toy(spec: &RunSpec) -> Result<RunOutput> {
    if spec.domain != Domain::Toy {
        return Err(Error::InvalidArgument("run_toy needs a toy spec".into()));
    }
    spec.validate()?;
    check_override_scope(&spec.overrides, Domain::Toy)?;
    let cfg: ToyConfig = apply_overrides(&ToyConfig::default(), &select_overrides(&spec.overrides, Some("toy")))?;
    cfg.validate()?;

    let mut env_rng = stream_rng(Domain::Toy, "env", spec.seed);
    let calibration = toy_calibration(&cfg, &mut env_rng)?;
    let mut engine = toy_engine_defaults();
    engine.sigma_star = calibration.sigma_star;
    let mut engine: EngineConfig = apply_overrides(&engine, &select_overrides(&spec.overrides, None))?;
    spec.condition.apply(&mut engine);
    engine.validate()?;

    let evaluator = FrozenEvaluator::random(4, cfg.baseline_gain, &mut env_rng)?;
    let eval_sets: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|_| (0..cfg.eval_states).map(|_| normal_vec(&mut env_rng, 2)).collect())
        .collect();
    let env = ToyEnv {
        config: cfg.clone(),
        evaluator,
    };
    let hash_before = env.evaluator.param_hash();
    let spread_samples: Vec<LatentPoint> = eval_sets[0]
        .iter()
        .flat_map(|x| {
            (0..2).map(move |a| {
                let mut z = vec![x[0], x[1], 0.0, 0.0];
                z[2 + a] = 1.0;
                LatentPoint::new(z)
            })
        })
        .collect::<Result<_>>()?;
    let spread = env.evaluator.spread(&spread_samples)?;

    let mut agent = IbfAgent::new(engine.clone(), 2)?;
    let mut agent_rng = stream_rng(Domain::Toy, spec.condition.name(), spec.seed);
    let mut snapshots = Vec::new();
    let schedule = Schedule {
        phases: 2,
        epochs_per_phase: cfg.epochs_per_phase,
        interactions_per_epoch: cfg.interactions_per_epoch,
    };
    let outcome = run_protocol(
        &env,
        &mut agent,
        schedule,
        &eval_sets,
        || normal_vec(&mut env_rng, 2),
        &mut agent_rng,
        |a: &IbfAgent, phase, epoch| {
            if spec.snapshots && (epoch + 1) % SNAPSHOT_EVERY == 0 {
                snapshots.push(toy_snapshot(a, &cfg, phase, epoch)?);
            }
            Ok(())
        },
    )?;

    let k_values = grid_points(cfg.grid_resolution, cfg.grid_extent)
        .into_iter()
        .map(|g| agent.k_eff(&env, &g, 1))
        .collect::<Result<Vec<_>>>()?;
    let k_eff = KEffSummary::of(&k_values);
    let min_var = outcome
        .census
        .iter()
        .map(|e| e.var_d)
        .fold(f64::INFINITY, f64::min);
    let hash_after = env.evaluator.param_hash();

    let report = ExperimentReport {
        spec: spec.clone(),
        status: RunStatus::Ok,
        error: None,
        metrics: Some(Metrics::new(outcome.acc_a, outcome.acc_a_final, outcome.phase_end_accuracy)),
        census: outcome.census,
        cohort: outcome.cohort,
        k_eff: Some(k_eff),
        calibration: Some(calibration),
        engine: Some(engine),
        domain_config: Some(serde_json::to_value(&cfg).map_err(|e| Error::Parse(e.to_string()))?),
        diagnostics: Some(Diagnostics {
            min_epoch_var_d: min_var,
            var_d_positive: min_var > 0.0,
            evaluator_spread: spread,
            evaluator_frozen: hash_before == hash_after,
            evaluator_hash: hash_after,
        }),
    };
    Ok(RunOutput {
        report: quantize(&report)?,
        snapshots,
    })
}
