//! Rotating Rules World: four-dimensional inputs, four actions, three phases.
//! Scores add an invariant term, a shared term whose weight shrinks phase by
//! phase, and a contextual term on the first two coordinates whose direction
//! flips from A to B and turns to a fresh direction in C.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{MlpLearner, MlpModel, ReplayBuffer};
use crate::calibration::{calibrate_sigma, sibling_distances, CalibrationResult, DEFAULT_EPSILON_BLEED};
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::evaluator::FrozenEvaluator;
use crate::experiment::{
    apply_overrides, check_override_scope, quantize, select_overrides, sig6, stream_rng,
    CalibrationRecord, Condition, Diagnostics, Domain, ExperimentReport, KEffSummary, Metrics,
    RunOutput, RunSpec, RunStatus,
};
use crate::geometry::LatentPoint;
use crate::protocol::{run_protocol, Environment, IbfAgent, Learner, ProtocolOutcome, Schedule};
use crate::toy::normal_vec;

pub const INPUT_DIM: usize = 4;
pub const ACTIONS: usize = 4;
pub const PHASES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrwConfig {
    pub action_embed_scale: f64,
    pub epochs_per_phase: usize,
    pub points_per_epoch: usize,
    pub beta_inv: f64,
    pub beta_sh: f64,
    pub alpha_ctx: f64,
    /// Shared-term weight per phase.
    pub phase_weights: [f64; PHASES],
    /// Angle of the phase-A contextual direction; B is its reversal.
    pub r_a_angle: f64,
    pub inv_dir: [f64; INPUT_DIM],
    pub sh_dir: [f64; INPUT_DIM],
    pub p: [f64; ACTIONS],
    pub q: [f64; ACTIONS],
    pub rho: [f64; ACTIONS],
    pub eval_states: usize,
    pub calibration_samples: usize,
    pub epsilon_bleed: f64,
    /// First rung of the evaluator gain ladder.
    pub evaluator_gain_start: f64,
    pub spread_floor: f64,
    pub mlp_hidden: usize,
    pub mlp_learning_rate: f64,
    pub replay_capacity: usize,
}

impl Default for RrwConfig {
    fn default() -> Self {
        Self {
            action_embed_scale: 1.26,
            epochs_per_phase: 25,
            points_per_epoch: 1000,
            beta_inv: 1.0,
            beta_sh: 0.6,
            alpha_ctx: 1.0,
            phase_weights: [1.0, 0.7, 0.4],
            r_a_angle: 0.0,
            inv_dir: [0.0, 0.0, 1.0, 0.0],
            sh_dir: [0.0, 0.0, 0.0, 1.0],
            p: [1.0, 1.0, -1.0, -1.0],
            q: [1.0, -1.0, 1.0, -1.0],
            rho: [1.0, -1.0, -1.0, 1.0],
            eval_states: 2000,
            calibration_samples: 5000,
            epsilon_bleed: DEFAULT_EPSILON_BLEED,
            evaluator_gain_start: 0.05,
            spread_floor: 0.05,
            mlp_hidden: 64,
            mlp_learning_rate: 0.05,
            replay_capacity: 50,
        }
    }
}

fn is_unit(v: &[f64]) -> bool {
    (v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-12
}

impl RrwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.action_embed_scale >= 0.0 && self.action_embed_scale.is_finite()) {
            return Err(Error::InvalidArgument("action_embed_scale must be finite and nonnegative".into()));
        }
        if self.epochs_per_phase == 0 || self.points_per_epoch == 0 || self.eval_states == 0 {
            return Err(Error::InvalidArgument("rrw schedule sizes must be positive".into()));
        }
        if !(self.beta_inv > 0.0 && self.beta_sh > 0.0 && self.alpha_ctx > 0.0) {
            return Err(Error::InvalidArgument("score coefficients must be positive".into()));
        }
        if !is_unit(&self.inv_dir) || !is_unit(&self.sh_dir) {
            return Err(Error::InvalidArgument("inv_dir and sh_dir must be unit vectors".into()));
        }
        if self.calibration_samples < 2 || self.mlp_hidden == 0 || self.replay_capacity == 0 {
            return Err(Error::InvalidArgument("rrw sample counts too small".into()));
        }
        if !(self.evaluator_gain_start > 0.0 && self.spread_floor > 0.0) {
            return Err(Error::InvalidArgument("evaluator gain and floor must be positive".into()));
        }
        Ok(())
    }

    /// Contextual directions of all phases, with `r_C` at angle `c_angle`.
    pub fn contextual_dirs(&self, c_angle: f64) -> [[f64; 2]; PHASES] {
        let a = [self.r_a_angle.cos(), self.r_a_angle.sin()];
        [a, [-a[0], -a[1]], [c_angle.cos(), c_angle.sin()]]
    }
}

/// Score structure of one seed: the config plus its resolved directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrwWorld {
    pub config: RrwConfig,
    pub contextual_dirs: [[f64; 2]; PHASES],
}

impl RrwWorld {
    pub fn new(config: RrwConfig, c_angle: f64) -> Self {
        let contextual_dirs = config.contextual_dirs(c_angle);
        Self {
            config,
            contextual_dirs,
        }
    }

    /// Contextual term alone.
    pub fn contextual_term(&self, x: &[f64], phase: usize, j: usize) -> f64 {
        let r = self.contextual_dirs[phase];
        self.config.alpha_ctx * (x[0] * r[0] + x[1] * r[1]) * self.config.rho[j]
    }

    pub fn score(&self, x: &[f64], phase: usize, j: usize) -> f64 {
        let c = &self.config;
        let dot = |d: &[f64; INPUT_DIM]| d.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        c.beta_inv * dot(&c.inv_dir) * c.p[j]
            + c.beta_sh * c.phase_weights[phase] * dot(&c.sh_dir) * c.q[j]
            + self.contextual_term(x, phase, j)
    }

    /// Highest-scoring action, ties to the lowest index.
    pub fn correct_action(&self, x: &[f64], phase: usize) -> usize {
        let mut best = 0;
        let mut best_score = self.score(x, phase, 0);
        for j in 1..ACTIONS {
            let s = self.score(x, phase, j);
            if s > best_score {
                best = j;
                best_score = s;
            }
        }
        best
    }
}

/// `[x; scale·onehot(j)]`.
pub fn rrw_latent(x: &[f64], j: usize, scale: f64) -> Result<LatentPoint> {
    check_input(x)?;
    if j >= ACTIONS {
        return Err(Error::InvalidArgument(format!("action {j} out of range")));
    }
    let mut z = Vec::with_capacity(INPUT_DIM + ACTIONS);
    z.extend_from_slice(x);
    z.extend((0..ACTIONS).map(|a| if a == j { scale } else { 0.0 }));
    LatentPoint::new(z)
}

/// `[x; (scale/4)·1]`, the centroid of the four action latents of `x`.
pub fn rrw_state_latent(x: &[f64], scale: f64) -> Result<LatentPoint> {
    check_input(x)?;
    let mut z = Vec::with_capacity(INPUT_DIM + ACTIONS);
    z.extend_from_slice(x);
    z.extend(std::iter::repeat_n(scale / ACTIONS as f64, ACTIONS));
    LatentPoint::new(z)
}

fn check_input(x: &[f64]) -> Result<()> {
    if x.len() != INPUT_DIM {
        return Err(Error::DimensionMismatch {
            expected: INPUT_DIM,
            actual: x.len(),
        });
    }
    Ok(())
}

/// Bleed-rule calibration on state latents and their action siblings.
pub fn rrw_calibration(states: &[Vec<f64>], scale: f64, epsilon_bleed: f64) -> Result<CalibrationResult> {
    let samples = states
        .iter()
        .map(|x| rrw_state_latent(x, scale))
        .collect::<Result<Vec<_>>>()?;
    let embed = |x: &Vec<f64>, j: usize| rrw_latent(x, j, scale).expect("checked input");
    let sib = sibling_distances(states, embed, ACTIONS)?;
    calibrate_sigma(&samples, &sib, epsilon_bleed)
}

/// One shared memory over action-augmented latents.
pub struct RrwEnv {
    pub world: RrwWorld,
    pub evaluator: FrozenEvaluator,
}

impl Environment for RrwEnv {
    fn action_count(&self) -> usize {
        ACTIONS
    }

    fn memory_count(&self) -> usize {
        1
    }

    fn candidate(&self, x: &[f64], action: usize) -> (usize, LatentPoint) {
        (0, rrw_latent(x, action, self.world.config.action_embed_scale).expect("finite rrw state"))
    }

    fn query_latent(&self, x: &[f64]) -> LatentPoint {
        rrw_state_latent(x, self.world.config.action_embed_scale).expect("finite rrw state")
    }

    fn base_score(&self, x: &[f64], action: usize) -> f64 {
        self.evaluator.evaluate_unchecked(self.candidate(x, action).1.coords())
    }

    fn correct_action(&self, x: &[f64], phase: usize) -> usize {
        self.world.correct_action(x, phase)
    }
}

pub fn rrw_engine_defaults() -> EngineConfig {
    EngineConfig::default()
}

fn draw_states<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| normal_vec(rng, INPUT_DIM)).collect()
}

fn train<L: Learner<RrwEnv>>(
    env: &RrwEnv,
    learner: &mut L,
    eval_sets: &[Vec<Vec<f64>>],
    env_rng: &mut impl Rng,
    agent_rng: &mut impl Rng,
) -> Result<ProtocolOutcome> {
    let cfg = &env.world.config;
    let schedule = Schedule {
        phases: PHASES,
        epochs_per_phase: cfg.epochs_per_phase,
        interactions_per_epoch: cfg.points_per_epoch,
    };
    run_protocol(
        env,
        learner,
        schedule,
        eval_sets,
        || normal_vec(env_rng, INPUT_DIM),
        agent_rng,
        |_, _, _| Ok(()),
    )
}

pub fn run_rrw(spec: &RunSpec) -> Result<RunOutput> {
    if spec.domain != Domain::Rrw {
        return Err(Error::InvalidArgument("run_rrw needs an rrw spec".into()));
    }
    spec.validate()?;
    check_override_scope(&spec.overrides, Domain::Rrw)?;
    let cfg: RrwConfig = apply_overrides(&RrwConfig::default(), &select_overrides(&spec.overrides, Some("rrw")))?;
    cfg.validate()?;

    let mut env_rng = stream_rng(Domain::Rrw, "env", spec.seed);
    let cal_states = draw_states(&mut env_rng, cfg.calibration_samples);
    let cal = rrw_calibration(&cal_states, cfg.action_embed_scale, cfg.epsilon_bleed)?;
    let calibration = CalibrationRecord {
        method: "sibling_bleed".into(),
        d_eff: sig6(cal.d_eff),
        sigma_star: sig6(cal.sigma_star),
        kappa: sig6(cal.kappa),
        sibling_distance_median: Some(sig6(cal.sibling_distance_median)),
        epsilon_bleed: Some(cal.epsilon_bleed),
    };
    let mut engine = rrw_engine_defaults();
    engine.sigma_star = calibration.sigma_star;
    let mut engine: EngineConfig = apply_overrides(&engine, &select_overrides(&spec.overrides, None))?;
    spec.condition.apply(&mut engine);
    engine.validate()?;

    let spread_samples = cal_states
        .iter()
        .take(cfg.calibration_samples / ACTIONS)
        .flat_map(|x| (0..ACTIONS).map(move |j| (x, j)))
        .map(|(x, j)| rrw_latent(x, j, cfg.action_embed_scale))
        .collect::<Result<Vec<_>>>()?;
    let evaluator = FrozenEvaluator::with_minimal_gain(
        INPUT_DIM + ACTIONS,
        cfg.evaluator_gain_start,
        cfg.spread_floor,
        &spread_samples,
        &mut env_rng,
    )?;
    let c_angle = env_rng.random_range(0.0..TAU);
    let eval_sets: Vec<Vec<Vec<f64>>> = (0..PHASES).map(|_| draw_states(&mut env_rng, cfg.eval_states)).collect();
    let env = RrwEnv {
        world: RrwWorld::new(cfg.clone(), c_angle),
        evaluator,
    };
    let hash_before = env.evaluator.param_hash();
    let spread = env.evaluator.spread(&spread_samples)?;
    let mut agent_rng = stream_rng(Domain::Rrw, spec.condition.name(), spec.seed);

    let (outcome, k_eff) = if spec.condition.is_baseline_model() {
        let model = MlpModel::new(INPUT_DIM + ACTIONS, cfg.mlp_hidden, cfg.mlp_learning_rate, &mut agent_rng)?;
        let buffer = match spec.condition {
            Condition::Replay => Some(ReplayBuffer::new(cfg.replay_capacity)?),
            _ => None,
        };
        let mut learner = MlpLearner {
            model,
            buffer,
            k0: engine.k0,
        };
        (train(&env, &mut learner, &eval_sets, &mut env_rng, &mut agent_rng)?, None)
    } else {
        let mut agent = IbfAgent::new(engine.clone(), 1)?;
        let outcome = train(&env, &mut agent, &eval_sets, &mut env_rng, &mut agent_rng)?;
        let ks = eval_sets[PHASES - 1]
            .iter()
            .map(|x| agent.k_eff(&env, x, PHASES - 1))
            .collect::<Result<Vec<_>>>()?;
        (outcome, Some(KEffSummary::of(&ks)))
    };

    let min_var = outcome.census.iter().map(|e| e.var_d).fold(f64::INFINITY, f64::min);
    let hash_after = env.evaluator.param_hash();
    let domain_config = serde_json::to_value(&env.world).map_err(|e| Error::Parse(e.to_string()))?;
    let report = ExperimentReport {
        spec: spec.clone(),
        status: RunStatus::Ok,
        error: None,
        metrics: Some(Metrics::new(outcome.acc_a, outcome.acc_a_final, outcome.phase_end_accuracy)),
        census: outcome.census,
        cohort: outcome.cohort,
        k_eff,
        calibration: Some(calibration),
        engine: Some(engine),
        domain_config: Some(domain_config),
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
        snapshots: Vec::new(),
    })
}
