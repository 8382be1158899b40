//! The sequential-phase training protocol shared by both domains, and the
//! particle-memory agent that plays it.

use std::collections::HashSet;

use rand::Rng;

use crate::calibration::std_dev;
use crate::engine::{pooled_delta_k, Census, ContextId, EngineConfig, LifecycleReport, Memory};
use crate::error::{Error, Result};
use crate::experiment::{CohortCensus, EpochRecord};
use crate::geometry::LatentPoint;
use crate::policy::{argmax_first, select_action, ActionCandidate};

/// An analytically scored environment with a frozen baseline evaluator.
pub trait Environment {
    fn action_count(&self) -> usize;

    /// Number of memories the agent keeps (one per action slot or one shared).
    fn memory_count(&self) -> usize;

    /// Memory slot and latent of the candidate state reached by `action`.
    fn candidate(&self, x: &[f64], action: usize) -> (usize, LatentPoint);

    /// Point at which responsiveness is read for state `x`.
    fn query_latent(&self, x: &[f64]) -> LatentPoint;

    /// Frozen baseline coherence of the candidate reached by `action`.
    fn base_score(&self, x: &[f64], action: usize) -> f64;

    fn correct_action(&self, x: &[f64], phase: usize) -> usize;
}

/// Outcome of one training interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub action: usize,
    pub correct: bool,
    pub discrepancy: f64,
    pub nucleated: usize,
}

/// Epoch-boundary events of a learner, summed over its memories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochEvents {
    pub lifecycle: LifecycleReport,
    /// `(memory slot, particle id)` of value particles dissolved this epoch.
    pub dissolved: Vec<(usize, u64)>,
}

pub trait Learner<E: Environment> {
    /// Effective score of every action, in action order.
    fn scores(&self, env: &E, x: &[f64], phase: usize) -> Result<Vec<f64>>;

    /// Greedy evaluation choice: highest score, ties to the lowest action.
    fn greedy(&self, env: &E, x: &[f64], phase: usize) -> Result<usize> {
        let s = self.scores(env, x, phase)?;
        argmax_first(&s).ok_or_else(|| Error::InvalidArgument("no actions".into()))
    }

    fn train_step<R: Rng + ?Sized>(&mut self, env: &E, x: &[f64], phase: usize, rng: &mut R) -> Result<Step>;

    fn end_epoch(&mut self) -> Result<EpochEvents>;

    /// Called once at each phase boundary, before the first write of the phase.
    fn begin_phase(&mut self, phase: usize);

    fn census(&self) -> Census;

    /// `(memory slot, id)` of crystallized value particles.
    fn crystal_ids(&self) -> Vec<(usize, u64)>;

    fn is_live(&self, slot: usize, id: u64) -> bool;
}

/// Imposed truth: 1 for the correct action, 0 otherwise.
pub fn imposed_reward(chosen: usize, correct: usize) -> f64 {
    if chosen == correct {
        1.0
    } else {
        0.0
    }
}

/// Particle-memory agent.
#[derive(Debug, Clone)]
pub struct IbfAgent {
    pub memories: Vec<Memory>,
    pub config: EngineConfig,
}

impl IbfAgent {
    pub fn new(config: EngineConfig, memory_count: usize) -> Result<Self> {
        let memories = (0..memory_count)
            .map(|_| Memory::new(config.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { memories, config })
    }

    pub fn k_eff<E: Environment>(&self, env: &E, x: &[f64], phase: usize) -> Result<f64> {
        if !self.config.agency_enabled {
            return Ok(self.config.k0);
        }
        let q = env.query_latent(x);
        let parts = self
            .memories
            .iter()
            .map(|m| m.delta_k_parts(&q, phase as ContextId))
            .collect::<Result<Vec<_>>>()?;
        Ok((self.config.k0 + pooled_delta_k(parts)).max(self.config.k_min))
    }

    fn candidates<E: Environment>(&self, env: &E, x: &[f64], phase: usize) -> Result<Vec<(usize, ActionCandidate)>> {
        (0..env.action_count())
            .map(|a| {
                let (slot, z) = env.candidate(x, a);
                let delta = self.memories[slot].delta_r(&z, phase as ContextId)?;
                Ok((
                    slot,
                    ActionCandidate {
                        action_id: a,
                        score_eff: env.base_score(x, a) + delta,
                        latent: z,
                    },
                ))
            })
            .collect()
    }
}

impl<E: Environment> Learner<E> for IbfAgent {
    fn scores(&self, env: &E, x: &[f64], phase: usize) -> Result<Vec<f64>> {
        Ok(self
            .candidates(env, x, phase)?
            .into_iter()
            .map(|(_, c)| c.score_eff)
            .collect())
    }

    fn train_step<R: Rng + ?Sized>(&mut self, env: &E, x: &[f64], phase: usize, rng: &mut R) -> Result<Step> {
        let cands = self.candidates(env, x, phase)?;
        let k = self.k_eff(env, x, phase)?;
        let plain: Vec<ActionCandidate> = cands.iter().map(|(_, c)| c.clone()).collect();
        let (action, _) = select_action(&plain, k, rng)?;
        let (slot, chosen) = &cands[action];
        let correct = env.correct_action(x, phase);
        let d = imposed_reward(action, correct) - chosen.score_eff;
        let w = self.memories[*slot].write(&chosen.latent, phase as ContextId, d)?;
        Ok(Step {
            action,
            correct: action == correct,
            discrepancy: d,
            nucleated: w.nucleations,
        })
    }

    fn end_epoch(&mut self) -> Result<EpochEvents> {
        let mut events = EpochEvents::default();
        for (slot, m) in self.memories.iter_mut().enumerate() {
            let r = m.end_epoch()?;
            let l = &mut events.lifecycle;
            l.decayed += r.decayed;
            l.crystallized += r.crystallized;
            l.dissolved += r.dissolved;
            l.verified_granted += r.verified_granted;
            l.merged += r.merged;
            l.evicted += r.evicted;
            events.dissolved.extend(r.dissolved_ids.iter().map(|id| (slot, *id)));
        }
        Ok(events)
    }

    fn begin_phase(&mut self, _phase: usize) {
        for m in &mut self.memories {
            m.begin_context();
        }
    }

    fn census(&self) -> Census {
        self.memories
            .iter()
            .map(Memory::census)
            .fold(Census::default(), |a, b| a + b)
    }

    fn crystal_ids(&self) -> Vec<(usize, u64)> {
        self.memories
            .iter()
            .enumerate()
            .flat_map(|(slot, m)| {
                m.value
                    .iter()
                    .filter(|p| p.crystallized)
                    .map(move |p| (slot, p.id))
            })
            .collect()
    }

    fn is_live(&self, slot: usize, id: u64) -> bool {
        self.memories[slot].value.find(id).is_some()
    }
}

/// Schedule of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub phases: usize,
    pub epochs_per_phase: usize,
    pub interactions_per_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOutcome {
    pub acc_a: f64,
    pub acc_a_final: f64,
    pub phase_end_accuracy: Vec<f64>,
    pub census: Vec<EpochRecord>,
    pub cohort: Option<CohortCensus>,
}

/// Greedy accuracy over a fixed evaluation set.
pub fn accuracy<E: Environment, L: Learner<E>>(env: &E, learner: &L, states: &[Vec<f64>], phase: usize) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let mut hits = 0usize;
    for x in states {
        if learner.greedy(env, x, phase)? == env.correct_action(x, phase) {
            hits += 1;
        }
    }
    Ok(hits as f64 / states.len() as f64)
}

/// Trains through every phase in order. `draw_state` supplies the training
/// stream; `eval_sets[p]` is the held-out set of phase `p`. `on_epoch` runs
/// after each epoch boundary.
pub fn run_protocol<E, L, R, S, H>(
    env: &E,
    learner: &mut L,
    schedule: Schedule,
    eval_sets: &[Vec<Vec<f64>>],
    mut draw_state: S,
    rng: &mut R,
    mut on_epoch: H,
) -> Result<ProtocolOutcome>
where
    E: Environment,
    L: Learner<E>,
    R: Rng + ?Sized,
    S: FnMut() -> Vec<f64>,
    H: FnMut(&L, usize, usize) -> Result<()>,
{
    if eval_sets.len() < schedule.phases || schedule.phases == 0 {
        return Err(Error::InvalidArgument("one evaluation set per phase is required".into()));
    }
    let mut census = Vec::new();
    let mut phase_end_accuracy = Vec::new();
    let mut acc_a = 0.0;
    let mut cohort_ids: Vec<(usize, u64)> = Vec::new();
    let mut cohort_dissolved: HashSet<(usize, u64)> = HashSet::new();
    let mut cohort = None;
    let mut nucleated_end_a = 0;
    let observe_after = schedule.epochs_per_phase / 2;

    for phase in 0..schedule.phases {
        if phase > 0 {
            learner.begin_phase(phase);
        }
        for epoch in 0..schedule.epochs_per_phase {
            let mut ds = Vec::with_capacity(schedule.interactions_per_epoch);
            let mut hits = 0usize;
            let mut nucleated = 0usize;
            for _ in 0..schedule.interactions_per_epoch {
                let x = draw_state();
                let step = learner.train_step(env, &x, phase, rng)?;
                hits += step.correct as usize;
                ds.push(step.discrepancy);
                nucleated += step.nucleated;
            }
            let events = learner.end_epoch()?;
            let c = learner.census();
            let var_d = std_dev(&ds).powi(2);
            census.push(EpochRecord {
                phase,
                epoch,
                nucleated,
                crystallized_events: events.lifecycle.crystallized,
                dissolved: events.lifecycle.dissolved,
                verified_granted: events.lifecycle.verified_granted,
                merged: events.lifecycle.merged,
                evicted: events.lifecycle.evicted,
                live: c.live,
                crystallized: c.crystallized,
                verified: c.verified,
                train_accuracy: hits as f64 / schedule.interactions_per_epoch.max(1) as f64,
                var_d,
            });
            if phase == 1 {
                cohort_dissolved.extend(events.dissolved.iter().filter(|k| cohort_ids.contains(k)));
                if epoch + 1 == observe_after.max(1) {
                    let survivors = cohort_ids
                        .iter()
                        .filter(|k| !cohort_dissolved.contains(k) && learner.is_live(k.0, k.1))
                        .count();
                    cohort = Some(CohortCensus {
                        observed_after_epochs: epoch + 1,
                        nucleated_end_a,
                        crystals_end_a: cohort_ids.len(),
                        dissolved: cohort_dissolved.len(),
                        survivors,
                    });
                }
            }
            on_epoch(learner, phase, epoch)?;
        }
        let acc = accuracy(env, learner, &eval_sets[phase], phase)?;
        phase_end_accuracy.push(acc);
        if phase == 0 {
            acc_a = acc;
            cohort_ids = learner.crystal_ids();
            nucleated_end_a = census.iter().map(|e| e.nucleated).sum();
        }
    }
    let acc_a_final = if schedule.phases == 1 {
        acc_a
    } else {
        accuracy(env, learner, &eval_sets[0], 0)?
    };
    Ok(ProtocolOutcome {
        acc_a,
        acc_a_final,
        phase_end_accuracy,
        census,
        cohort,
    })
}
