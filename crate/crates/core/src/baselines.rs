//! Comparison learners on the same latent stream: a one-hidden-layer MLP
//! trained by SGD, and the same network with a small reservoir replay buffer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Census;
use crate::error::{Error, Result};
use crate::geometry::{check_dims, LatentPoint};
use crate::policy::{argmax_first, boltzmann_probabilities, sample_index};
use crate::protocol::{imposed_reward, Environment, EpochEvents, Learner, Step};

/// `input → hidden (ReLU) → 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    input: usize,
    hidden: usize,
    /// Row-major `hidden × input`.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    pub learning_rate: f64,
}

impl MlpModel {
    /// Uniform `±1/√fan_in` initialization.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, learning_rate: f64, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad learning rate {learning_rate}")));
        }
        let a1 = 1.0 / (input as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let mut u = |a: f64| rng.random_range(-a..a);
        let w1 = (0..hidden * input).map(|_| u(a1)).collect();
        let b1 = (0..hidden).map(|_| u(a1)).collect();
        let w2 = (0..hidden).map(|_| u(a2)).collect();
        let b2 = u(a2);
        Ok(Self {
            input,
            hidden,
            w1,
            b1,
            w2,
            b2,
            learning_rate,
        })
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Flat parameter vector `[w1, b1, w2, b2]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dims(self.param_count(), p.len())?;
        let (w1, rest) = p.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, rest) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
        Ok(())
    }

    fn hidden_pre(&self, z: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.input..(h + 1) * self.input];
                row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.b1[h]
            })
            .collect()
    }

    fn forward_raw(&self, z: &[f64]) -> f64 {
        self.hidden_pre(z)
            .iter()
            .zip(&self.w2)
            .map(|(a, w)| a.max(0.0) * w)
            .sum::<f64>()
            + self.b2
    }

    pub fn forward(&self, z: &LatentPoint) -> Result<f64> {
        check_dims(self.input, z.dim())?;
        Ok(self.forward_raw(z.coords()))
    }

    /// `∂out/∂θ` in [`params`](Self::params) order.
    pub fn output_gradient(&self, z: &LatentPoint) -> Result<Vec<f64>> {
        check_dims(self.input, z.dim())?;
        let z = z.coords();
        let pre = self.hidden_pre(z);
        let mut g = vec![0.0; self.param_count()];
        let (gw1, rest) = g.split_at_mut(self.w1.len());
        let (gb1, rest) = rest.split_at_mut(self.b1.len());
        let (gw2, gb2) = rest.split_at_mut(self.w2.len());
        for h in 0..self.hidden {
            let active = pre[h] > 0.0;
            gw2[h] = pre[h].max(0.0);
            if active {
                gb1[h] = self.w2[h];
                for i in 0..self.input {
                    gw1[h * self.input + i] = self.w2[h] * z[i];
                }
            }
        }
        gb2[0] = 1.0;
        Ok(g)
    }

    /// One SGD step on `½(out − target)²`; returns the pre-step loss.
    pub fn train_step(&mut self, z: &LatentPoint, target: f64) -> Result<f64> {
        if !target.is_finite() {
            return Err(Error::InvalidArgument(format!("target must be finite, got {target}")));
        }
        let err = self.forward(z)? - target;
        if err != 0.0 && self.learning_rate > 0.0 {
            let g = self.output_gradient(z)?;
            let step = self.learning_rate * err;
            let mut p = self.params();
            for (pi, gi) in p.iter_mut().zip(&g) {
                *pi -= step * gi;
            }
            self.set_params(&p)?;
        }
        Ok(0.5 * err * err)
    }
}

/// Fixed-capacity reservoir of `(latent, target)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    seen: u64,
    entries: Vec<(LatentPoint, f64)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            seen: 0,
            entries: Vec::with_capacity(capacity),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[(LatentPoint, f64)] {
        &self.entries
    }

    /// Reservoir insertion: every item of the stream ends up stored with
    /// probability `capacity / seen`.
    pub fn insert<R: Rng + ?Sized>(&mut self, z: LatentPoint, target: f64, rng: &mut R) {
        self.seen += 1;
        if self.entries.len() < self.capacity {
            self.entries.push((z, target));
        } else {
            let j = rng.random_range(0..self.seen);
            if (j as usize) < self.capacity {
                self.entries[j as usize] = (z, target);
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&(LatentPoint, f64)> {
        if self.entries.is_empty() {
            None
        } else {
            Some(&self.entries[rng.random_range(0..self.entries.len())])
        }
    }
}

/// Fresh step, then one replayed step, then reservoir insertion. Returns the
/// pre-step loss on the fresh sample.
pub fn replay_train_step<R: Rng + ?Sized>(
    model: &mut MlpModel,
    buffer: &mut ReplayBuffer,
    z: &LatentPoint,
    target: f64,
    rng: &mut R,
) -> Result<f64> {
    let loss = model.train_step(z, target)?;
    if let Some((rz, rt)) = buffer.sample(rng).cloned() {
        model.train_step(&rz, rt)?;
    }
    buffer.insert(z.clone(), target, rng);
    Ok(loss)
}

/// Greedy (`k = None`) or Boltzmann choice over per-candidate model outputs.
pub fn baseline_policy<R: Rng + ?Sized>(
    model: &MlpModel,
    candidates: &[LatentPoint],
    k: Option<f64>,
    rng: &mut R,
) -> Result<usize> {
    let scores = candidates
        .iter()
        .map(|z| model.forward(z))
        .collect::<Result<Vec<_>>>()?;
    match k {
        None => argmax_first(&scores).ok_or_else(|| Error::InvalidArgument("no candidates".into())),
        Some(k) => Ok(sample_index(&boltzmann_probabilities(&scores, k)?, rng)),
    }
}

/// MLP agent playing the same protocol as the particle memory. Training
/// samples with fixed responsiveness `k0`; evaluation is greedy.
#[derive(Debug, Clone)]
pub struct MlpLearner {
    pub model: MlpModel,
    pub buffer: Option<ReplayBuffer>,
    pub k0: f64,
}

impl MlpLearner {
    fn latents<E: Environment>(env: &E, x: &[f64]) -> Vec<LatentPoint> {
        (0..env.action_count()).map(|a| env.candidate(x, a).1).collect()
    }
}

impl<E: Environment> Learner<E> for MlpLearner {
    fn scores(&self, env: &E, x: &[f64], _phase: usize) -> Result<Vec<f64>> {
        Self::latents(env, x).iter().map(|z| self.model.forward(z)).collect()
    }

    fn train_step<R: Rng + ?Sized>(&mut self, env: &E, x: &[f64], phase: usize, rng: &mut R) -> Result<Step> {
        let latents = Self::latents(env, x);
        let action = baseline_policy(&self.model, &latents, Some(self.k0), rng)?;
        let correct = env.correct_action(x, phase);
        let target = imposed_reward(action, correct);
        let z = &latents[action];
        let out = self.model.forward(z)?;
        match self.buffer.as_mut() {
            Some(buf) => replay_train_step(&mut self.model, buf, z, target, rng)?,
            None => self.model.train_step(z, target)?,
        };
        Ok(Step {
            action,
            correct: action == correct,
            discrepancy: target - out,
            nucleated: 0,
        })
    }

    fn end_epoch(&mut self) -> Result<EpochEvents> {
        Ok(EpochEvents::default())
    }

    fn begin_phase(&mut self, _phase: usize) {}

    fn census(&self) -> Census {
        Census::default()
    }

    fn crystal_ids(&self) -> Vec<(usize, u64)> {
        Vec::new()
    }

    fn is_live(&self, _slot: usize, _id: u64) -> bool {
        false
    }
}
