//! Frozen baseline evaluators: `sigmoid(gain · (w·z + b))` with random affine
//! initialization. Nothing mutates them after construction.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::std_dev;
use crate::error::{Error, Result};
use crate::geometry::{check_dims, LatentPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenEvaluator {
    weights: Vec<f64>,
    bias: f64,
    gain: f64,
}

impl FrozenEvaluator {
    /// Standard-normal weights and bias, scaled by `1/√dim`.
    pub fn random<R: Rng + ?Sized>(dim: usize, gain: f64, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("evaluator dimension must be positive".into()));
        }
        let scale = 1.0 / (dim as f64).sqrt();
        let weights = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        let bias = rng.sample::<f64, _>(StandardNormal) * scale;
        Self::from_parts(weights, bias, gain)
    }

    pub fn from_parts(weights: Vec<f64>, bias: f64, gain: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::InvalidArgument(format!("gain must be positive, got {gain}")));
        }
        if weights.is_empty() || weights.iter().chain([&bias]).any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("evaluator weights must be finite".into()));
        }
        Ok(Self { weights, bias, gain })
    }

    /// Smallest gain from the doubling ladder `start, 2·start, …` whose output
    /// spread over `samples` reaches `floor`.
    pub fn with_minimal_gain<R: Rng + ?Sized>(
        dim: usize,
        start: f64,
        floor: f64,
        samples: &[LatentPoint],
        rng: &mut R,
    ) -> Result<Self> {
        let mut ev = Self::random(dim, start, rng)?;
        for _ in 0..40 {
            if ev.spread(samples)? >= floor {
                return Ok(ev);
            }
            ev.gain *= 2.0;
        }
        Err(Error::DegenerateGeometry(format!(
            "evaluator spread stays below {floor} at any gain"
        )))
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn evaluate(&self, z: &LatentPoint) -> Result<f64> {
        check_dims(self.weights.len(), z.dim())?;
        Ok(self.evaluate_unchecked(z.coords()))
    }

    pub(crate) fn evaluate_unchecked(&self, z: &[f64]) -> f64 {
        let a: f64 = self.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.bias;
        1.0 / (1.0 + (-self.gain * a).exp())
    }

    /// Sample standard deviation of the output over `samples`.
    pub fn spread(&self, samples: &[LatentPoint]) -> Result<f64> {
        let values = samples
            .iter()
            .map(|z| self.evaluate(z))
            .collect::<Result<Vec<_>>>()?;
        Ok(std_dev(&values))
    }

    /// SHA-256 over the parameter bit patterns, hex encoded.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.weights.iter().chain([&self.bias, &self.gain]) {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
