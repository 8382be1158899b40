//! Geometric bandwidth calibration and discretization diagnostics.
//!
//! The training bandwidth comes straight from latent geometry: the median
//! distance between sibling encodings (one state, different actions) is
//! mapped to the bandwidth at which a correction deposited at one sibling
//! activates the other at exactly `epsilon_bleed`. No search is involved.

use serde::{Deserialize, Serialize};

use crate::engine::{EngineConfig, Memory};
use crate::error::{Error, Result};
use crate::geometry::{check_dims, covariance_spectrum, participation_ratio, LatentPoint};

/// Default bleed level: `e^-2`, which makes `σ* = d_med / 2`.
pub const DEFAULT_EPSILON_BLEED: f64 = 0.135_335_283_236_612_7;

/// Calibrated geometry of one encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub d_eff: f64,
    pub sibling_distance_median: f64,
    pub sigma_star: f64,
    /// `σ* / √d_eff`.
    pub kappa: f64,
    pub epsilon_bleed: f64,
}

/// Pairwise distances between the action-augmented encodings of each state,
/// all pairs `j < m`, flattened state by state.
pub fn sibling_distances<S, F>(states: &[S], embed: F, actions_per_state: usize) -> Result<Vec<f64>>
where
    F: Fn(&S, usize) -> LatentPoint,
{
    if states.is_empty() {
        return Err(Error::InvalidArgument("sibling_distances needs at least one state".into()));
    }
    let mut out = Vec::new();
    let mut dim: Option<usize> = None;
    for s in states {
        let latents: Vec<LatentPoint> = (0..actions_per_state).map(|a| embed(s, a)).collect();
        for z in &latents {
            match dim {
                None => dim = Some(z.dim()),
                Some(d) => check_dims(d, z.dim())?,
            }
        }
        for j in 0..latents.len() {
            for m in (j + 1)..latents.len() {
                out.push(latents[j].distance(&latents[m])?);
            }
        }
    }
    Ok(out)
}

/// Median, averaging the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Bandwidth whose kernel equals `epsilon_bleed` at distance `d_med`.
pub fn bleed_bandwidth(d_med: f64, epsilon_bleed: f64) -> Result<f64> {
    if !(epsilon_bleed > 0.0 && epsilon_bleed < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon_bleed must lie in (0,1), got {epsilon_bleed}"
        )));
    }
    if d_med.is_nan() || d_med <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "sibling distances are zero; actions are not separated in latent space".into(),
        ));
    }
    Ok(d_med / (2.0 * (1.0 / epsilon_bleed).ln()).sqrt())
}

pub fn calibrate_sigma(
    samples: &[LatentPoint],
    sibling_distances: &[f64],
    epsilon_bleed: f64,
) -> Result<CalibrationResult> {
    if samples.is_empty() || sibling_distances.is_empty() {
        return Err(Error::InvalidArgument(
            "calibration needs latent samples and sibling distances".into(),
        ));
    }
    let d_eff = participation_ratio(&covariance_spectrum(samples)?)?;
    let d_med = median(sibling_distances).unwrap_or(0.0);
    let sigma_star = bleed_bandwidth(d_med, epsilon_bleed)?;
    Ok(CalibrationResult {
        d_eff,
        sibling_distance_median: d_med,
        sigma_star,
        kappa: sigma_star / d_eff.sqrt(),
        epsilon_bleed,
    })
}

/// Minimum standard deviation of the baseline evaluator over sampled
/// latents (magnitude check).
pub const DEFAULT_SPREAD_FLOOR: f64 = 0.05;
/// Minimum fraction of states offering a positive increment.
pub const CONDITION_A_MIN_FRACTION: f64 = 0.95;
/// Merges per nucleation at or above which the bandwidth is flagged as too
/// coarse for the data.
pub const MERGE_RATE_FLAG: f64 = 0.5;

/// Outcome of the representation, increment and resolution checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub spread_std: f64,
    pub spread_floor: f64,
    pub spread_pass: bool,
    pub positive_increment_fraction: f64,
    pub positive_increment_pass: bool,
    pub merge_rate: Option<f64>,
    pub merge_rate_flagged: bool,
}

/// One state's candidate set: the current latent and one latent per action.
pub struct CandidateSet {
    pub current: LatentPoint,
    pub candidates: Vec<LatentPoint>,
}

/// Runs the magnitude check (evaluator spread over all candidate latents),
/// the increment check (share of states with some candidate scoring above the
/// current state) and, when `probe_latents` is given, the merge-rate probe.
pub fn condition_checks<S, E, C>(
    base_evaluator: E,
    sample_states: &[S],
    candidates_fn: C,
    spread_floor: f64,
    probe: Option<(&[LatentPoint], &EngineConfig)>,
) -> Result<DiagnosticsReport>
where
    E: Fn(&LatentPoint) -> f64,
    C: Fn(&S) -> CandidateSet,
{
    let mut values = Vec::new();
    let mut positive = 0usize;
    for s in sample_states {
        let set = candidates_fn(s);
        let current = base_evaluator(&set.current);
        let scores: Vec<f64> = set.candidates.iter().map(&base_evaluator).collect();
        if scores.iter().any(|sc| sc - current > 0.0) {
            positive += 1;
        }
        values.extend(scores);
    }
    let spread_std = std_dev(&values);
    let fraction = if sample_states.is_empty() {
        0.0
    } else {
        positive as f64 / sample_states.len() as f64
    };
    let merge_rate = match probe {
        Some((latents, cfg)) => Some(merge_rate_probe(latents, cfg)?),
        None => None,
    };
    Ok(DiagnosticsReport {
        spread_std,
        spread_floor,
        spread_pass: spread_std >= spread_floor,
        positive_increment_fraction: fraction,
        positive_increment_pass: fraction >= CONDITION_A_MIN_FRACTION,
        merge_rate,
        merge_rate_flagged: merge_rate.is_some_and(|r| r >= MERGE_RATE_FLAG),
    })
}

/// Deposits one particle per probe latent (one epoch each) and reports merges
/// per nucleation. Near 1 means the bandwidth cannot resolve the data.
pub fn merge_rate_probe(latents: &[LatentPoint], cfg: &EngineConfig) -> Result<f64> {
    let probe_cfg = EngineConfig {
        // Nucleate at every probe point unless it coincides with a particle.
        theta_create: 1.0 - 1e-12,
        crucible_enabled: false,
        ..cfg.clone()
    };
    let mut memory = Memory::new(probe_cfg)?;
    let mut nucleations = 0usize;
    let mut merges = 0usize;
    for z in latents {
        nucleations += memory.write(z, 0, 0.1)?.nucleations;
        merges += memory.end_epoch()?.merged;
    }
    Ok(if nucleations == 0 {
        0.0
    } else {
        merges as f64 / nucleations as f64
    })
}

pub(crate) fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::gaussian_kernel;

    fn pt(c: &[f64]) -> LatentPoint {
        LatentPoint::new(c.to_vec()).unwrap()
    }

    fn one_hot_embed(scale: f64) -> impl Fn(&[f64; 2], usize) -> LatentPoint {
        move |x, a| {
            let mut c = x.to_vec();
            let mut hot = vec![0.0; 4];
            hot[a] = scale;
            c.extend(hot);
            pt(&c)
        }
    }

    #[test]
    fn one_hot_siblings_are_scale_root_two_apart() {
        let states = [[0.3, -1.0], [2.0, 0.5]];
        let d = sibling_distances(&states, one_hot_embed(1.7), 4).unwrap();
        assert_eq!(d.len(), 12);
        for v in d {
            assert!((v - 1.7 * 2f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn sibling_counts() {
        let states = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(sibling_distances(&states, one_hot_embed(1.0), 1).unwrap().is_empty());
        assert_eq!(sibling_distances(&states, one_hot_embed(1.0), 2).unwrap().len(), 3);
    }

    #[test]
    fn inconsistent_encoder_is_rejected() {
        let states = [0usize, 1];
        let embed = |s: &usize, a: usize| LatentPoint::zeros(2 + s + a);
        assert!(sibling_distances(&states, embed, 2).is_err());
    }

    #[test]
    fn bleed_inversion() {
        let eps = (-2f64).exp();
        assert!((bleed_bandwidth(2.0, eps).unwrap() - 1.0).abs() < 1e-12);
        // The kernel at the median distance equals epsilon.
        let sigma = bleed_bandwidth(1.3, 0.2).unwrap();
        let k = gaussian_kernel(&pt(&[0.0]), &pt(&[1.3]), sigma).unwrap();
        assert!((k - 0.2).abs() < 1e-12);
        assert!(bleed_bandwidth(1.0, 1.0).is_err());
        assert!(matches!(bleed_bandwidth(0.0, 0.1), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn kappa_identity() {
        let samples = vec![pt(&[0.0, 0.0]), pt(&[1.0, 0.0]), pt(&[0.0, 2.0]), pt(&[1.0, 1.0])];
        let r = calibrate_sigma(&samples, &[2.0, 2.0], DEFAULT_EPSILON_BLEED).unwrap();
        assert!((r.sigma_star - 1.0).abs() < 1e-12);
        assert!((r.kappa - r.sigma_star / r.d_eff.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_siblings_are_degenerate() {
        let samples = vec![pt(&[0.0]), pt(&[1.0])];
        assert!(matches!(
            calibrate_sigma(&samples, &[0.0, 0.0], 0.1),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn constant_evaluator_fails_spread() {
        let states = [0.0f64, 1.0, 2.0];
        let rep = condition_checks(
            |_| 0.5,
            &states,
            |s| CandidateSet {
                current: pt(&[*s]),
                candidates: vec![pt(&[*s, 0.0]), pt(&[*s, 1.0])],
            },
            DEFAULT_SPREAD_FLOOR,
            None,
        )
        .unwrap();
        assert_eq!(rep.spread_std, 0.0);
        assert!(!rep.spread_pass);
        assert!(!rep.positive_increment_pass);
    }

    #[test]
    fn oracle_evaluator_always_offers_a_positive_increment() {
        // Linear score on [x; one-hot(a)]: the centroid scores the candidate
        // mean, so any state with a strictly best action has a positive step.
        let w = [0.7, -0.3, 0.1, 0.4, -0.2, 0.0];
        let eval = |z: &LatentPoint| z.coords().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let states: Vec<[f64; 2]> = (0..50).map(|i| [i as f64 * 0.1 - 2.0, 1.0 - i as f64 * 0.05]).collect();
        let embed = one_hot_embed(1.0);
        let rep = condition_checks(
            eval,
            &states,
            |s| {
                let candidates: Vec<LatentPoint> = (0..4).map(|a| embed(s, a)).collect();
                CandidateSet {
                    current: LatentPoint::centroid(&candidates).unwrap(),
                    candidates,
                }
            },
            DEFAULT_SPREAD_FLOOR,
            None,
        )
        .unwrap();
        assert_eq!(rep.positive_increment_fraction, 1.0);
        assert!(rep.positive_increment_pass);
    }

    #[test]
    fn coarse_bandwidth_is_flagged_by_merge_rate() {
        let latents: Vec<LatentPoint> = (0..40)
            .map(|i| pt(&[(i % 7) as f64 * 0.3, (i / 7) as f64 * 0.3]))
            .collect();
        let coarse = EngineConfig {
            sigma_star: 100.0,
            ..EngineConfig::default()
        };
        let rate = merge_rate_probe(&latents, &coarse).unwrap();
        assert!(rate > 0.9, "rate {rate}");
        let fine = EngineConfig {
            sigma_star: 0.05,
            ..EngineConfig::default()
        };
        assert_eq!(merge_rate_probe(&latents, &fine).unwrap(), 0.0);
    }
}
