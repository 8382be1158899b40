use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every rate and threshold of the read, write and lifecycle paths.
///
/// The four `*_enabled` switches realize the ablation conditions; they are all
/// on for the full system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Baseline responsiveness.
    pub k0: f64,
    pub k_min: f64,
    /// Write rate of transient particles.
    pub eta_base: f64,
    /// Write rate of crystallized particles.
    pub eta_cryst: f64,
    pub mu_base: f64,
    pub mu_cryst: f64,
    pub v_max: f64,
    pub w_max: f64,
    /// Bandwidth given to newly nucleated particles.
    pub sigma_star: f64,
    /// Nucleate when no same-context value particle is activated at least this much.
    pub theta_create: f64,
    /// Kernel activation needed for cross-context exposure and responsiveness moves.
    pub theta_exposure: f64,
    pub n_cryst_min: u32,
    pub theta_conv: f64,
    pub n_cross_min: u32,
    pub theta_rev: f64,
    pub n_verify: u32,
    /// Variance scale of the responsiveness target.
    pub theta_w: f64,
    pub eta_w: f64,
    pub history_window: usize,
    pub transient_exclusion: usize,
    pub merge_factor: f64,
    pub capacity: usize,
    pub writes_enabled: bool,
    pub crystallization_enabled: bool,
    pub crucible_enabled: bool,
    pub agency_enabled: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k0: 5.0,
            k_min: 1.0,
            eta_base: 0.5,
            eta_cryst: 0.1,
            mu_base: 0.06,
            mu_cryst: 0.001,
            v_max: 1.0,
            w_max: 5.0,
            sigma_star: 0.64,
            theta_create: 0.1,
            theta_exposure: 0.1,
            n_cryst_min: 5,
            theta_conv: 0.15,
            n_cross_min: 4,
            theta_rev: -0.125,
            n_verify: 4,
            theta_w: 0.05,
            eta_w: 0.2,
            history_window: 20,
            transient_exclusion: 5,
            merge_factor: 0.3,
            capacity: 5000,
            writes_enabled: true,
            crystallization_enabled: true,
            crucible_enabled: true,
            agency_enabled: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("engine config: {msg}")));
        let positive = [
            ("k0", self.k0),
            ("k_min", self.k_min),
            ("eta_base", self.eta_base),
            ("eta_cryst", self.eta_cryst),
            ("v_max", self.v_max),
            ("w_max", self.w_max),
            ("sigma_star", self.sigma_star),
            ("theta_conv", self.theta_conv),
            ("theta_w", self.theta_w),
            ("eta_w", self.eta_w),
            ("merge_factor", self.merge_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("mu_base", self.mu_base),
            ("mu_cryst", self.mu_cryst),
            ("theta_create", self.theta_create),
            ("theta_exposure", self.theta_exposure),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(&format!("{name} must lie in (0,1), got {v}"));
            }
        }
        if self.mu_cryst >= self.mu_base {
            return bad("mu_cryst must be below mu_base");
        }
        if self.k_min > self.k0 {
            return bad("k_min must not exceed k0");
        }
        if self.theta_rev.is_nan() || self.theta_rev >= 0.0 {
            return bad("theta_rev must be negative");
        }
        if self.n_cryst_min == 0 || self.n_cross_min == 0 || self.n_verify == 0 {
            return bad("exposure counts must be positive");
        }
        if self.history_window == 0 || self.capacity == 0 {
            return bad("history_window and capacity must be positive");
        }
        Ok(())
    }

    /// Write rate for a particle in the given regime.
    pub fn eta(&self, crystallized: bool) -> f64 {
        if crystallized {
            self.eta_cryst
        } else {
            self.eta_base
        }
    }

    /// Decay rate for a particle in the given regime.
    pub fn mu(&self, crystallized: bool) -> f64 {
        if crystallized {
            self.mu_cryst
        } else {
            self.mu_base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        EngineConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_inverted_decay_regimes() {
        let cfg = EngineConfig {
            mu_cryst: 0.1,
            ..EngineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_positive_reversal_threshold() {
        let cfg = EngineConfig {
            theta_rev: 0.1,
            ..EngineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
