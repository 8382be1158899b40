//! Run specifications, report records, seeding and config overrides shared by
//! both domains and the harness.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::engine::EngineConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Toy,
    Rrw,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Toy => "toy",
            Domain::Rrw => "rrw",
        }
    }

    /// Conditions in table order.
    pub fn conditions(self) -> &'static [Condition] {
        use Condition::*;
        match self {
            Domain::Toy => &[Full, NoAgency, NoCryst, NoCrucible, Passive],
            Domain::Rrw => &[Full, NoAgency, NoCryst, NoCrucible, Mlp, Replay, Passive],
        }
    }

    pub fn phase_count(self) -> usize {
        match self {
            Domain::Toy => 2,
            Domain::Rrw => 3,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Domain::Toy),
            "rrw" => Ok(Domain::Rrw),
            other => Err(Error::InvalidArgument(format!("unknown domain '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Full,
    NoAgency,
    NoCryst,
    NoCrucible,
    Mlp,
    Replay,
    Passive,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::Full => "full",
            Condition::NoAgency => "no_agency",
            Condition::NoCryst => "no_cryst",
            Condition::NoCrucible => "no_crucible",
            Condition::Mlp => "mlp",
            Condition::Replay => "replay",
            Condition::Passive => "passive",
        }
    }

    /// Row label used in summary tables.
    pub fn label(self) -> &'static str {
        match self {
            Condition::Full => "Full",
            Condition::NoAgency => "No-Agency",
            Condition::NoCryst => "No-Cryst",
            Condition::NoCrucible => "No-Crucible",
            Condition::Mlp => "MLP",
            Condition::Replay => "Replay MLP",
            Condition::Passive => "Passive",
        }
    }

    pub fn is_baseline_model(self) -> bool {
        matches!(self, Condition::Mlp | Condition::Replay)
    }

    /// Switches the engine into this ablation mode.
    pub fn apply(self, cfg: &mut EngineConfig) {
        match self {
            Condition::NoAgency => cfg.agency_enabled = false,
            Condition::NoCryst => cfg.crystallization_enabled = false,
            Condition::NoCrucible => cfg.crucible_enabled = false,
            Condition::Passive => {
                cfg.writes_enabled = false;
                cfg.agency_enabled = false;
            }
            Condition::Full | Condition::Mlp | Condition::Replay => {}
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Condition::Full,
            Condition::NoAgency,
            Condition::NoCryst,
            Condition::NoCrucible,
            Condition::Mlp,
            Condition::Replay,
            Condition::Passive,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown condition '{s}'")))
    }
}

/// Flat `key → value` overrides. Bare keys address [`EngineConfig`] fields;
/// `toy.` and `rrw.` prefixes address the domain configs.
pub type Overrides = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub domain: Domain,
    pub condition: Condition,
    pub seed: u64,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default)]
    pub snapshots: bool,
}

impl RunSpec {
    pub fn new(domain: Domain, condition: Condition, seed: u64) -> Self {
        Self {
            domain,
            condition,
            seed,
            overrides: Overrides::new(),
            snapshots: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.domain.conditions().contains(&self.condition) {
            return Err(Error::InvalidArgument(format!(
                "condition '{}' is not defined for domain '{}'",
                self.condition, self.domain
            )));
        }
        Ok(())
    }

    /// `<domain>_<condition>_<seed>`.
    pub fn file_stem(&self) -> String {
        format!("{}_{}_{}", self.domain, self.condition, self.seed)
    }
}

/// Deterministic generator for one named stream of a run.
pub fn stream_rng(domain: Domain, stream: &str, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(domain.name().as_bytes());
    h.update([0u8]);
    h.update(stream.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Rounds to 6 significant digits.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Applies [`sig6`] to every float in a serializable value.
pub fn quantize<T: Serialize + DeserializeOwned>(value: &T) -> Result<T> {
    fn walk(v: &mut Value) {
        match v {
            Value::Number(n) if n.is_f64() => {
                if let Some(q) = n.as_f64().map(sig6).and_then(serde_json::Number::from_f64) {
                    *n = q;
                }
            }
            Value::Array(items) => items.iter_mut().for_each(walk),
            Value::Object(map) => map.values_mut().for_each(walk),
            _ => {}
        }
    }
    let mut v = serde_json::to_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    walk(&mut v);
    serde_json::from_value(v).map_err(|e| Error::Parse(e.to_string()))
}

/// Overrides whose key starts with `prefix` (prefix stripped), or the bare
/// keys when `prefix` is `None`.
pub fn select_overrides(overrides: &Overrides, prefix: Option<&str>) -> Overrides {
    overrides
        .iter()
        .filter_map(|(k, v)| match (prefix, k.split_once('.')) {
            (None, None) => Some((k.clone(), v.clone())),
            (Some(p), Some((head, rest))) if head == p => Some((rest.to_string(), v.clone())),
            _ => None,
        })
        .collect()
}

/// Rejects keys that address neither the engine nor the given domain.
pub fn check_override_scope(overrides: &Overrides, domain: Domain) -> Result<()> {
    for key in overrides.keys() {
        if let Some((head, _)) = key.split_once('.') {
            if head != domain.name() {
                return Err(Error::UnknownConfigKey(key.clone()));
            }
        }
    }
    Ok(())
}

/// Writes `overrides` over the serialized fields of `base`.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(base: &T, overrides: &Overrides) -> Result<T> {
    let mut map: Map<String, Value> = match serde_json::to_value(base) {
        Ok(Value::Object(m)) => m,
        _ => return Err(Error::Parse("config does not serialize to a map".into())),
    };
    for (k, v) in overrides {
        match map.get_mut(k) {
            Some(slot) => *slot = v.clone(),
            None => return Err(Error::UnknownConfigKey(k.clone())),
        }
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| {
        let (key, value) = overrides
            .iter()
            .next()
            .map(|(k, v)| (k.clone(), v.to_string()))
            .unwrap_or_default();
        if overrides.len() == 1 {
            Error::InvalidConfigValue { key, value }
        } else {
            Error::Parse(e.to_string())
        }
    })
}

/// Parses a command-line `key=value`; the value is read as JSON when it
/// parses (numbers, booleans) and as a string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got '{s}'")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::InvalidArgument(format!("empty key in '{s}'")));
    }
    let v = v.trim();
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Headline accuracies. Phase-indexed vectors run A, B(, C).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Acc_A at the end of phase A.
    pub acc_a: f64,
    /// Acc_A after the final phase.
    pub acc_a_final: f64,
    /// `acc_a_final − acc_a`.
    pub bt_a: f64,
    /// Accuracy of the final phase at its end (Acc_B for the toy, Acc_C for RRW).
    pub acc_last: f64,
    /// Each phase's accuracy measured at the end of that phase.
    pub phase_end_accuracy: Vec<f64>,
}

impl Metrics {
    pub fn new(acc_a: f64, acc_a_final: f64, phase_end_accuracy: Vec<f64>) -> Self {
        let acc_a = sig6(acc_a);
        let acc_a_final = sig6(acc_a_final);
        Self {
            acc_a,
            acc_a_final,
            bt_a: sig6(acc_a_final - acc_a),
            acc_last: sig6(*phase_end_accuracy.last().unwrap_or(&acc_a)),
            phase_end_accuracy: phase_end_accuracy.into_iter().map(sig6).collect(),
        }
    }

    /// Whether `bt_a` matches its definition.
    pub fn bt_consistent(&self) -> bool {
        self.bt_a == sig6(self.acc_a_final - self.acc_a)
    }
}

/// Per-epoch population record. Event columns count this epoch only;
/// `crystallized`, `verified` and `live` are end-of-epoch totals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: usize,
    pub epoch: usize,
    pub nucleated: usize,
    pub crystallized_events: usize,
    pub dissolved: usize,
    pub verified_granted: usize,
    pub merged: usize,
    pub evicted: usize,
    pub live: usize,
    pub crystallized: usize,
    pub verified: usize,
    /// Fraction of training interactions with the correct action.
    pub train_accuracy: f64,
    /// Sample variance of the discrepancy signal over the epoch.
    pub var_d: f64,
}

/// Fate of the crystals present at the end of phase A, observed partway
/// through phase B.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CohortCensus {
    /// Phase-B epochs completed at the observation.
    pub observed_after_epochs: usize,
    pub nucleated_end_a: usize,
    pub crystals_end_a: usize,
    /// Distinct cohort members dissolved at least once.
    pub dissolved: usize,
    /// Cohort members never dissolved and still live.
    pub survivors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KEffSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl KEffSummary {
    pub fn of(values: &[f64]) -> Self {
        Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub method: String,
    pub d_eff: f64,
    pub sigma_star: f64,
    pub kappa: f64,
    pub sibling_distance_median: Option<f64>,
    pub epsilon_bleed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Smallest per-epoch discrepancy variance over training.
    pub min_epoch_var_d: f64,
    pub var_d_positive: bool,
    pub evaluator_spread: f64,
    pub evaluator_hash: String,
    /// The evaluator hash did not change over the run.
    pub evaluator_frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: RunSpec,
    pub status: RunStatus,
    pub error: Option<String>,
    pub metrics: Option<Metrics>,
    pub census: Vec<EpochRecord>,
    pub cohort: Option<CohortCensus>,
    pub k_eff: Option<KEffSummary>,
    pub calibration: Option<CalibrationRecord>,
    pub engine: Option<EngineConfig>,
    pub domain_config: Option<Value>,
    pub diagnostics: Option<Diagnostics>,
}

impl ExperimentReport {
    pub fn failed(spec: RunSpec, error: impl Into<String>) -> Self {
        Self {
            spec,
            status: RunStatus::Failed,
            error: Some(error.into()),
            metrics: None,
            census: Vec::new(),
            cohort: None,
            k_eff: None,
            calibration: None,
            engine: None,
            domain_config: None,
            diagnostics: None,
        }
    }

    /// Totals over the census time series.
    pub fn dissolution_events(&self) -> usize {
        self.census.iter().map(|e| e.dissolved).sum()
    }

    pub fn nucleations(&self) -> usize {
        self.census.iter().map(|e| e.nucleated).sum()
    }
}

/// One grid snapshot of the preference landscape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub phase: usize,
    pub epoch: usize,
    pub extent: f64,
    pub resolution: usize,
    /// Row-major values, row 0 at the top (largest second coordinate).
    pub values: Vec<f64>,
    pub particles: Vec<SnapshotParticle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotParticle {
    pub x: f64,
    pub y: f64,
    pub action: usize,
    pub crystallized: bool,
    pub readable: bool,
}

/// A report plus any landscape snapshots taken along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub snapshots: Vec<Snapshot>,
}
