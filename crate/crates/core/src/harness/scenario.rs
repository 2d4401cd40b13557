//! Scenario files: TOML, versioned by `schema_version`.
//!
//! ```toml
//! schema_version = 1
//! name = "ring"
//! nodes = 4
//! references = [4]        # 1-based labels; must be the highest labels
//! iterations = 500
//! trials = 100
//! seed = 7
//!
//! [timing]                # optional
//! start_time = 1.0        # global time of the first iteration
//! interval = 1.0          # global length of one iteration, also the local dwell
//!
//! [clocks]                # non-reference clocks are drawn uniformly from these ranges
//! skew = [0.99998, 1.00002]
//! offset = [-0.01, 0.01]
//!
//! [topology]
//! regime = "deterministic"    # or "markov", "mobility"
//! states = [[[1, 2], [3, 4]], [[2, 3]]]
//! pattern = [0, 1]
//!
//! [measurement]
//! mode = "timestamp"          # or "synthetic"
//! delay = { type = "gaussian", mean_us = 150.0, std_us = 10.0 }
//!
//! [algorithms]
//! run = ["disync", "jat"]
//! step = { c1 = 1.0, c2 = 3.0 }
//! ```

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{ClockBounds, ClockError, IterationSchedule};
use crate::estimators::{AlgorithmConfig, AlgorithmKind, EstimatorError, PauseWindow, StepSize, DISTANCE_INCREMENT};
use crate::oracle::PairBias;
use crate::pairwise::{DelayModel, PairwiseError};
use crate::topology::{EnsembleFile, GraphEnsemble, MarkovChain, TopologyError, TopologyProcess, WaypointModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {found}, expected {SCHEMA_VERSION}")]
    Schema { found: u32 },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Delay(#[from] PairwiseError),
}

/// An algorithm selectable in a scenario: one of the four laws or the
/// virtual-clock baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Law(AlgorithmKind),
    Ats,
}

impl Algorithm {
    pub const DISYNC: Algorithm = Algorithm::Law(AlgorithmKind::DiSync);
    pub const DISYNC_I: Algorithm = Algorithm::Law(AlgorithmKind::DiSyncI);
    pub const JAT: Algorithm = Algorithm::Law(AlgorithmKind::Jat);
    pub const JAT_I: Algorithm = Algorithm::Law(AlgorithmKind::JatI);
    pub const ALL: [Algorithm; 5] = [Self::DISYNC, Self::DISYNC_I, Self::JAT, Self::JAT_I, Algorithm::Ats];

    pub fn kind(self) -> Option<AlgorithmKind> {
        match self {
            Algorithm::Law(k) => Some(k),
            Algorithm::Ats => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Law(k) => k.name(),
            Algorithm::Ats => "ats",
        }
    }
}

impl FromStr for Algorithm {
    type Err = ScenarioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ats" {
            return Ok(Algorithm::Ats);
        }
        s.parse::<AlgorithmKind>()
            .map(Algorithm::Law)
            .map_err(|_| ScenarioError::Invalid(format!("unknown algorithm {s:?}; expected disync, disync-i, jat, jat-i or ats")))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Algorithm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Algorithm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    pub nodes: usize,
    pub references: Vec<usize>,
    pub iterations: u64,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub timing: Timing,
    pub clocks: ClockRanges,
    /// Bounds shared by all nodes for the iteration schedule; defaults to `clocks`.
    #[serde(default)]
    pub bounds: Option<ClockRanges>,
    pub topology: TopologySpec,
    pub measurement: MeasurementSpec,
    pub algorithms: AlgorithmSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub start_time: f64,
    pub interval: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            start_time: 1.0,
            interval: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockRanges {
    pub skew: [f64; 2],
    pub offset: [f64; 2],
}

impl ClockRanges {
    pub fn to_bounds(self) -> Result<ClockBounds, ClockError> {
        ClockBounds::new(self.skew[0], self.skew[1], self.offset[0], self.offset[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "lowercase", deny_unknown_fields)]
pub enum TopologySpec {
    /// `states` lists edges with 1-based labels; `pattern[k % len]` picks the state.
    Deterministic {
        states: Vec<Vec<[usize; 2]>>,
        pattern: Vec<usize>,
    },
    Markov {
        states: Vec<Vec<[usize; 2]>>,
        transition: Vec<Vec<f64>>,
        #[serde(default)]
        initial: Option<Vec<f64>>,
    },
    Mobility {
        #[serde(default = "default_field")]
        field_size: f64,
        #[serde(default = "default_range")]
        comm_range: f64,
        #[serde(default = "default_speed_min")]
        speed_min: f64,
        #[serde(default = "default_speed_max")]
        speed_max: f64,
    },
}

fn default_field() -> f64 {
    WaypointModel::default().field_size
}
fn default_range() -> f64 {
    WaypointModel::default().comm_range
}
fn default_speed_min() -> f64 {
    WaypointModel::default().speed_min
}
fn default_speed_max() -> f64 {
    WaypointModel::default().speed_max
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum MeasurementSpec {
    /// Difference measurements are the true difference plus Gaussian noise
    /// whose mean comes from `pair_bias`; unlisted pairs get the mean of the
    /// listed biases, or zero when none are listed.
    Synthetic {
        noise_std: f64,
        #[serde(default)]
        pair_bias: Vec<PairBiasEntry>,
    },
    /// Difference measurements come from simulated two-way message exchanges.
    Timestamp {
        #[serde(default)]
        delay: DelayModel,
    },
}

/// Mean noise of a pair as measured by its initiator, the higher label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairBiasEntry {
    pub pair: [usize; 2],
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub run: Vec<Algorithm>,
    pub step: StepSize,
    #[serde(default = "default_threshold")]
    pub k_h: u64,
    #[serde(default = "default_threshold", rename = "k_H")]
    pub k_set: u64,
    #[serde(default)]
    pub pause: Option<PauseWindow>,
    #[serde(default = "default_increment")]
    pub distance_increment: f64,
    #[serde(default = "default_rho")]
    pub ats_rho: f64,
}

fn default_threshold() -> u64 {
    40
}
fn default_increment() -> f64 {
    DISTANCE_INCREMENT
}
fn default_rho() -> f64 {
    0.2
}

fn check_algorithms(measurement: &MeasurementSpec, run: &[Algorithm]) -> Result<(), ScenarioError> {
    if run.contains(&Algorithm::Ats) && matches!(measurement, MeasurementSpec::Synthetic { .. }) {
        return Err(ScenarioError::Invalid(
            "ats needs message timestamps; use measurement.mode = \"timestamp\"".to_string(),
        ));
    }
    Ok(())
}

/// A checked scenario with its topology process built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    process: TopologyProcess,
    n_ref: usize,
    bias: Vec<PairBias>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text)?;
        Self::from_file(file)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Schema {
                found: file.schema_version,
            });
        }
        let n = file.nodes;
        if n < 2 {
            return Err(ScenarioError::Invalid("need at least two nodes".to_string()));
        }
        let mut refs = file.references.clone();
        refs.sort_unstable();
        refs.dedup();
        let n_ref = refs.len();
        if n_ref == 0 {
            return Err(ScenarioError::Invalid("at least one reference node is required".to_string()));
        }
        if refs != ((n - n_ref + 1)..=n).collect::<Vec<_>>() {
            return Err(ScenarioError::Invalid(format!(
                "reference labels {:?} must be the highest labels {}..={n}",
                file.references,
                n - n_ref + 1
            )));
        }
        if file.trials == 0 {
            return Err(ScenarioError::Invalid("trials must be positive".to_string()));
        }
        let t = file.timing;
        if !(t.interval > 0.0 && t.interval.is_finite() && t.start_time.is_finite()) {
            return Err(ScenarioError::Invalid("timing.interval must be positive".to_string()));
        }
        file.clocks.to_bounds()?;
        if let Some(b) = file.bounds {
            b.to_bounds()?;
        }

        let process = match &file.topology {
            TopologySpec::Deterministic { states, pattern } => {
                TopologyProcess::deterministic(ensemble(n, n_ref, states)?, pattern.clone())?
            }
            TopologySpec::Markov {
                states,
                transition,
                initial,
            } => TopologyProcess::markov(
                ensemble(n, n_ref, states)?,
                MarkovChain::new(transition.clone())?,
                initial.clone(),
            )?,
            TopologySpec::Mobility {
                field_size,
                comm_range,
                speed_min,
                speed_max,
            } => TopologyProcess::mobility(
                n,
                n_ref,
                WaypointModel {
                    field_size: *field_size,
                    comm_range: *comm_range,
                    speed_min: *speed_min,
                    speed_max: *speed_max,
                },
                t.interval,
            )?,
        };

        let bias = match &file.measurement {
            MeasurementSpec::Synthetic { noise_std, pair_bias } => {
                if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                    return Err(ScenarioError::Invalid("noise_std must be non-negative".to_string()));
                }
                let mut seen = std::collections::HashSet::new();
                pair_bias
                    .iter()
                    .map(|e| {
                        let [a, b] = e.pair;
                        if a == b || a == 0 || b == 0 || a > n || b > n {
                            return Err(ScenarioError::Invalid(format!("bad bias pair {:?}", e.pair)));
                        }
                        if !seen.insert((a.min(b), a.max(b))) {
                            return Err(ScenarioError::Invalid(format!("duplicate bias pair {:?}", e.pair)));
                        }
                        Ok(PairBias {
                            u: a - 1,
                            v: b - 1,
                            gamma: e.gamma,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            MeasurementSpec::Timestamp { delay } => {
                delay.validate()?;
                Vec::new()
            }
        };

        let alg = &file.algorithms;
        if alg.run.is_empty() {
            return Err(ScenarioError::Invalid("algorithms.run is empty".to_string()));
        }
        for kind in AlgorithmKind::ALL {
            kind.config(alg.step, alg.k_h, alg.k_set)?;
        }
        check_algorithms(&file.measurement, &alg.run)?;
        if !(alg.ats_rho > 0.0 && alg.ats_rho < 1.0) {
            return Err(ScenarioError::Invalid("ats_rho must lie in (0, 1)".to_string()));
        }
        if !(alg.distance_increment > 0.0 && alg.distance_increment.is_finite()) {
            return Err(ScenarioError::Invalid("distance_increment must be positive".to_string()));
        }

        Ok(Self {
            file,
            process,
            n_ref,
            bias,
        })
    }

    pub fn n(&self) -> usize {
        self.file.nodes
    }

    pub fn n_ref(&self) -> usize {
        self.n_ref
    }

    pub fn iterations(&self) -> u64 {
        self.file.iterations
    }

    pub fn process(&self) -> &TopologyProcess {
        &self.process
    }

    /// Pair biases with 0-based indices.
    pub fn pair_bias(&self) -> &[PairBias] {
        &self.bias
    }

    pub fn algorithms(&self) -> &[Algorithm] {
        &self.file.algorithms.run
    }

    /// Whether `algorithms` can run on this scenario's measurements.
    pub fn check_algorithms(&self, algorithms: &[Algorithm]) -> Result<(), ScenarioError> {
        check_algorithms(&self.file.measurement, algorithms)
    }

    pub fn config(&self, kind: AlgorithmKind) -> AlgorithmConfig {
        let a = &self.file.algorithms;
        kind.config(a.step, a.k_h, a.k_set).expect("checked at load")
    }

    pub fn pause(&self) -> Option<PauseWindow> {
        self.file.algorithms.pause
    }

    pub fn time_at(&self, k: u64) -> f64 {
        self.file.timing.start_time + k as f64 * self.file.timing.interval
    }

    pub fn schedule_bounds(&self) -> ClockBounds {
        self.file
            .bounds
            .unwrap_or(self.file.clocks)
            .to_bounds()
            .expect("checked at load")
    }

    /// The pre-shared schedule for these bounds: first start just above the
    /// largest offset, dwell equal to the iteration interval.
    pub fn schedule(&self) -> Result<IterationSchedule, ClockError> {
        let b = self.schedule_bounds();
        let start = b.offset_hi + self.file.timing.interval;
        IterationSchedule::new(start, self.file.timing.interval, b, self.file.iterations as usize)
    }

    /// A copy with another master seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.file.seed = seed;
        s
    }

    /// A copy with another trial count.
    pub fn with_trials(&self, trials: usize) -> Self {
        let mut s = self.clone();
        s.file.trials = trials;
        s
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("scenario serializes")
    }
}

fn ensemble(n: usize, n_ref: usize, states: &[Vec<[usize; 2]>]) -> Result<GraphEnsemble, TopologyError> {
    EnsembleFile {
        nodes: n,
        references: n_ref,
        states: states.to_vec(),
    }
    .into_ensemble()
}
