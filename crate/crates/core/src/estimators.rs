//! Distributed update laws over the two channels (log-skew, offset).
//!
//! Every law has the form
//! `x_u <- x_u + h * sum_{v in H} (x_v + zeta_uv - x_u)`
//! and differs only in the gain `h` and the neighbor set `H`:
//!
//! | law       | `k_h`  | `k_H`  | gain                            | set                      |
//! |-----------|--------|--------|---------------------------------|--------------------------|
//! | DiSync    | 0      | 0      | `m(k)`                          | all neighbors            |
//! | JaT       | never  | 0      | `1 / (1 + |N_u|)`               | all neighbors            |
//! | DiSync-I  | finite | finite | averaging, then `m(k - k_h)`    | closer nodes, then all   |
//! | JaT-I     | never  | finite | `1 / (1 + |H_u|)`               | closer nodes, then all   |
//!
//! "Closer nodes" are the neighbors whose average distance to the
//! references does not exceed the node's own.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::Graph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("step size needs c1 > 0 and c2 > 0, got c1 = {c1}, c2 = {c2}")]
    InvalidStep { c1: f64, c2: f64 },
    #[error("thresholds must satisfy k_H <= k_h, got k_H = {k_set}, k_h = {k_gain}")]
    ThresholdOrder { k_set: Threshold, k_gain: Threshold },
    #[error("pause window start {start} is after its end {end}")]
    InvalidPause { start: u64, end: u64 },
    #[error("unknown algorithm {0:?}")]
    UnknownAlgorithm(String),
}

/// Decreasing gain `m(k) = c1 / (k + c2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepRepr", into = "StepRepr")]
pub struct StepSize {
    c1: f64,
    c2: f64,
}

#[derive(Serialize, Deserialize)]
struct StepRepr {
    c1: f64,
    c2: f64,
}

impl TryFrom<StepRepr> for StepSize {
    type Error = EstimatorError;
    fn try_from(r: StepRepr) -> Result<Self, Self::Error> {
        StepSize::new(r.c1, r.c2)
    }
}

impl From<StepSize> for StepRepr {
    fn from(s: StepSize) -> Self {
        StepRepr { c1: s.c1, c2: s.c2 }
    }
}

impl StepSize {
    pub fn new(c1: f64, c2: f64) -> Result<Self, EstimatorError> {
        if !(c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite()) {
            return Err(EstimatorError::InvalidStep { c1, c2 });
        }
        Ok(Self { c1, c2 })
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    #[inline]
    pub fn gain(&self, k: u64) -> f64 {
        self.c1 / (k as f64 + self.c2)
    }
}

pub fn step_gain(step: &StepSize, k: u64) -> f64 {
    step.gain(k)
}

/// Iteration at which a phase switch happens; `Never` keeps the first phase forever.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Threshold {
    At(u64),
    Never,
}

impl Threshold {
    /// True while `k` is still before the switch.
    #[inline]
    pub fn before(self, k: u64) -> bool {
        match self {
            Threshold::At(t) => k < t,
            Threshold::Never => true,
        }
    }

    fn le(self, other: Threshold) -> bool {
        match (self, other) {
            (_, Threshold::Never) => true,
            (Threshold::Never, Threshold::At(_)) => false,
            (Threshold::At(a), Threshold::At(b)) => a <= b,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::At(k) => write!(f, "{k}"),
            Threshold::Never => f.write_str("never"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    At(u64),
    Word(String),
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            Threshold::At(k) => ThresholdRepr::At(k),
            Threshold::Never => ThresholdRepr::Word("never".to_string()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match ThresholdRepr::deserialize(d)? {
            ThresholdRepr::At(k) => Ok(Threshold::At(k)),
            ThresholdRepr::Word(w) if matches!(w.as_str(), "never" | "inf" | "infinity") => Ok(Threshold::Never),
            ThresholdRepr::Word(w) => Err(serde::de::Error::custom(format!(
                "threshold must be an iteration number or \"never\", got {w:?}"
            ))),
        }
    }
}

/// Inclusive window of iterations during which no node updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauseWindow {
    pub start: u64,
    pub end: u64,
}

impl PauseWindow {
    pub fn new(start: u64, end: u64) -> Result<Self, EstimatorError> {
        if start > end {
            return Err(EstimatorError::InvalidPause { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, k: u64) -> bool {
        (self.start..=self.end).contains(&k)
    }
}

/// Argument of `m` at iteration `k >= k_h`, or `None` while paused. After a
/// pause the argument is shifted back by the part of the window that fell
/// after `k_h`, so the gain resumes where it stopped.
pub fn effective_gain_index(k: u64, k_h: u64, pause: Option<PauseWindow>) -> Option<u64> {
    debug_assert!(k >= k_h);
    match pause {
        Some(p) if p.contains(k) => None,
        Some(p) if k > p.end => Some(k - k_h - p.end.saturating_sub(p.start.max(k_h))),
        _ => Some(k - k_h),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub k_h: Threshold,
    #[serde(rename = "k_H")]
    pub k_set: Threshold,
    pub step: StepSize,
}

impl AlgorithmConfig {
    pub fn new(k_h: Threshold, k_set: Threshold, step: StepSize) -> Result<Self, EstimatorError> {
        if !k_set.le(k_h) {
            return Err(EstimatorError::ThresholdOrder { k_set, k_gain: k_h });
        }
        Ok(Self { k_h, k_set, step })
    }

    pub fn disync(step: StepSize) -> Self {
        Self::new(Threshold::At(0), Threshold::At(0), step).expect("0 <= 0")
    }

    pub fn jat(step: StepSize) -> Self {
        Self::new(Threshold::Never, Threshold::At(0), step).expect("0 <= never")
    }

    pub fn disync_i(step: StepSize, k_h: u64, k_set: u64) -> Result<Self, EstimatorError> {
        Self::new(Threshold::At(k_h), Threshold::At(k_set), step)
    }

    pub fn jat_i(step: StepSize, k_set: u64) -> Self {
        Self::new(Threshold::Never, Threshold::At(k_set), step).expect("finite <= never")
    }
}

/// The four laws by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlgorithmKind {
    #[serde(rename = "disync")]
    DiSync,
    #[serde(rename = "disync-i")]
    DiSyncI,
    #[serde(rename = "jat")]
    Jat,
    #[serde(rename = "jat-i")]
    JatI,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 4] = [Self::DiSync, Self::DiSyncI, Self::Jat, Self::JatI];

    pub fn name(self) -> &'static str {
        match self {
            Self::DiSync => "disync",
            Self::DiSyncI => "disync-i",
            Self::Jat => "jat",
            Self::JatI => "jat-i",
        }
    }

    /// Table corner for this law; `k_h` and `k_set` are used only where finite.
    pub fn config(self, step: StepSize, k_h: u64, k_set: u64) -> Result<AlgorithmConfig, EstimatorError> {
        Ok(match self {
            Self::DiSync => AlgorithmConfig::disync(step),
            Self::DiSyncI => AlgorithmConfig::disync_i(step, k_h, k_set)?,
            Self::Jat => AlgorithmConfig::jat(step),
            Self::JatI => AlgorithmConfig::jat_i(step, k_set),
        })
    }
}

impl std::str::FromStr for AlgorithmKind {
    type Err = EstimatorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| EstimatorError::UnknownAlgorithm(s.to_string()))
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Difference measurements of one iteration, both channels, by directed pair.
/// `get(u, v)` observes `x_u - x_v`; the mirror entry is the exact negation.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTable {
    n: usize,
    values: Vec<Option<[f64; 2]>>,
}

impl MeasurementTable {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            values: vec![None; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Store the measurement computed by `u` about `u - v` and its mirror.
    pub fn insert_pair(&mut self, u: usize, v: usize, value: [f64; 2]) {
        self.values[u * self.n + v] = Some(value);
        self.values[v * self.n + u] = Some([-value[0], -value[1]]);
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<[f64; 2]> {
        self.values[u * self.n + v]
    }
}

/// Per-node estimates of both channels plus the average-distance state.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    n_ref: usize,
    x: Vec<[f64; 2]>,
    y: Vec<f64>,
    k: u64,
}

/// Default increment of the average distance of an isolated node.
pub const DISTANCE_INCREMENT: f64 = 0.25;

impl EstimatorState {
    /// All estimates start at zero; reference nodes are the last `n_ref` indices.
    pub fn new(n: usize, n_ref: usize) -> Self {
        Self::with_estimates(vec![[0.0; 2]; n], n_ref)
    }

    /// Start from given estimates; reference entries are forced to zero.
    pub fn with_estimates(mut x: Vec<[f64; 2]>, n_ref: usize) -> Self {
        let n = x.len();
        assert!(n_ref >= 1 && n_ref <= n, "need 1 <= n_ref <= n");
        let n_b = n - n_ref;
        for r in &mut x[n_b..] {
            *r = [0.0; 2];
        }
        let y = (0..n).map(|u| if u < n_b { f64::INFINITY } else { 0.0 }).collect();
        Self { n_ref, x, y, k: 0 }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn n_b(&self) -> usize {
        self.x.len() - self.n_ref
    }

    pub fn is_reference(&self, u: usize) -> bool {
        u >= self.n_b()
    }

    pub fn estimates(&self) -> &[[f64; 2]] {
        &self.x
    }

    pub fn estimate(&self, u: usize) -> [f64; 2] {
        self.x[u]
    }

    pub fn distances(&self) -> &[f64] {
        &self.y
    }

    /// Number of iterations processed, paused ones included.
    pub fn iteration(&self) -> u64 {
        self.k
    }

    /// Skew and offset estimates of node `u`.
    pub fn recover_clock_estimate(&self, u: usize) -> (f64, f64) {
        recover_clock_estimate(self.x[u])
    }
}

pub fn recover_clock_estimate(x: [f64; 2]) -> (f64, f64) {
    (x[0].exp(), x[1])
}

/// One law application: `x_u + gain * sum (x_v + zeta - x_u)` over `(x_v, zeta)`.
#[inline]
fn consensus_step(x_u: f64, terms: impl Iterator<Item = (f64, f64)>, gain: f64) -> f64 {
    let mut sum = 0.0;
    let mut any = false;
    for (x_v, zeta) in terms {
        sum += x_v + zeta - x_u;
        any = true;
    }
    if any {
        x_u + gain * sum
    } else {
        x_u
    }
}

/// Node-level decreasing-gain update.
pub fn disync_update(x_u: f64, neighbors: &[(f64, f64)], gain: f64) -> f64 {
    consensus_step(x_u, neighbors.iter().copied(), gain)
}

/// Node-level constant-gain Jacobi update.
pub fn jat_update(x_u: f64, neighbors: &[(f64, f64)]) -> f64 {
    consensus_step(x_u, neighbors.iter().copied(), 1.0 / (1 + neighbors.len()) as f64)
}

/// Average-distance step of a non-reference node. Returns the new distance
/// and the indices (into `neighbor_y`) of the neighbors no farther than `y_u`.
pub fn average_distance_step(y_u: f64, neighbor_y: &[f64], increment: f64) -> (f64, Vec<usize>) {
    let closer: Vec<usize> = neighbor_y
        .iter()
        .enumerate()
        .filter(|&(_, &y_v)| y_v.is_finite() && y_u >= y_v)
        .map(|(i, _)| i)
        .collect();
    let next = if closer.is_empty() {
        // an unreached node stays unreached
        y_u + increment
    } else {
        closer.iter().map(|&i| neighbor_y[i]).sum::<f64>() / closer.len() as f64
    };
    (next, closer)
}

/// Gain and neighbor-set choice of the unified law at iteration `k`, or
/// `None` while paused.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    Paused,
    /// Averaging gain `1 / (1 + |H|)`; `closer_only` restricts `H` to closer nodes.
    Averaging { closer_only: bool },
    Decreasing { gain: f64, closer_only: bool },
}

pub fn phase(cfg: &AlgorithmConfig, k: u64, pause: Option<PauseWindow>) -> Phase {
    if pause.is_some_and(|p| p.contains(k)) {
        return Phase::Paused;
    }
    let closer_only = cfg.k_set.before(k);
    match cfg.k_h {
        Threshold::At(k_h) if k >= k_h => {
            let idx = effective_gain_index(k, k_h, pause).expect("pause handled above");
            Phase::Decreasing {
                gain: cfg.step.gain(idx),
                closer_only,
            }
        }
        _ => Phase::Averaging { closer_only },
    }
}

/// Run one iteration of the unified law on every non-reference node at once.
/// All updates read the estimates and distances from the start of the iteration.
pub fn disync_i_iteration(
    state: &mut EstimatorState,
    cfg: &AlgorithmConfig,
    graph: &Graph,
    meas: &MeasurementTable,
    pause: Option<PauseWindow>,
    increment: f64,
) {
    let k = state.k;
    state.k += 1;
    let (closer_only, gain) = match phase(cfg, k, pause) {
        Phase::Paused => return,
        Phase::Averaging { closer_only } => (closer_only, None),
        Phase::Decreasing { gain, closer_only } => (closer_only, Some(gain)),
    };
    let n_b = state.n_b();
    let old_x = state.x.clone();
    let old_y = state.y.clone();
    let mut nbrs: Vec<usize> = Vec::with_capacity(graph.n());
    let mut ys: Vec<f64> = Vec::with_capacity(graph.n());
    for u in 0..n_b {
        nbrs.clear();
        nbrs.extend(graph.neighbors(u));
        let set: Vec<usize> = if closer_only {
            ys.clear();
            ys.extend(nbrs.iter().map(|&v| old_y[v]));
            let (y_next, closer) = average_distance_step(old_y[u], &ys, increment);
            state.y[u] = y_next;
            closer.into_iter().map(|i| nbrs[i]).collect()
        } else {
            nbrs.clone()
        };
        let h = gain.unwrap_or(1.0 / (1 + set.len()) as f64);
        for c in 0..2 {
            let terms = set.iter().map(|&v| (old_x[v][c], zeta(meas, u, v)[c]));
            state.x[u][c] = consensus_step(old_x[u][c], terms, h);
        }
    }
}

/// One iteration of the dedicated decreasing-gain law, gain `m(k)`.
pub fn disync_iteration(state: &mut EstimatorState, step: &StepSize, graph: &Graph, meas: &MeasurementTable) {
    let gain = step.gain(state.k);
    state.k += 1;
    let old = state.x.clone();
    let mut terms = Vec::with_capacity(graph.n());
    for u in 0..state.n_b() {
        for c in 0..2 {
            terms.clear();
            terms.extend(graph.neighbors(u).map(|v| (old[v][c], zeta(meas, u, v)[c])));
            state.x[u][c] = disync_update(old[u][c], &terms, gain);
        }
    }
}

/// One iteration of the dedicated constant-gain Jacobi law.
pub fn jat_iteration(state: &mut EstimatorState, graph: &Graph, meas: &MeasurementTable) {
    state.k += 1;
    let old = state.x.clone();
    let mut terms = Vec::with_capacity(graph.n());
    for u in 0..state.n_b() {
        for c in 0..2 {
            terms.clear();
            terms.extend(graph.neighbors(u).map(|v| (old[v][c], zeta(meas, u, v)[c])));
            state.x[u][c] = jat_update(old[u][c], &terms);
        }
    }
}

#[inline]
fn zeta(meas: &MeasurementTable, u: usize, v: usize) -> [f64; 2] {
    meas.get(u, v)
        .unwrap_or_else(|| panic!("no measurement for edge ({u}, {v})"))
}
