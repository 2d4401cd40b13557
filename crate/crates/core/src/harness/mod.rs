//! Monte Carlo experiments over a scenario, plus result persistence.
//!
//! Trials are split into fixed chunks of [`CHUNK`] consecutive trials. Chunks
//! run in parallel and each folds its trials in order; chunk accumulators
//! are then merged in chunk order. The result is independent of the thread
//! count, so a rerun with the same scenario and seed writes identical bytes.

mod output;
mod scenario;
mod stats;
mod trial;

pub use output::{emit_results, load_results, read_csv, write_csv, Format, OutputError, CSV_HEADER, RESULTS_SCHEMA_VERSION};
pub use scenario::{
    Algorithm, AlgorithmSpec, ClockRanges, MeasurementSpec, PairBiasEntry, Scenario, ScenarioError, ScenarioFile,
    Timing, TopologySpec, SCHEMA_VERSION,
};
pub use stats::{AggregateStats, Cell, StatsTable, Welford};
pub use trial::{run_trial, run_trials, Environment, IterationData, Metric, TrialRecord, TrialSeed, MAX_SYNC_ERROR};

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::oracle::{predict_for_process, BiasPrediction, OracleError};
use crate::topology::{windowed_union_connected, TopologyProcess};

/// Trials per accumulation chunk.
pub const CHUNK: usize = 8;

/// Per-trial metrics of one algorithm at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub algorithm: Algorithm,
    pub trial: u64,
    pub k: u64,
    pub node: Vec<[f64; 3]>,
    pub max_sync_error: f64,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    /// One entry per algorithm, in the requested order.
    pub stats: Vec<AggregateStats>,
    /// Snapshots ordered by trial, then algorithm, then `k`.
    pub snapshots: Vec<Snapshot>,
}

impl Experiment {
    pub fn stats_for(&self, algorithm: Algorithm) -> Option<&AggregateStats> {
        self.stats.iter().find(|s| s.algorithm == algorithm.name())
    }

    /// Snapshot values of `algorithm` at `k`, one per trial in trial order.
    pub fn snapshots_at(&self, algorithm: Algorithm, k: u64) -> impl Iterator<Item = &Snapshot> {
        self.snapshots
            .iter()
            .filter(move |s| s.algorithm == algorithm && s.k == k)
    }

    pub fn tables(&self) -> Vec<StatsTable> {
        self.stats.iter().map(AggregateStats::table).collect()
    }
}

/// Run `trials` trials of every algorithm from the scenario's master seed,
/// keeping per-trial snapshots at the iterations in `snapshot_at`.
pub fn run_experiment(scenario: &Scenario, algorithms: &[Algorithm], trials: usize, snapshot_at: &[u64]) -> Experiment {
    let master = scenario.file.seed;
    let times: Vec<f64> = (0..=scenario.iterations()).map(|k| scenario.time_at(k)).collect();
    let fresh = || -> Vec<AggregateStats> {
        algorithms
            .iter()
            .map(|a| AggregateStats::new(a.name(), scenario.n(), times.clone()))
            .collect()
    };
    let mut stats = fresh();
    let mut snapshots = Vec::new();
    let chunk_starts: Vec<usize> = (0..trials).step_by(CHUNK).collect();
    // bound memory: a few chunks per worker at a time
    let batch = rayon::current_num_threads().max(1) * 2;
    for group in chunk_starts.chunks(batch) {
        let parts: Vec<(Vec<AggregateStats>, Vec<Snapshot>)> = group
            .par_iter()
            .map(|&start| {
                let mut acc = fresh();
                let mut snaps = Vec::new();
                for trial in start..(start + CHUNK).min(trials) {
                    let seed = TrialSeed {
                        master,
                        trial: trial as u64,
                    };
                    for rec in run_trials(scenario, algorithms, seed) {
                        for &k in snapshot_at {
                            if (k as usize) < rec.len() {
                                snaps.push(Snapshot {
                                    algorithm: rec.algorithm,
                                    trial: trial as u64,
                                    k,
                                    node: rec.node_metrics(k as usize).to_vec(),
                                    max_sync_error: rec.max_sync_error(k as usize),
                                });
                            }
                        }
                        let i = algorithms.iter().position(|&a| a == rec.algorithm).expect("requested");
                        acc[i].push(&rec);
                    }
                }
                (acc, snaps)
            })
            .collect();
        for (acc, snaps) in parts {
            for (s, a) in stats.iter_mut().zip(&acc) {
                s.merge(a);
            }
            snapshots.extend(snaps);
        }
    }
    Experiment { stats, snapshots }
}

/// Oracle bias of a finite-state scenario, the same for both channels.
pub fn predict_bias(scenario: &Scenario) -> Result<BiasPrediction, OracleError> {
    predict_for_process(scenario.process(), scenario.pair_bias())
}

/// Compact end-of-run digest written next to the full statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub trials: u64,
    pub iterations: u64,
    pub algorithms: Vec<AlgorithmSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmSummary {
    pub name: String,
    /// Final-iteration statistics, one entry per node.
    pub skew_error: Vec<Cell>,
    pub offset_error: Vec<Cell>,
    pub time_error: Vec<Cell>,
    pub max_sync_error: Cell,
}

pub fn summarize(scenario: &Scenario, experiment: &Experiment) -> Summary {
    let algorithms = experiment
        .stats
        .iter()
        .map(|s| {
            let t = s.table();
            let last = t.len() - 1;
            let col = |m| (0..t.nodes).map(|u| t.cell(last, u, m)).collect();
            AlgorithmSummary {
                name: t.algorithm.clone(),
                skew_error: col(Metric::SkewError),
                offset_error: col(Metric::OffsetError),
                time_error: col(Metric::TimeError),
                max_sync_error: t.network[last],
            }
        })
        .collect();
    Summary {
        schema_version: RESULTS_SCHEMA_VERSION,
        scenario: scenario.file.name.clone(),
        seed: scenario.file.seed,
        trials: experiment.stats.first().map_or(0, AggregateStats::trials),
        iterations: scenario.iterations(),
        algorithms,
        predicted_bias: predict_bias(scenario).ok().map(|p| p.bias),
    }
}

pub fn write_summary(summary: &Summary, dir: &Path) -> Result<std::path::PathBuf, OutputError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

/// One line of a scenario audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Number of random in-bounds clocks the schedule audit samples.
const AUDIT_CLOCKS: usize = 200;
/// Length of the mobility trace checked for windowed connectivity.
const AUDIT_MOBILITY_STEPS: usize = 2000;

/// Check the scenario's structural assumptions: clock ranges inside the
/// schedule bounds, schedule containment, ergodicity and connectivity.
pub fn audit(scenario: &Scenario) -> Vec<AuditCheck> {
    use rand::SeedableRng;
    let mut checks = Vec::new();
    let bounds = scenario.schedule_bounds();
    let ranges = scenario.file.clocks;
    let inside = bounds.skew_lo <= ranges.skew[0]
        && ranges.skew[1] <= bounds.skew_hi
        && bounds.offset_lo <= ranges.offset[0]
        && ranges.offset[1] <= bounds.offset_hi;
    checks.push(AuditCheck {
        name: "clock ranges within bounds",
        passed: inside,
        detail: format!("clocks {ranges:?}, bounds {bounds:?}"),
    });

    let horizon = scenario.iterations().min(10_000) as usize;
    let schedule = scenario.schedule().and_then(|s| {
        crate::clock::IterationSchedule::new(s.start, s.dwell, s.bounds, horizon)
    });
    let synthetic = matches!(scenario.file.measurement, MeasurementSpec::Synthetic { .. });
    let (passed, detail) = match schedule {
        // synthetic measurements never read a timestamp
        _ if synthetic => (true, "not used: synthetic measurements".to_string()),
        Err(e) => (false, e.to_string()),
        Ok(s) => {
            let starts = s.build();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(scenario.file.seed);
            let clocks: Vec<_> = (0..AUDIT_CLOCKS).map(|_| bounds.sample(&mut rng)).collect();
            let mut bad = None;
            'outer: for i in 0..horizon {
                let g = s.global_interval(&starts, i).expect("within horizon");
                for c in &clocks {
                    let w = s.iteration_window(c, &starts, i).expect("sampled in bounds");
                    if !w.is_within(&g, 1e-12) {
                        bad = Some(i);
                        break 'outer;
                    }
                }
            }
            match bad {
                None => (true, format!("{AUDIT_CLOCKS} clocks, {horizon} iterations")),
                Some(i) => (false, format!("window escapes its global interval at iteration {i}")),
            }
        }
    };
    checks.push(AuditCheck {
        name: "schedule containment",
        passed,
        detail,
    });

    match scenario.process() {
        TopologyProcess::Deterministic { ensemble, pattern } => {
            checks.push(AuditCheck {
                name: "union graph connected",
                passed: ensemble.union_connected(),
                detail: format!("{} states", ensemble.len()),
            });
            let trace: Vec<_> = (0..2 * pattern.len()).map(|k| ensemble.states()[pattern[k % pattern.len()]].clone()).collect();
            checks.push(AuditCheck {
                name: "every period has a connected union",
                passed: windowed_union_connected(&trace, pattern.len()),
                detail: format!("period {}", pattern.len()),
            });
        }
        TopologyProcess::Markov { ensemble, chain, .. } => {
            checks.push(AuditCheck {
                name: "union graph connected",
                passed: ensemble.union_connected(),
                detail: format!("{} states", ensemble.len()),
            });
            let pi = chain.stationary_distribution();
            checks.push(AuditCheck {
                name: "chain ergodic",
                passed: pi.is_ok(),
                detail: match pi {
                    Ok(p) => format!("stationary distribution {p:?}"),
                    Err(e) => e.to_string(),
                },
            });
        }
        TopologyProcess::Mobility { .. } => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(scenario.file.seed);
            let mut sampler = scenario.process().sampler(&mut rng);
            let trace: Vec<_> = (0..AUDIT_MOBILITY_STEPS).map(|_| sampler.next_graph(&mut rng).graph).collect();
            let window = (1..=trace.len()).find(|&w| windowed_union_connected(&trace, w));
            checks.push(AuditCheck {
                name: "sampled mobility trace has bounded connectivity window",
                passed: window.is_some(),
                detail: match window {
                    Some(w) => format!("every {w} consecutive graphs of a {AUDIT_MOBILITY_STEPS}-step trace have a connected union"),
                    None => "trace union never connects".to_string(),
                },
            });
        }
    }
    checks
}
