//! One Monte Carlo trial: sample clocks, then per iteration generate the
//! graph and measurements once and feed them to every requested algorithm.
//!
//! Randomness comes from independent ChaCha streams keyed by
//! `(master seed, trial, stream)`: the master seed selects the key and
//! `trial * 16 + stream` the stream id. The environment never draws from an
//! algorithm-dependent stream, so all algorithms of a trial see the same
//! clocks, graphs, noise and delays, and adding an algorithm changes nothing
//! for the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::scenario::{Algorithm, MeasurementSpec, Scenario};
use crate::ats::{AtsMessages, AtsState, AtsTuning};
use crate::clock::ClockParams;
use crate::estimators::{disync_i_iteration, AlgorithmConfig, EstimatorState, MeasurementTable};
use crate::oracle::pair_bias_matrix;
use crate::pairwise::{estimate_relative, measurement_initiator, one_way_messages, run_exchange_with_delays, to_difference};
use crate::topology::{Graph, TopologySampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Stream {
    Clocks = 1,
    Topology = 2,
    Measurement = 3,
}

fn stream_rng(master: u64, trial: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial.wrapping_mul(16).wrapping_add(stream as u64));
    rng
}

/// Which trial of which experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrialSeed {
    pub master: u64,
    pub trial: u64,
}

/// Per-node metrics, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    /// Log-skew estimate minus truth; for the virtual-clock baseline `ln(alpha * rho)`.
    SkewError,
    /// Offset estimate minus truth; for the baseline `o + beta * rho`.
    OffsetError,
    /// Estimated global time minus true global time at `t_k`.
    TimeError,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::SkewError, Metric::OffsetError, Metric::TimeError];

    pub fn name(self) -> &'static str {
        match self {
            Metric::SkewError => "skew_error",
            Metric::OffsetError => "offset_error",
            Metric::TimeError => "time_error",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Name of the network-wide metric `max_{u,v} |t_u - t_v|`.
pub const MAX_SYNC_ERROR: &str = "max_sync_error";

/// Metrics of one algorithm over one trial, at `k = 0..=iterations`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub algorithm: Algorithm,
    pub seed: TrialSeed,
    n: usize,
    node: Vec<[f64; 3]>,
    network: Vec<f64>,
}

impl TrialRecord {
    fn new(algorithm: Algorithm, seed: TrialSeed, n: usize, iterations: u64) -> Self {
        let len = iterations as usize + 1;
        Self {
            algorithm,
            seed,
            n,
            node: Vec::with_capacity(len * n),
            network: Vec::with_capacity(len),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of recorded instants, `iterations + 1`.
    pub fn len(&self) -> usize {
        self.network.len()
    }

    pub fn is_empty(&self) -> bool {
        self.network.is_empty()
    }

    pub fn metric(&self, k: usize, u: usize, m: Metric) -> f64 {
        self.node[k * self.n + u][m.index()]
    }

    pub fn node_metrics(&self, k: usize) -> &[[f64; 3]] {
        &self.node[k * self.n..(k + 1) * self.n]
    }

    pub fn max_sync_error(&self, k: usize) -> f64 {
        self.network[k]
    }

    fn push(&mut self, metrics: &[[f64; 3]], times: &[f64]) {
        self.node.extend_from_slice(metrics);
        let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
        self.network.push(hi - lo);
    }
}

/// Everything an algorithm may observe during iteration `k`.
#[derive(Debug, Clone)]
pub struct IterationData {
    pub k: u64,
    pub graph: Graph,
    pub measurements: MeasurementTable,
    /// One-way message pairs, present when requested.
    pub messages: Option<AtsMessages>,
}

/// Clock truth and the per-iteration generator of one trial.
pub struct Environment<'a> {
    scenario: &'a Scenario,
    clocks: Vec<ClockParams>,
    sampler: TopologySampler,
    topo_rng: ChaCha8Rng,
    meas_rng: ChaCha8Rng,
    bias: Vec<f64>,
    k: u64,
}

impl<'a> Environment<'a> {
    pub fn new(scenario: &'a Scenario, seed: TrialSeed) -> Self {
        let n = scenario.n();
        let n_b = n - scenario.n_ref();
        let ranges = scenario.file.clocks.to_bounds().expect("checked at load");
        let mut clock_rng = stream_rng(seed.master, seed.trial, Stream::Clocks);
        let clocks = (0..n)
            .map(|u| if u < n_b { ranges.sample(&mut clock_rng) } else { ClockParams::reference() })
            .collect();
        let mut topo_rng = stream_rng(seed.master, seed.trial, Stream::Topology);
        let sampler = scenario.process().sampler(&mut topo_rng);
        let bias = pair_bias_matrix(n, scenario.pair_bias()).expect("checked at load");
        Self {
            scenario,
            clocks,
            sampler,
            topo_rng,
            meas_rng: stream_rng(seed.master, seed.trial, Stream::Measurement),
            bias,
            k: 0,
        }
    }

    pub fn clocks(&self) -> &[ClockParams] {
        &self.clocks
    }

    /// True node variables `(ln alpha, beta)`.
    pub fn truth(&self) -> Vec<[f64; 2]> {
        self.clocks.iter().map(|c| [c.log_skew(), c.offset]).collect()
    }

    pub fn next_iteration(&mut self, with_messages: bool) -> IterationData {
        let k = self.k;
        self.k += 1;
        let graph = self.sampler.next_graph(&mut self.topo_rng).graph;
        let n = graph.n();
        let t = self.scenario.time_at(k);
        let dwell = self.scenario.file.timing.interval;
        let mut table = MeasurementTable::new(n);
        let mut messages = with_messages.then(|| AtsMessages::new(n));
        for (a, b) in graph.edges() {
            let w = measurement_initiator(a, b);
            let p = a + b - w;
            match &self.scenario.file.measurement {
                MeasurementSpec::Synthetic { noise_std, .. } => {
                    let gamma = self.bias[a.min(b) * n + a.max(b)];
                    let (cw, cp) = (&self.clocks[w], &self.clocks[p]);
                    let diff = [cw.log_skew() - cp.log_skew(), cw.offset - cp.offset];
                    let mut z = [0.0; 2];
                    for (c, zc) in z.iter_mut().enumerate() {
                        let e: f64 = StandardNormal.sample(&mut self.meas_rng);
                        *zc = diff[c] + gamma + noise_std * e;
                    }
                    table.insert_pair(w, p, z);
                }
                MeasurementSpec::Timestamp { delay } => {
                    let d = delay.sample_exchange(&mut self.meas_rng);
                    let (cw, cp) = (&self.clocks[w], &self.clocks[p]);
                    let rec = run_exchange_with_delays(cw, cp, t, dwell, d);
                    let (skew, offset) = estimate_relative(&rec).expect("positive dwell separates the round trips");
                    let (ls, off) = to_difference(skew, offset, w, p, k).expect("positive clocks");
                    table.insert_pair(w, p, [ls.value, off.value]);
                    if let Some(m) = messages.as_mut() {
                        m.insert(w, p, one_way_messages(cw, cp, t, dwell, [d[0], d[2]]));
                        m.insert(p, w, one_way_messages(cp, cw, t, dwell, [d[1], d[3]]));
                    }
                }
            }
        }
        IterationData {
            k,
            graph,
            measurements: table,
            messages,
        }
    }
}

enum Runner {
    Law(AlgorithmConfig, EstimatorState),
    Ats(AtsState),
}

/// Run several algorithms on one shared environment. Records come back in
/// the order of `algorithms`.
pub fn run_trials(scenario: &Scenario, algorithms: &[Algorithm], seed: TrialSeed) -> Vec<TrialRecord> {
    let n = scenario.n();
    let n_ref = scenario.n_ref();
    let pause = scenario.pause();
    let increment = scenario.file.algorithms.distance_increment;
    let tuning = AtsTuning::new(scenario.file.algorithms.ats_rho).expect("checked at load");
    let mut env = Environment::new(scenario, seed);
    let clocks = env.clocks().to_vec();
    let truth = env.truth();
    let want_messages = algorithms.contains(&Algorithm::Ats);
    let mut runners: Vec<Runner> = algorithms
        .iter()
        .map(|a| match a.kind() {
            Some(kind) => Runner::Law(scenario.config(kind), EstimatorState::new(n, n_ref)),
            None => Runner::Ats(AtsState::new(n, tuning)),
        })
        .collect();
    let iterations = scenario.iterations();
    let mut records: Vec<TrialRecord> = algorithms
        .iter()
        .map(|&a| TrialRecord::new(a, seed, n, iterations))
        .collect();
    let mut metrics = vec![[0.0; 3]; n];
    let mut times = vec![0.0; n];
    let mut record_all = |k: u64, runners: &[Runner], records: &mut [TrialRecord]| {
        let t = scenario.time_at(k);
        for (runner, rec) in runners.iter().zip(records.iter_mut()) {
            for u in 0..n {
                let c = &clocks[u];
                let tau = c.local_time(t);
                let (m, time) = match runner {
                    Runner::Law(_, st) => {
                        let x = st.estimate(u);
                        let (skew, offset) = st.recover_clock_estimate(u);
                        let est = (tau - offset) / skew;
                        ([x[0] - truth[u][0], x[1] - truth[u][1], est - t], est)
                    }
                    Runner::Ats(st) => {
                        let rho = st.virtual_skew(u);
                        let virt = st.virtual_time(u, tau);
                        ([(c.skew * rho).ln(), st.virtual_offset(u) + c.offset * rho, virt - t], virt)
                    }
                };
                metrics[u] = m;
                times[u] = time;
            }
            rec.push(&metrics, &times);
        }
    };
    record_all(0, &runners, &mut records);
    for k in 0..iterations {
        let data = env.next_iteration(want_messages);
        for runner in runners.iter_mut() {
            match runner {
                Runner::Law(cfg, st) => {
                    disync_i_iteration(st, cfg, &data.graph, &data.measurements, pause, increment);
                }
                Runner::Ats(st) => {
                    if !pause.is_some_and(|p| p.contains(k)) {
                        st.iterate(&data.graph, data.messages.as_ref().expect("requested"));
                    }
                }
            }
        }
        record_all(k + 1, &runners, &mut records);
    }
    records
}

pub fn run_trial(scenario: &Scenario, algorithm: Algorithm, seed: TrialSeed) -> TrialRecord {
    run_trials(scenario, &[algorithm], seed).pop().expect("one record")
}
