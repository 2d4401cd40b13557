//! Measurement graphs and the processes that switch between them.
//!
//! Three regimes drive the graph sequence `G(0), G(1), ...`:
//!
//! | Regime          | State                            | Graph at iteration k              |
//! |-----------------|----------------------------------|-----------------------------------|
//! | `Deterministic` | periodic pattern of state indices | `states[pattern[k % period]]`     |
//! | `Markov`        | current chain state               | chain step, one per iteration     |
//! | `Mobility`      | node positions                    | geometric graph after one dwell   |

mod graph;
mod markov;
mod mobility;

pub use graph::{
    min_eigenvalue, slot_of, windowed_union_connected, EnsembleFile, Graph, GraphEnsemble, GroundedLaplacian,
    IncidenceSelector,
};
pub use markov::{sample_index, MarkovChain};
pub use mobility::{geometric_graph, WaypointModel, WaypointMotion};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("transition matrix is not row-stochastic: {0}")]
    NotStochastic(String),
    #[error("Markov chain is not ergodic: {0}")]
    NotErgodic(String),
    #[error("invalid mobility model: {0}")]
    InvalidMobility(String),
    #[error("invalid switching pattern: {0}")]
    InvalidPattern(String),
    #[error("failed to parse ensemble: {0}")]
    Parse(String),
}

/// How the measurement graph switches over iterations.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologyProcess {
    /// Periodic schedule: iteration `k` uses `pattern[k % pattern.len()]`.
    Deterministic { ensemble: GraphEnsemble, pattern: Vec<usize> },
    Markov {
        ensemble: GraphEnsemble,
        chain: MarkovChain,
        initial: Vec<f64>,
    },
    Mobility { nodes: usize, n_ref: usize, model: WaypointModel, dwell: f64 },
}

impl TopologyProcess {
    pub fn deterministic(ensemble: GraphEnsemble, pattern: Vec<usize>) -> Result<Self, TopologyError> {
        if pattern.is_empty() {
            return Err(TopologyError::InvalidPattern("pattern is empty".to_string()));
        }
        if let Some(&bad) = pattern.iter().find(|&&s| s >= ensemble.len()) {
            return Err(TopologyError::InvalidPattern(format!(
                "state index {bad} out of range for {} states",
                ensemble.len()
            )));
        }
        Ok(Self::Deterministic { ensemble, pattern })
    }

    pub fn markov(ensemble: GraphEnsemble, chain: MarkovChain, initial: Option<Vec<f64>>) -> Result<Self, TopologyError> {
        if chain.len() != ensemble.len() {
            return Err(TopologyError::NotStochastic(format!(
                "{} chain states for {} graphs",
                chain.len(),
                ensemble.len()
            )));
        }
        let initial = match initial {
            Some(p) => {
                let sum: f64 = p.iter().sum();
                if p.len() != chain.len() || p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                    return Err(TopologyError::NotStochastic(
                        "initial distribution must be a probability vector over the states".to_string(),
                    ));
                }
                p
            }
            None => vec![1.0 / chain.len() as f64; chain.len()],
        };
        Ok(Self::Markov {
            ensemble,
            chain,
            initial,
        })
    }

    pub fn mobility(nodes: usize, n_ref: usize, model: WaypointModel, dwell: f64) -> Result<Self, TopologyError> {
        model.validate()?;
        if n_ref == 0 || n_ref > nodes {
            return Err(TopologyError::InvalidGraph("need 1 <= n_ref <= nodes".to_string()));
        }
        if !(dwell > 0.0) {
            return Err(TopologyError::InvalidMobility("dwell must be positive".to_string()));
        }
        Ok(Self::Mobility {
            nodes,
            n_ref,
            model,
            dwell,
        })
    }

    pub fn n(&self) -> usize {
        match self {
            Self::Deterministic { ensemble, .. } | Self::Markov { ensemble, .. } => ensemble.n(),
            Self::Mobility { nodes, .. } => *nodes,
        }
    }

    pub fn n_ref(&self) -> usize {
        match self {
            Self::Deterministic { ensemble, .. } | Self::Markov { ensemble, .. } => ensemble.n_ref(),
            Self::Mobility { n_ref, .. } => *n_ref,
        }
    }

    pub fn ensemble(&self) -> Option<&GraphEnsemble> {
        match self {
            Self::Deterministic { ensemble, .. } | Self::Markov { ensemble, .. } => Some(ensemble),
            Self::Mobility { .. } => None,
        }
    }

    /// Long-run fraction of iterations spent in each ensemble state.
    pub fn occupancy(&self) -> Result<Option<Vec<f64>>, TopologyError> {
        match self {
            Self::Deterministic { ensemble, pattern } => {
                let mut pi = vec![0.0; ensemble.len()];
                for &s in pattern {
                    pi[s] += 1.0;
                }
                let total = pattern.len() as f64;
                Ok(Some(pi.into_iter().map(|c| c / total).collect()))
            }
            Self::Markov { chain, .. } => chain.stationary_distribution().map(Some),
            Self::Mobility { .. } => Ok(None),
        }
    }

    /// Start a sampler that owns its own state; `rng` is only used at start-up
    /// and by [`TopologySampler::next_graph`].
    pub fn sampler<R: Rng + ?Sized>(&self, rng: &mut R) -> TopologySampler {
        let state = match self {
            Self::Deterministic { .. } => SamplerState::Periodic,
            Self::Markov { initial, .. } => SamplerState::Chain(None, initial.clone()),
            Self::Mobility { nodes, model, .. } => SamplerState::Motion(WaypointMotion::new(*model, *nodes, rng)),
        };
        TopologySampler {
            process: self.clone(),
            state,
            k: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum SamplerState {
    Periodic,
    Chain(Option<usize>, Vec<f64>),
    Motion(WaypointMotion),
}

/// Per-trial generator of the graph sequence. Produces `G(0), G(1), ...` in order.
#[derive(Debug, Clone)]
pub struct TopologySampler {
    process: TopologyProcess,
    state: SamplerState,
    k: u64,
}

/// A generated graph with its ensemble state, when there is one.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub k: u64,
    pub state: Option<usize>,
    pub graph: Graph,
}

impl TopologySampler {
    pub fn next_graph<R: Rng + ?Sized>(&mut self, rng: &mut R) -> GraphSample {
        let k = self.k;
        self.k += 1;
        let (state, graph) = match (&self.process, &mut self.state) {
            (TopologyProcess::Deterministic { ensemble, pattern }, _) => {
                let s = pattern[(k % pattern.len() as u64) as usize];
                (Some(s), ensemble.states()[s].clone())
            }
            (TopologyProcess::Markov { ensemble, chain, .. }, SamplerState::Chain(current, initial)) => {
                let s = match *current {
                    None => sample_index(initial, rng),
                    Some(prev) => chain.step(prev, rng),
                };
                *current = Some(s);
                (Some(s), ensemble.states()[s].clone())
            }
            (TopologyProcess::Mobility { n_ref, dwell, .. }, SamplerState::Motion(motion)) => {
                if k > 0 {
                    motion.advance(*dwell, rng);
                }
                let g = motion.graph(*n_ref).expect("validated node counts");
                (None, g)
            }
            _ => unreachable!("sampler state matches its process"),
        };
        GraphSample { k, state, graph }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three_states() -> GraphEnsemble {
        GraphEnsemble::new(vec![
            Graph::from_edges(3, 1, [(0, 1)]).unwrap(),
            Graph::from_edges(3, 1, [(1, 2)]).unwrap(),
            Graph::from_edges(3, 1, [(0, 2)]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn periodic_rule_occupancy() {
        // states by k mod 5: 0,1 -> first; 2,3 -> second; 4 -> third
        let p = TopologyProcess::deterministic(three_states(), vec![0, 0, 1, 1, 2]).unwrap();
        assert_eq!(p.occupancy().unwrap().unwrap(), vec![0.4, 0.4, 0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = p.sampler(&mut rng);
        let mut counts = [0; 3];
        for _ in 0..1000 {
            counts[s.next_graph(&mut rng).state.unwrap()] += 1;
        }
        assert_eq!(counts, [400, 400, 200]);
    }

    #[test]
    fn markov_sampler_is_reproducible_and_matches_stationary() {
        let chain = MarkovChain::new(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.3, 0.0, 0.7],
            vec![0.2, 0.6, 0.2],
        ])
        .unwrap();
        let p = TopologyProcess::markov(three_states(), chain, None).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = p.sampler(&mut rng);
            (0..100_000).map(|_| s.next_graph(&mut rng).state.unwrap()).collect::<Vec<_>>()
        };
        let a = run(17);
        assert_eq!(a, run(17));
        let pi = p.occupancy().unwrap().unwrap();
        for i in 0..3 {
            let f = a.iter().filter(|&&s| s == i).count() as f64 / a.len() as f64;
            assert!((f - pi[i]).abs() < 0.02);
        }
    }

    #[test]
    fn rejects_bad_processes() {
        assert!(TopologyProcess::deterministic(three_states(), vec![0, 3]).is_err());
        assert!(TopologyProcess::deterministic(three_states(), vec![]).is_err());
        let chain = MarkovChain::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(TopologyProcess::markov(three_states(), chain, None).is_err());
        assert!(TopologyProcess::mobility(10, 1, WaypointModel::default(), 0.0).is_err());
    }

    #[test]
    fn mobility_graphs_are_symmetric() {
        let p = TopologyProcess::mobility(10, 1, WaypointModel::default(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = p.sampler(&mut rng);
        for _ in 0..200 {
            let g = s.next_graph(&mut rng).graph;
            for u in 0..10 {
                assert!(!g.has_edge(u, u));
                for v in 0..10 {
                    assert_eq!(g.has_edge(u, v), g.has_edge(v, u));
                }
            }
            let l = g.laplacian();
            for r in 0..10 {
                assert_eq!(l.row(r).sum(), 0.0);
            }
            assert!(g.grounded_laplacian().min_eigenvalue() >= -1e-10);
        }
    }
}
