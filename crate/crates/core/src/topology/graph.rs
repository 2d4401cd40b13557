use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::TopologyError;

/// Undirected measurement graph with unit edge weights.
///
/// Nodes are `0..n`; the last `n_ref` of them are reference nodes, matching
/// the convention that unknown nodes come first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    n: usize,
    n_ref: usize,
    adj: Vec<bool>,
}

impl Graph {
    pub fn empty(n: usize, n_ref: usize) -> Result<Self, TopologyError> {
        if n_ref == 0 || n_ref > n {
            return Err(TopologyError::InvalidGraph(format!(
                "need 1 <= n_ref <= n, got n = {n}, n_ref = {n_ref}"
            )));
        }
        Ok(Self {
            n,
            n_ref,
            adj: vec![false; n * n],
        })
    }

    pub fn from_edges<I>(n: usize, n_ref: usize, edges: I) -> Result<Self, TopologyError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Self::empty(n, n_ref)?;
        for (u, v) in edges {
            g.add_edge(u, v)?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<(), TopologyError> {
        if u >= self.n || v >= self.n {
            return Err(TopologyError::InvalidGraph(format!(
                "edge ({u}, {v}) out of range for {} nodes",
                self.n
            )));
        }
        if u == v {
            return Err(TopologyError::InvalidGraph(format!("self-loop at node {u}")));
        }
        self.adj[u * self.n + v] = true;
        self.adj[v * self.n + u] = true;
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn n_ref(&self) -> usize {
        self.n_ref
    }

    /// Number of non-reference nodes.
    #[inline]
    pub fn n_b(&self) -> usize {
        self.n - self.n_ref
    }

    #[inline]
    pub fn is_reference(&self, u: usize) -> bool {
        u >= self.n_b()
    }

    #[inline]
    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u * self.n + v]
    }

    /// Edge weight, 1 on edges and 0 elsewhere.
    #[inline]
    pub fn weight(&self, u: usize, v: usize) -> f64 {
        if self.has_edge(u, v) {
            1.0
        } else {
            0.0
        }
    }

    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&v| self.has_edge(u, v))
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors(u).count()
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            for v in (u + 1)..self.n {
                if self.has_edge(u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&a| a).count() / 2
    }

    /// Union of two graphs over the same node set.
    pub fn union(&self, other: &Graph) -> Result<Graph, TopologyError> {
        if self.n != other.n || self.n_ref != other.n_ref {
            return Err(TopologyError::InvalidGraph(
                "cannot union graphs over different node sets".to_string(),
            ));
        }
        Ok(Graph {
            n: self.n,
            n_ref: self.n_ref,
            adj: self.adj.iter().zip(&other.adj).map(|(a, b)| *a || *b).collect(),
        })
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Full n x n Laplacian.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |u, v| {
            if u == v {
                self.degree(u) as f64
            } else {
                -self.weight(u, v)
            }
        })
    }

    pub fn grounded_laplacian(&self) -> GroundedLaplacian {
        let full = self.laplacian();
        let nb = self.n_b();
        let grounded = full.view((0, 0), (nb, nb)).into_owned();
        GroundedLaplacian { full, grounded }
    }

    pub fn selector_matrix(&self) -> IncidenceSelector {
        let nb = self.n_b();
        let slots = self.n - 1;
        let mut d = DMatrix::zeros(nb, nb * slots);
        for u in 0..nb {
            for v in self.neighbors(u) {
                d[(u, u * slots + slot_of(u, v))] = 1.0;
            }
        }
        IncidenceSelector { matrix: d, n: self.n }
    }
}

/// Position of neighbor `v` within node `u`'s block of `n - 1` slots; the
/// self slot is skipped.
#[inline]
pub fn slot_of(u: usize, v: usize) -> usize {
    debug_assert_ne!(u, v);
    if v < u {
        v
    } else {
        v - 1
    }
}

/// Laplacian `L` and its grounded principal submatrix `L_b` (reference rows
/// and columns removed).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedLaplacian {
    pub full: DMatrix<f64>,
    pub grounded: DMatrix<f64>,
}

impl GroundedLaplacian {
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.grounded)
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Block-diagonal selector `D`: row `u` holds the weights `a_uv`, `v != u`,
/// in its own block of `n - 1` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceSelector {
    pub matrix: DMatrix<f64>,
    n: usize,
}

impl IncidenceSelector {
    pub fn column(&self, u: usize, v: usize) -> usize {
        u * (self.n - 1) + slot_of(u, v)
    }
}

/// Finite set of graphs over one node set.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEnsemble {
    states: Vec<Graph>,
}

impl GraphEnsemble {
    pub fn new(states: Vec<Graph>) -> Result<Self, TopologyError> {
        let first = states
            .first()
            .ok_or_else(|| TopologyError::InvalidGraph("ensemble has no states".to_string()))?;
        if states.iter().any(|g| g.n != first.n || g.n_ref != first.n_ref) {
            return Err(TopologyError::InvalidGraph(
                "ensemble states must share n and n_ref".to_string(),
            ));
        }
        Ok(Self { states })
    }

    pub fn states(&self) -> &[Graph] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n(&self) -> usize {
        self.states[0].n
    }

    pub fn n_ref(&self) -> usize {
        self.states[0].n_ref
    }

    pub fn union_graph(&self) -> Graph {
        let mut u = self.states[0].clone();
        for g in &self.states[1..] {
            u = u.union(g).expect("ensemble states share a node set");
        }
        u
    }

    pub fn union_connected(&self) -> bool {
        self.union_graph().is_connected()
    }

    /// Load from the JSON edge-list format (1-based node labels).
    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let file: EnsembleFile =
            serde_json::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))?;
        file.into_ensemble()
    }

    pub fn to_json(&self) -> String {
        let file = EnsembleFile {
            nodes: self.n(),
            references: self.n_ref(),
            states: self
                .states
                .iter()
                .map(|g| g.edges().into_iter().map(|(u, v)| [u + 1, v + 1]).collect())
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("ensemble serializes")
    }
}

/// On-disk ensemble: `{"nodes": 5, "references": 1, "states": [[[1,2],[3,4]], ...]}`.
/// Node labels are 1-based; the last `references` labels are reference nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub nodes: usize,
    #[serde(default = "one")]
    pub references: usize,
    pub states: Vec<Vec<[usize; 2]>>,
}

fn one() -> usize {
    1
}

impl EnsembleFile {
    pub fn into_ensemble(self) -> Result<GraphEnsemble, TopologyError> {
        let states = self
            .states
            .iter()
            .map(|edges| {
                let mut g = Graph::empty(self.nodes, self.references)?;
                for &[u, v] in edges {
                    if u == 0 || v == 0 {
                        return Err(TopologyError::InvalidGraph(
                            "node labels are 1-based".to_string(),
                        ));
                    }
                    g.add_edge(u - 1, v - 1)?;
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>, _>>()?;
        GraphEnsemble::new(states)
    }
}

/// Whether every run of `window` consecutive graphs in `trace` has a
/// connected union. A trace shorter than the window is checked as a whole.
pub fn windowed_union_connected(trace: &[Graph], window: usize) -> bool {
    if trace.is_empty() || window == 0 {
        return false;
    }
    let w = window.min(trace.len());
    trace.windows(w).all(|run| {
        let mut u = run[0].clone();
        for g in &run[1..] {
            u = u.union(g).expect("trace graphs share a node set");
        }
        u.is_connected()
    })
}
