use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TopologyError;

const ROW_SUM_TOL: f64 = 1e-12;

/// Homogeneous finite-state Markov chain with a row-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct MarkovChain {
    rows: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, TopologyError> {
        let n = rows.len();
        if n == 0 {
            return Err(TopologyError::NotStochastic("empty transition matrix".to_string()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(TopologyError::NotStochastic(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(TopologyError::NotStochastic(format!("row {i} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(TopologyError::NotStochastic(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| self.rows[i][j])
    }

    /// Draw the successor of `state`.
    pub fn step<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        sample_index(&self.rows[state], rng)
    }

    pub fn is_irreducible(&self) -> bool {
        let n = self.len();
        (0..n).all(|s| self.reachable_from(s).iter().all(|&r| r))
    }

    fn reachable_from(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(i) = stack.pop() {
            for (j, &p) in self.rows[i].iter().enumerate() {
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }

    /// Period of an irreducible chain: gcd of `level(i) + 1 - level(j)` over
    /// positive transitions `i -> j`, with BFS levels from state 0.
    pub fn period(&self) -> usize {
        let n = self.len();
        let mut level = vec![usize::MAX; n];
        level[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            for (j, &p) in self.rows[i].iter().enumerate() {
                if p > 0.0 && level[j] == usize::MAX {
                    level[j] = level[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        let mut g = 0usize;
        for i in 0..n {
            if level[i] == usize::MAX {
                continue;
            }
            for (j, &p) in self.rows[i].iter().enumerate() {
                if p > 0.0 && level[j] != usize::MAX {
                    let diff = (level[i] + 1).abs_diff(level[j]);
                    g = gcd(g, diff);
                }
            }
        }
        g
    }

    pub fn is_aperiodic(&self) -> bool {
        self.period() == 1
    }

    /// Unique stationary distribution of an ergodic chain, from the linear
    /// system `pi (P - I) = 0`, `sum(pi) = 1`.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>, TopologyError> {
        if !self.is_irreducible() {
            return Err(TopologyError::NotErgodic("chain is not irreducible".to_string()));
        }
        let period = self.period();
        if period != 1 {
            return Err(TopologyError::NotErgodic(format!("chain is periodic with period {period}")));
        }
        let n = self.len();
        let p = self.matrix();
        // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1
        let mut a = p.transpose() - DMatrix::identity(n, n);
        let mut b = DVector::zeros(n);
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        b[n - 1] = 1.0;
        let pi = a
            .lu()
            .solve(&b)
            .ok_or_else(|| TopologyError::NotErgodic("singular stationary system".to_string()))?;
        Ok(pi.iter().copied().collect())
    }
}

impl TryFrom<Vec<Vec<f64>>> for MarkovChain {
    type Error = TopologyError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        MarkovChain::new(rows)
    }
}

impl From<MarkovChain> for Vec<Vec<f64>> {
    fn from(chain: MarkovChain) -> Self {
        chain.rows
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Draw an index from a discrete distribution given by `weights`.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total; fall back to the last positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}
