use serde::{Deserialize, Serialize};

use super::trial::{Metric, TrialRecord};

/// One-pass mean and variance accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Combine two accumulators as if all samples had been pushed into one.
    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.count as f64, other.count as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.count = n;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn cell(&self) -> Cell {
        Cell {
            mean: self.mean,
            variance: self.variance(),
            count: self.count,
        }
    }
}

/// Running statistics over trials of one algorithm, per recorded instant.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStats {
    pub algorithm: String,
    n: usize,
    times: Vec<f64>,
    node: Vec<[Welford; 3]>,
    network: Vec<Welford>,
}

impl AggregateStats {
    /// Empty accumulator for `n` nodes at the given instants `t_k`.
    pub fn new(algorithm: impl Into<String>, n: usize, times: Vec<f64>) -> Self {
        let len = times.len();
        Self {
            algorithm: algorithm.into(),
            n,
            node: vec![[Welford::default(); 3]; len * n],
            network: vec![Welford::default(); len],
            times,
        }
    }

    pub fn push(&mut self, record: &TrialRecord) {
        assert_eq!(record.len(), self.times.len(), "record length mismatch");
        assert_eq!(record.n(), self.n, "node count mismatch");
        for k in 0..self.times.len() {
            for (u, m) in record.node_metrics(k).iter().enumerate() {
                let acc = &mut self.node[k * self.n + u];
                for c in 0..3 {
                    acc[c].push(m[c]);
                }
            }
            self.network[k].push(record.max_sync_error(k));
        }
    }

    pub fn merge(&mut self, other: &AggregateStats) {
        assert_eq!(self.times.len(), other.times.len());
        assert_eq!(self.n, other.n);
        for (a, b) in self.node.iter_mut().zip(&other.node) {
            for c in 0..3 {
                a[c].merge(&b[c]);
            }
        }
        for (a, b) in self.network.iter_mut().zip(&other.network) {
            a.merge(b);
        }
    }

    pub fn trials(&self) -> u64 {
        self.network.first().map_or(0, |w| w.count())
    }

    pub fn node_stat(&self, k: usize, u: usize, m: Metric) -> &Welford {
        &self.node[k * self.n + u][m.index()]
    }

    pub fn network_stat(&self, k: usize) -> &Welford {
        &self.network[k]
    }

    pub fn table(&self) -> StatsTable {
        StatsTable {
            algorithm: self.algorithm.clone(),
            nodes: self.n,
            times: self.times.clone(),
            node: self.node.iter().map(|c| [c[0].cell(), c[1].cell(), c[2].cell()]).collect(),
            network: self.network.iter().map(Welford::cell).collect(),
        }
    }
}

/// Emitted summary of one statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub variance: f64,
    pub count: u64,
}

/// The emitted form of [`AggregateStats`]: what the CSV and JSON files hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub algorithm: String,
    pub nodes: usize,
    pub times: Vec<f64>,
    /// Index `k * nodes + u`, columns in [`Metric`] order.
    pub node: Vec<[Cell; 3]>,
    pub network: Vec<Cell>,
}

impl StatsTable {
    pub fn cell(&self, k: usize, u: usize, m: Metric) -> Cell {
        self.node[k * self.nodes + u][m.index()]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn welford_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..1000).map(|_| 1e6 + rng.random::<f64>()).collect();
        let mut w = Welford::default();
        xs.iter().for_each(|&x| w.push(x));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((w.mean() - mean).abs() < 1e-12 * mean);
        assert!((w.variance() - var).abs() < 1e-9 * var.max(1.0));
    }

    #[test]
    fn merge_is_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..500).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
        let mut seq = Welford::default();
        xs.iter().for_each(|&x| seq.push(x));
        let mut merged = Welford::default();
        for chunk in xs.chunks(37).rev() {
            let mut w = Welford::default();
            chunk.iter().for_each(|&x| w.push(x));
            merged.merge(&w);
        }
        assert_eq!(merged.count(), seq.count());
        assert!((merged.mean() - seq.mean()).abs() < 1e-12);
        assert!((merged.variance() - seq.variance()).abs() < 1e-12);
    }

    #[test]
    fn single_sample() {
        let mut w = Welford::default();
        w.push(3.25);
        assert_eq!((w.mean(), w.variance(), w.count()), (3.25, 0.0, 1));
        let mut e = Welford::default();
        e.merge(&w);
        assert_eq!(e, w);
    }
}
