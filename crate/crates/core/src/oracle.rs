//! Analytic predictions for the decreasing-gain law under switching graphs.
//!
//! With `e(k) = x_hat(k) - x` over the non-reference nodes,
//! `e(k+1) = (I - m(k) L_b(k)) e(k) + m(k) D(k) eps(k)`, and when the noise has
//! constant mean `gamma` the error settles at `b` solving `L_b_bar b = D_bar gamma`,
//! where the barred matrices are occupancy-weighted averages over the ensemble.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::estimators::StepSize;
use crate::pairwise::measurement_initiator;
use crate::topology::{slot_of, GraphEnsemble, TopologyError, TopologyProcess};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("occupancy must be a probability vector over {expected} states: {reason}")]
    InvalidOccupancy { expected: usize, reason: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("averaged grounded Laplacian is singular; the union graph does not reach every node from a reference")]
    Singular,
    #[error("bias solve residual {0:e} exceeds 1e-10")]
    Residual(f64),
    #[error("regime has no finite ensemble to average over")]
    NoEnsemble,
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Occupancy-weighted grounded Laplacian and selector.
pub fn mean_matrices(ensemble: &GraphEnsemble, pi: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), OracleError> {
    let expected = ensemble.len();
    if pi.len() != expected {
        return Err(OracleError::InvalidOccupancy {
            expected,
            reason: format!("got {} weights", pi.len()),
        });
    }
    if pi.iter().any(|&p| !(p >= 0.0)) {
        return Err(OracleError::InvalidOccupancy {
            expected,
            reason: "negative weight".to_string(),
        });
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(OracleError::InvalidOccupancy {
            expected,
            reason: format!("weights sum to {total}"),
        });
    }
    let n = ensemble.n();
    let nb = n - ensemble.n_ref();
    let mut lb = DMatrix::zeros(nb, nb);
    let mut d = DMatrix::zeros(nb, nb * (n - 1));
    for (g, &p) in ensemble.states().iter().zip(pi) {
        lb += g.grounded_laplacian().grounded * p;
        d += g.selector_matrix().matrix * p;
    }
    Ok((lb, d))
}

/// Mean bias of a pair: `gamma` is the mean of `x_u - x_v` noise as computed by
/// the initiator `max(u, v)` about itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairBias {
    pub u: usize,
    pub v: usize,
    pub gamma: f64,
}

/// Dense `n x n` table whose entry `a * n + b`, `a < b`, is the bias of the
/// pair; unlisted pairs get the mean of the listed ones.
pub fn pair_bias_matrix(n: usize, table: &[PairBias]) -> Result<Vec<f64>, OracleError> {
    let mut per_pair = vec![None; n * n];
    for p in table {
        if p.u == p.v || p.u >= n || p.v >= n {
            return Err(OracleError::Dimension(format!("bad pair ({}, {})", p.u, p.v)));
        }
        per_pair[p.u.min(p.v) * n + p.u.max(p.v)] = Some(p.gamma);
    }
    let fill = if table.is_empty() {
        0.0
    } else {
        table.iter().map(|p| p.gamma).sum::<f64>() / table.len() as f64
    };
    Ok(per_pair.into_iter().map(|g| g.unwrap_or(fill)).collect())
}

/// Stacked noise mean, one block of `n - 1` slots per non-reference node.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBiasVector {
    n: usize,
    n_ref: usize,
    gamma: DVector<f64>,
}

impl NoiseBiasVector {
    /// Build from per-pair biases. The initiator's slot holds `+gamma`, the
    /// mirror slot `-gamma`. Pairs missing from `table` get the mean of the
    /// listed biases, standing in for noise on edges that never occur.
    pub fn from_pairs(n: usize, n_ref: usize, table: &[PairBias]) -> Result<Self, OracleError> {
        let per_pair = pair_bias_matrix(n, table)?;
        let nb = n - n_ref;
        let mut gamma = DVector::zeros(nb * (n - 1));
        for u in 0..nb {
            for v in (0..n).filter(|&v| v != u) {
                let (a, b) = (u.min(v), u.max(v));
                let g = per_pair[a * n + b];
                let sign = if measurement_initiator(u, v) == u { 1.0 } else { -1.0 };
                gamma[u * (n - 1) + slot_of(u, v)] = sign * g;
            }
        }
        Ok(Self { n, n_ref, gamma })
    }

    /// Mean of the noise on `x_u - x_v` as seen by `u`.
    pub fn entry(&self, u: usize, v: usize) -> f64 {
        self.gamma[u * (self.n - 1) + slot_of(u, v)]
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.gamma
    }

    pub fn n_ref(&self) -> usize {
        self.n_ref
    }
}

/// Solve `L_b_bar b = D_bar gamma` by Cholesky, checking the residual.
pub fn predicted_bias(lb: &DMatrix<f64>, d: &DMatrix<f64>, gamma: &DVector<f64>) -> Result<DVector<f64>, OracleError> {
    if lb.nrows() != lb.ncols() || d.nrows() != lb.nrows() || d.ncols() != gamma.len() {
        return Err(OracleError::Dimension(format!(
            "L_b {}x{}, D {}x{}, gamma {}",
            lb.nrows(),
            lb.ncols(),
            d.nrows(),
            d.ncols(),
            gamma.len()
        )));
    }
    let rhs = d * gamma;
    let chol = lb.clone().cholesky().ok_or(OracleError::Singular)?;
    let b = chol.solve(&rhs);
    let residual = (lb * &b - &rhs).amax();
    if !(residual < 1e-10) {
        return Err(OracleError::Residual(residual));
    }
    Ok(b)
}

/// Ensemble, occupancy and averaged matrices of a finite-state regime.
pub fn predict_for_process(process: &TopologyProcess, table: &[PairBias]) -> Result<BiasPrediction, OracleError> {
    let ensemble = process.ensemble().ok_or(OracleError::NoEnsemble)?;
    let pi = process.occupancy()?.ok_or(OracleError::NoEnsemble)?;
    let (lb, d) = mean_matrices(ensemble, &pi)?;
    let gamma = NoiseBiasVector::from_pairs(ensemble.n(), ensemble.n_ref(), table)?;
    let bias = predicted_bias(&lb, &d, gamma.as_vector())?;
    Ok(BiasPrediction {
        occupancy: pi,
        min_eigenvalue: crate::topology::min_eigenvalue(&lb),
        bias: bias.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasPrediction {
    pub occupancy: Vec<f64>,
    /// Smallest eigenvalue of the averaged grounded Laplacian.
    pub min_eigenvalue: f64,
    pub bias: Vec<f64>,
}

/// Exact mean error `E e(k)`, `k = 0..=iterations`, of the decreasing-gain law
/// on a finite-state regime with constant-mean noise and mean initial error
/// `e0`.
///
/// The error depends on the past graph sequence, so the averaged matrices
/// alone do not give a finite-horizon mean under Markov switching. Instead
/// this tracks `mu_s(k) = E[e(k) 1{state(k) = s}]`, which obeys the linear
/// recursion `mu_s'(k+1) = sum_s P[s][s'] ((I - m L_s) mu_s + m D_s gamma p_s(k))`.
/// A deterministic pattern is the special case with a point-mass state.
pub fn mean_error_trajectory(
    process: &TopologyProcess,
    table: &[PairBias],
    e0: &DVector<f64>,
    step: &StepSize,
    iterations: u64,
) -> Result<Vec<DVector<f64>>, OracleError> {
    let ensemble = process.ensemble().ok_or(OracleError::NoEnsemble)?;
    let nb = ensemble.n() - ensemble.n_ref();
    if e0.len() != nb {
        return Err(OracleError::Dimension(format!("e0 has {} entries, expected {nb}", e0.len())));
    }
    let gamma = NoiseBiasVector::from_pairs(ensemble.n(), ensemble.n_ref(), table)?;
    let per_state: Vec<(DMatrix<f64>, DVector<f64>)> = ensemble
        .states()
        .iter()
        .map(|g| (g.grounded_laplacian().grounded, g.selector_matrix().matrix * gamma.as_vector()))
        .collect();
    let states = per_state.len();
    let (mut p, transition): (Vec<f64>, Option<Vec<Vec<f64>>>) = match process {
        TopologyProcess::Deterministic { pattern, .. } => {
            let mut p = vec![0.0; states];
            p[pattern[0]] = 1.0;
            (p, None)
        }
        TopologyProcess::Markov { chain, initial, .. } => (initial.clone(), Some(chain.rows().to_vec())),
        TopologyProcess::Mobility { .. } => return Err(OracleError::NoEnsemble),
    };
    let mut mu: Vec<DVector<f64>> = p.iter().map(|&ps| e0 * ps).collect();
    let mut out = Vec::with_capacity(iterations as usize + 1);
    out.push(e0.clone());
    for k in 0..iterations {
        let m = step.gain(k);
        let nu: Vec<DVector<f64>> = per_state
            .iter()
            .zip(&mu)
            .zip(&p)
            .map(|(((l, dg), mu_s), &ps)| mu_s - (l * mu_s) * m + dg * (m * ps))
            .collect();
        match (&transition, process) {
            (Some(rows), _) => {
                let mut next_mu = vec![DVector::zeros(nb); states];
                let mut next_p = vec![0.0; states];
                for (s, row) in rows.iter().enumerate() {
                    for (t, &w) in row.iter().enumerate() {
                        if w != 0.0 {
                            next_mu[t] += &nu[s] * w;
                            next_p[t] += p[s] * w;
                        }
                    }
                }
                mu = next_mu;
                p = next_p;
            }
            (None, TopologyProcess::Deterministic { pattern, .. }) => {
                let total = nu.into_iter().fold(DVector::zeros(nb), |a, v| a + v);
                let next = pattern[((k + 1) % pattern.len() as u64) as usize];
                p = vec![0.0; states];
                p[next] = 1.0;
                mu = (0..states).map(|s| if s == next { total.clone() } else { DVector::zeros(nb) }).collect();
            }
            _ => unreachable!("mobility rejected above"),
        }
        out.push(mu.iter().fold(DVector::zeros(nb), |a, v| a + v));
    }
    Ok(out)
}

/// Direct matrix recursion of the error; returns `e(0), ..., e(K)` for `K`
/// steps, where step `k` uses gain `m(k)`.
pub fn error_recursion(
    lb: &[DMatrix<f64>],
    d: &[DMatrix<f64>],
    eps: &[DVector<f64>],
    e0: &DVector<f64>,
    step: &StepSize,
) -> Result<Vec<DVector<f64>>, OracleError> {
    if lb.len() != d.len() || lb.len() != eps.len() {
        return Err(OracleError::Dimension(format!(
            "trace lengths {} / {} / {}",
            lb.len(),
            d.len(),
            eps.len()
        )));
    }
    let nb = e0.len();
    let mut out = Vec::with_capacity(lb.len() + 1);
    out.push(e0.clone());
    for (k, ((l, dk), ek)) in lb.iter().zip(d).zip(eps).enumerate() {
        let m = step.gain(k as u64);
        let e = out.last().expect("seeded with e0");
        let next = (DMatrix::identity(nb, nb) - l * m) * e + (dk * ek) * m;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Graph;

    fn ring4() -> GraphEnsemble {
        GraphEnsemble::new(vec![Graph::from_edges(4, 1, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap()]).unwrap()
    }

    #[test]
    fn single_state_and_duplicate_states() {
        let e = ring4();
        let g = &e.states()[0];
        let (lb, d) = mean_matrices(&e, &[1.0]).unwrap();
        assert_eq!(lb, g.grounded_laplacian().grounded);
        assert_eq!(d, g.selector_matrix().matrix);
        let twice = GraphEnsemble::new(vec![g.clone(), g.clone()]).unwrap();
        let (lb2, d2) = mean_matrices(&twice, &[0.5, 0.5]).unwrap();
        assert_eq!(lb2, lb);
        assert_eq!(d2, d);
        assert!(mean_matrices(&twice, &[0.5, 0.6]).is_err());
        assert!(mean_matrices(&twice, &[1.0]).is_err());
    }

    #[test]
    fn zero_bias_is_exactly_zero() {
        let e = ring4();
        let (lb, d) = mean_matrices(&e, &[1.0]).unwrap();
        let g = NoiseBiasVector::from_pairs(4, 1, &[]).unwrap();
        let b = predicted_bias(&lb, &d, g.as_vector()).unwrap();
        assert!(b.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn initiator_sign_convention() {
        let g = NoiseBiasVector::from_pairs(3, 1, &[PairBias { u: 0, v: 1, gamma: 2.0 }]).unwrap();
        // node 1 initiates the pair: its slot carries +gamma
        assert_eq!(g.entry(1, 0), 2.0);
        assert_eq!(g.entry(0, 1), -2.0);
        // unlisted pairs take the table mean, with the same sign rule
        assert_eq!(g.entry(0, 2), -2.0);
        assert_eq!(g.entry(1, 2), -2.0);
    }

    #[test]
    fn bias_satisfies_nodewise_balance() {
        // sum_v w_uv (b_v - b_u + eps_uv) = 0 at every non-reference node
        let states = vec![
            Graph::from_edges(4, 1, [(0, 1), (2, 3)]).unwrap(),
            Graph::from_edges(4, 1, [(1, 2)]).unwrap(),
        ];
        let e = GraphEnsemble::new(states).unwrap();
        let pi = [0.3, 0.7];
        let table = [
            PairBias { u: 0, v: 1, gamma: 1.5 },
            PairBias { u: 1, v: 2, gamma: -0.5 },
            PairBias { u: 2, v: 3, gamma: 2.0 },
        ];
        let (lb, d) = mean_matrices(&e, &pi).unwrap();
        let g = NoiseBiasVector::from_pairs(4, 1, &table).unwrap();
        let b = predicted_bias(&lb, &d, g.as_vector()).unwrap();
        let bias = |u: usize| if u < 3 { b[u] } else { 0.0 };
        for u in 0..3 {
            let mut total = 0.0;
            for (s, &p) in e.states().iter().zip(&pi) {
                for v in s.neighbors(u) {
                    total += p * (bias(v) - bias(u) + g.entry(u, v));
                }
            }
            assert!(total.abs() < 1e-12, "node {u}: {total}");
        }
    }

    #[test]
    fn never_occurring_pairs_do_not_matter() {
        let e = ring4();
        let (lb, d) = mean_matrices(&e, &[1.0]).unwrap();
        let listed = [
            PairBias { u: 0, v: 1, gamma: 1.0 },
            PairBias { u: 1, v: 2, gamma: 2.0 },
            PairBias { u: 2, v: 3, gamma: 3.0 },
            PairBias { u: 0, v: 3, gamma: 4.0 },
        ];
        let mut with_extra = listed.to_vec();
        with_extra.push(PairBias { u: 0, v: 2, gamma: 100.0 });
        let a = predicted_bias(&lb, &d, NoiseBiasVector::from_pairs(4, 1, &listed).unwrap().as_vector()).unwrap();
        let b = predicted_bias(&lb, &d, NoiseBiasVector::from_pairs(4, 1, &with_extra).unwrap().as_vector()).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn disconnected_union_is_singular() {
        let e = GraphEnsemble::new(vec![Graph::from_edges(4, 1, [(0, 1), (2, 3)]).unwrap()]).unwrap();
        let (lb, d) = mean_matrices(&e, &[1.0]).unwrap();
        let g = NoiseBiasVector::from_pairs(4, 1, &[]).unwrap();
        assert_eq!(predicted_bias(&lb, &d, g.as_vector()), Err(OracleError::Singular));
    }

    #[test]
    fn recursion_zero_and_contraction() {
        let e = ring4();
        let g = &e.states()[0];
        let lb = g.grounded_laplacian().grounded;
        let d = g.selector_matrix().matrix;
        let steps = 2000;
        // error decays like k^(-c1 * lambda_min)
        let step = StepSize::new(2.0, 4.0).unwrap();
        let zeros = vec![DVector::zeros(d.ncols()); steps];
        let traj = error_recursion(&vec![lb.clone(); steps], &vec![d.clone(); steps], &zeros, &DVector::zeros(3), &step).unwrap();
        assert!(traj.iter().all(|e| e.amax() == 0.0));
        let e0 = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let traj = error_recursion(&vec![lb; steps], &vec![d; steps], &zeros, &e0, &step).unwrap();
        assert!(traj[steps].norm() < 1e-2 * e0.norm());
        for w in traj.windows(2).skip(5) {
            assert!(w[1].norm() <= w[0].norm() + 1e-15);
        }
    }

    fn two_state() -> (GraphEnsemble, [PairBias; 3]) {
        let states = vec![
            Graph::from_edges(4, 1, [(0, 1), (2, 3)]).unwrap(),
            Graph::from_edges(4, 1, [(1, 2), (0, 3)]).unwrap(),
        ];
        let table = [
            PairBias { u: 0, v: 1, gamma: 1.5 },
            PairBias { u: 1, v: 2, gamma: -0.5 },
            PairBias { u: 2, v: 3, gamma: 2.0 },
        ];
        (GraphEnsemble::new(states).unwrap(), table)
    }

    #[test]
    fn mean_trajectory_matches_direct_recursion_for_a_pattern() {
        let (e, table) = two_state();
        let pattern = vec![1, 0, 0];
        let process = TopologyProcess::deterministic(e.clone(), pattern.clone()).unwrap();
        let step = StepSize::new(1.5, 1.0).unwrap();
        let e0 = DVector::from_vec(vec![0.3, -0.1, 0.2]);
        let steps = 50;
        let traj = mean_error_trajectory(&process, &table, &e0, &step, steps as u64).unwrap();
        let gamma = NoiseBiasVector::from_pairs(4, 1, &table).unwrap();
        let seq: Vec<&Graph> = (0..steps).map(|k| &e.states()[pattern[k % 3]]).collect();
        let lb: Vec<_> = seq.iter().map(|g| g.grounded_laplacian().grounded).collect();
        let d: Vec<_> = seq.iter().map(|g| g.selector_matrix().matrix).collect();
        let eps = vec![gamma.as_vector().clone(); steps];
        let direct = error_recursion(&lb, &d, &eps, &e0, &step).unwrap();
        for (a, b) in traj.iter().zip(&direct) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn markov_mean_trajectory_approaches_the_bias() {
        let (e, table) = two_state();
        let chain = crate::topology::MarkovChain::new(vec![vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let process = TopologyProcess::markov(e, chain, None).unwrap();
        let bias = predict_for_process(&process, &table).unwrap().bias;
        let step = StepSize::new(4.0, 4.0).unwrap();
        let traj = mean_error_trajectory(&process, &table, &DVector::zeros(3), &step, 20_000).unwrap();
        let last = traj.last().unwrap();
        for (u, b) in bias.iter().enumerate() {
            assert!((last[u] - b).abs() < 1e-2 * b.abs().max(1.0), "node {u}: {} vs {b}", last[u]);
        }
    }
}
