//! Two-way time-stamped message exchange and the difference measurements
//! derived from it.
//!
//! Per iteration the initiator `u` runs two round trips with its partner
//! `v`, one at the start of the window and one half a dwell later:
//!
//! ```text
//!   u: send tau_u[0] ----d0----> v: recv tau_v[0]
//!                                  wait dwell/4
//!   u: recv tau_u[1] <---d1----- v: send tau_v[1]
//!   (dwell/2 after tau_u[0])
//!   u: send tau_u[2] ----d2----> v: recv tau_v[2]
//!   u: recv tau_u[3] <---d3----- v: send tau_v[3]
//! ```
//!
//! The midpoint of each round trip gives one corresponding (u-time, v-time)
//! sample; the line through the two samples estimates the relative skew and
//! offset of `u` with respect to `v`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::ClockParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairwiseError {
    #[error("degenerate exchange record: the two round-trip midpoints coincide in {0} time")]
    Degenerate(&'static str),
    #[error("relative skew must be positive, got {0}")]
    NonPositiveSkew(f64),
    #[error("invalid delay model: {0}")]
    InvalidDelay(String),
}

/// Message delay distribution. Sampled delays are clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DelayModel {
    None,
    Fixed {
        #[serde(rename = "delay_us")]
        delay_us: f64,
    },
    Gaussian { mean_us: f64, std_us: f64 },
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::Gaussian {
            mean_us: 150.0,
            std_us: 10.0,
        }
    }
}

impl DelayModel {
    pub fn validate(&self) -> Result<(), PairwiseError> {
        match *self {
            DelayModel::None => Ok(()),
            DelayModel::Fixed { delay_us } if delay_us >= 0.0 => Ok(()),
            DelayModel::Fixed { delay_us } => Err(PairwiseError::InvalidDelay(format!("negative delay {delay_us}"))),
            DelayModel::Gaussian { mean_us, std_us } if mean_us >= 0.0 && std_us >= 0.0 => Ok(()),
            DelayModel::Gaussian { .. } => Err(PairwiseError::InvalidDelay(
                "mean and std must be non-negative".to_string(),
            )),
        }
    }

    /// One delay in seconds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DelayModel::None => 0.0,
            DelayModel::Fixed { delay_us } => delay_us * 1e-6,
            DelayModel::Gaussian { mean_us, std_us } => {
                let normal = Normal::new(mean_us * 1e-6, std_us * 1e-6).expect("validated std");
                normal.sample(rng).max(0.0)
            }
        }
    }

    /// The four message delays of one exchange.
    pub fn sample_exchange<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 4] {
        std::array::from_fn(|_| self.sample(rng))
    }
}

/// The eight local timestamps of two round trips.
///
/// `u = [send, recv, send, recv]` on the initiator's clock,
/// `v = [recv, send, recv, send]` on the partner's clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeRecord {
    pub u: [f64; 4],
    pub v: [f64; 4],
}

/// Simulate the exchange with explicit message delays (seconds, global time).
/// `t_start` is the global instant of the first send; `dwell` is the local
/// iteration length that places the reply wait and the second round trip.
pub fn run_exchange_with_delays(
    u: &ClockParams,
    v: &ClockParams,
    t_start: f64,
    dwell: f64,
    delays: [f64; 4],
) -> ExchangeRecord {
    let first_send = u.local_time(t_start);
    let mut ru = [0.0; 4];
    let mut rv = [0.0; 4];
    for round in 0..2 {
        let send_local = first_send + round as f64 * dwell / 2.0;
        let sent = u.global_time(send_local);
        let received = sent + delays[2 * round];
        let v_recv = v.local_time(received);
        let v_send = v_recv + dwell / 4.0;
        let back = v.global_time(v_send) + delays[2 * round + 1];
        ru[2 * round] = send_local;
        ru[2 * round + 1] = u.local_time(back);
        rv[2 * round] = v_recv;
        rv[2 * round + 1] = v_send;
    }
    ExchangeRecord { u: ru, v: rv }
}

pub fn run_exchange<R: Rng + ?Sized>(
    u: &ClockParams,
    v: &ClockParams,
    t_start: f64,
    dwell: f64,
    delays: &DelayModel,
    rng: &mut R,
) -> ExchangeRecord {
    run_exchange_with_delays(u, v, t_start, dwell, delays.sample_exchange(rng))
}

/// Relative skew `alpha_u / alpha_v` and relative offset
/// `beta_u - beta_v * alpha_u / alpha_v`, estimated from the two round-trip
/// midpoints.
pub fn estimate_relative(record: &ExchangeRecord) -> Result<(f64, f64), PairwiseError> {
    let mid = |s: &[f64; 4], j: usize| 0.5 * (s[2 * j] + s[2 * j + 1]);
    let (u1, u2) = (mid(&record.u, 0), mid(&record.u, 1));
    let (v1, v2) = (mid(&record.v, 0), mid(&record.v, 1));
    if v2 == v1 {
        return Err(PairwiseError::Degenerate("partner"));
    }
    if u2 == u1 {
        return Err(PairwiseError::Degenerate("initiator"));
    }
    let skew = (u2 - u1) / (v2 - v1);
    Ok((skew, u1 - skew * v1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    LogSkew,
    Offset,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::LogSkew, Channel::Offset];

    pub fn index(self) -> usize {
        match self {
            Channel::LogSkew => 0,
            Channel::Offset => 1,
        }
    }
}

/// Noisy observation of `x_u - x_v` on one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferenceMeasurement {
    pub channel: Channel,
    pub u: usize,
    pub v: usize,
    pub value: f64,
    pub k: u64,
}

impl DifferenceMeasurement {
    /// The same measurement as seen from `v`.
    pub fn reversed(&self) -> Self {
        Self {
            u: self.v,
            v: self.u,
            value: -self.value,
            ..*self
        }
    }
}

/// Turn relative parameters computed by `u` into difference measurements of
/// the log-skews and offsets of `u` and `v`.
pub fn to_difference(
    skew_rel: f64,
    offset_rel: f64,
    u: usize,
    v: usize,
    k: u64,
) -> Result<(DifferenceMeasurement, DifferenceMeasurement), PairwiseError> {
    if !(skew_rel > 0.0) {
        return Err(PairwiseError::NonPositiveSkew(skew_rel));
    }
    let log_skew = DifferenceMeasurement {
        channel: Channel::LogSkew,
        u,
        v,
        value: skew_rel.ln(),
        k,
    };
    let offset = DifferenceMeasurement {
        channel: Channel::Offset,
        value: offset_rel,
        ..log_skew
    };
    Ok((log_skew, offset))
}

/// The node that computes the measurement of a pair: the larger index.
#[inline]
pub fn measurement_initiator(u: usize, v: usize) -> usize {
    u.max(v)
}

/// Two one-way messages from `sender` to `receiver`, at the start of the
/// window and half a dwell later (sender's local time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneWayRecord {
    pub sender: [f64; 2],
    pub receiver: [f64; 2],
}

pub fn one_way_messages(
    sender: &ClockParams,
    receiver: &ClockParams,
    t_start: f64,
    dwell: f64,
    delays: [f64; 2],
) -> OneWayRecord {
    let first = sender.local_time(t_start);
    let mut s = [0.0; 2];
    let mut r = [0.0; 2];
    for j in 0..2 {
        s[j] = first + j as f64 * dwell / 2.0;
        r[j] = receiver.local_time(sender.global_time(s[j]) + delays[j]);
    }
    OneWayRecord { sender: s, receiver: r }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clock(skew: f64, offset: f64) -> ClockParams {
        ClockParams::new(skew, offset).unwrap()
    }

    #[test]
    fn identity_clocks_zero_delay() {
        let id = ClockParams::reference();
        let r = run_exchange_with_delays(&id, &id, 10.0, 1.0, [0.0; 4]);
        assert_eq!(r.u, r.v);
        assert_eq!(estimate_relative(&r).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn zero_delay_event_algebra() {
        let u = clock(1.00002, 0.004);
        let v = clock(0.99999, -0.006);
        let r = run_exchange_with_delays(&u, &v, 3.0, 1.0, [0.0; 4]);
        let t_send = (r.u[0] - u.offset) / u.skew;
        assert_eq!(r.v[0], v.skew * t_send + v.offset);
        for w in r.u.windows(2) {
            assert!(w[1] > w[0]);
        }
        for w in r.v.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn zero_delay_recovers_relative_parameters() {
        let u = clock(1.00002, 0.004);
        let v = clock(0.99999, -0.006);
        let r = run_exchange_with_delays(&u, &v, 3.0, 1.0, [0.0; 4]);
        let (a, b) = estimate_relative(&r).unwrap();
        let ratio = 1.00002 / 0.99999;
        assert!((a - ratio).abs() < 1e-12);
        assert!((a - 1.00003).abs() < 1e-9);
        let expect_offset = 0.004 - (-0.006) * ratio;
        assert!((b - expect_offset).abs() < 1e-12);
        assert!((b - 0.010000).abs() < 1e-6);

        let (ls, off) = to_difference(a, b, 1, 0, 0).unwrap();
        assert!((ls.value - ratio.ln()).abs() < 1e-12);
        // offset noise relative to beta_u - beta_v is beta_v (1 - ratio), nonzero
        let xi = off.value - (0.004 - (-0.006));
        let predicted = -0.006 * (1.0 - ratio);
        assert!((xi - predicted).abs() < 1e-12);
        assert!(predicted != 0.0);
    }

    #[test]
    fn delay_shifts_reception_by_skewed_delay() {
        let u = clock(1.00001, 0.002);
        let v = clock(0.99998, -0.003);
        let model = DelayModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mut shifts = Vec::with_capacity(n);
        for _ in 0..n {
            let d = model.sample_exchange(&mut rng);
            let with = run_exchange_with_delays(&u, &v, 7.0, 1.0, d);
            let without = run_exchange_with_delays(&u, &v, 7.0, 1.0, [0.0; 4]);
            let shift = (with.v[0] - without.v[0]) / v.skew;
            assert!((shift - d[0]).abs() < 1e-12);
            shifts.push(shift);
        }
        let mean = shifts.iter().sum::<f64>() / n as f64;
        let var = shifts.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 150e-6).abs() < 0.5e-6, "{mean}");
        assert!((var.sqrt() - 10e-6).abs() < 0.5e-6);
    }

    #[test]
    fn gaussian_delays_bias_the_offset_estimate() {
        let u = clock(1.00001, 0.002);
        let v = clock(0.99998, -0.003);
        let model = DelayModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = 0.002 - (-0.003) * (1.00001 / 0.99998);
        let n = 10_000;
        let errs: Vec<f64> = (0..n)
            .map(|_| {
                let r = run_exchange(&u, &v, 5.0, 1.0, &model, &mut rng);
                estimate_relative(&r).unwrap().1 - truth
            })
            .collect();
        let mean = errs.iter().sum::<f64>() / n as f64;
        let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        // nonzero but far below the delay scale
        assert!(mean != 0.0);
        assert!(mean.abs() < 5e-6, "{mean}");
        assert!(std < 1e-3);
    }

    #[test]
    fn antisymmetry_and_errors() {
        let (a, b) = to_difference(1.0, 0.0, 2, 5, 3).unwrap();
        assert_eq!((a.value, b.value), (0.0, 0.0));
        let (ls, off) = to_difference(1.2, -0.3, 2, 5, 3).unwrap();
        for m in [ls, off] {
            let r = m.reversed();
            assert_eq!(r.value.to_bits(), (-m.value).to_bits());
            assert_eq!((r.u, r.v, r.k), (5, 2, 3));
            assert_eq!(r.reversed(), m);
        }
        assert!(to_difference(0.0, 0.0, 0, 1, 0).is_err());
        assert!(to_difference(-1.0, 0.0, 0, 1, 0).is_err());
    }

    #[test]
    fn degenerate_record() {
        let r = ExchangeRecord {
            u: [0.0, 1.0, 2.0, 3.0],
            v: [1.0, 1.0, 1.0, 1.0],
        };
        assert!(matches!(estimate_relative(&r), Err(PairwiseError::Degenerate(_))));
    }

    #[test]
    fn initiator_rule() {
        assert_eq!(measurement_initiator(3, 7), 7);
        assert_eq!(measurement_initiator(7, 3), 7);
        assert_eq!(measurement_initiator(1, 2), 2);
    }

    #[test]
    fn delay_model_serde_and_validation() {
        let m: DelayModel = serde_json::from_str(r#"{"type":"gaussian","mean_us":150,"std_us":10}"#).unwrap();
        assert_eq!(m, DelayModel::default());
        assert!(DelayModel::Gaussian { mean_us: -1.0, std_us: 1.0 }.validate().is_err());
        assert_eq!(DelayModel::None.sample(&mut ChaCha8Rng::seed_from_u64(0)), 0.0);
    }

    #[test]
    fn one_way_ratio_is_relative_skew() {
        let s = clock(1.00003, 0.001);
        let r = clock(0.99997, -0.002);
        let rec = one_way_messages(&s, &r, 12.0, 1.0, [0.0, 0.0]);
        let ratio = (rec.sender[0] - rec.sender[1]) / (rec.receiver[0] - rec.receiver[1]);
        assert!((ratio - s.skew / r.skew).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn zero_delay_inverts_affine_relation(
                au in 0.9f64..1.1, av in 0.9f64..1.1,
                bu in -1.0f64..1.0, bv in -1.0f64..1.0,
                t in 1.0f64..1e4,
            ) {
                let u = ClockParams::new(au, bu).unwrap();
                let v = ClockParams::new(av, bv).unwrap();
                let r = run_exchange_with_delays(&u, &v, t, 1.0, [0.0; 4]);
                let (a, b) = estimate_relative(&r).unwrap();
                let ratio = au / av;
                prop_assert!(((a - ratio) / ratio).abs() < 1e-9);
                let off = bu - bv * ratio;
                // intercept error grows with t / dwell through cancellation
                prop_assert!((b - off).abs() < 1e-10 * (t + off.abs()));
            }
        }
    }
}
