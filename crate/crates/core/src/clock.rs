//! Affine clock model and the pre-shared iteration schedule.
//!
//! A node clock reads `tau(t) = skew * t + offset` at global time `t`. Nodes
//! never see `t`; they only know their local reading. The iteration schedule
//! is a sequence of local start instants, identical for every node, chosen so
//! that the i-th local iteration of every clock inside the [`ClockBounds`]
//! falls inside a common global interval.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClockError {
    #[error("clock skew must be positive, got {0}")]
    NonPositiveSkew(f64),
    #[error("invalid clock bounds: {0}")]
    InvalidBounds(String),
    #[error("invalid iteration schedule: {0}")]
    InvalidSchedule(String),
    #[error("clock (skew {skew}, offset {offset}) lies outside the schedule bounds")]
    OutOfBounds { skew: f64, offset: f64 },
    #[error("iteration {index} is beyond the schedule horizon {horizon}")]
    BeyondHorizon { index: usize, horizon: usize },
}

/// True skew and offset of one clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockParams {
    pub skew: f64,
    pub offset: f64,
}

impl ClockParams {
    pub fn new(skew: f64, offset: f64) -> Result<Self, ClockError> {
        if !(skew > 0.0) || !skew.is_finite() {
            return Err(ClockError::NonPositiveSkew(skew));
        }
        Ok(Self { skew, offset })
    }

    /// The clock of a reference node: skew 1, offset 0.
    pub const fn reference() -> Self {
        Self {
            skew: 1.0,
            offset: 0.0,
        }
    }

    /// Local reading at global time `t`.
    #[inline]
    pub fn local_time(&self, t: f64) -> f64 {
        self.skew * t + self.offset
    }

    /// Global instant at which this clock reads `local`.
    #[inline]
    pub fn global_time(&self, local: f64) -> f64 {
        (local - self.offset) / self.skew
    }

    /// Log-skew, the node variable estimated on the skew channel.
    pub fn log_skew(&self) -> f64 {
        self.skew.ln()
    }
}

/// Local reading of `clock` at global time `t`.
pub fn local_time(clock: &ClockParams, t: f64) -> f64 {
    clock.local_time(t)
}

/// Recover global time from a local reading using estimated skew and offset.
pub fn global_time_from_estimate(
    local: f64,
    skew_est: f64,
    offset_est: f64,
) -> Result<f64, ClockError> {
    if !(skew_est > 0.0) {
        return Err(ClockError::NonPositiveSkew(skew_est));
    }
    Ok((local - offset_est) / skew_est)
}

/// Skew and offset envelope of every clock in a network; the two
/// fictitious clocks `(skew_lo, offset_lo)` and `(skew_hi, offset_hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockBounds {
    pub skew_lo: f64,
    pub skew_hi: f64,
    pub offset_lo: f64,
    pub offset_hi: f64,
}

impl ClockBounds {
    pub fn new(skew_lo: f64, skew_hi: f64, offset_lo: f64, offset_hi: f64) -> Result<Self, ClockError> {
        let bounds = Self {
            skew_lo,
            skew_hi,
            offset_lo,
            offset_hi,
        };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<(), ClockError> {
        if !(self.skew_lo > 0.0) || !(self.skew_lo <= self.skew_hi) {
            return Err(ClockError::InvalidBounds(format!(
                "need 0 < skew_lo <= skew_hi, got [{}, {}]",
                self.skew_lo, self.skew_hi
            )));
        }
        if !(self.offset_lo <= self.offset_hi) {
            return Err(ClockError::InvalidBounds(format!(
                "need offset_lo <= offset_hi, got [{}, {}]",
                self.offset_lo, self.offset_hi
            )));
        }
        Ok(())
    }

    /// Ratio of the fast bound clock to the slow one.
    pub fn skew_ratio(&self) -> f64 {
        self.skew_hi / self.skew_lo
    }

    pub fn contains(&self, clock: &ClockParams) -> bool {
        (self.skew_lo..=self.skew_hi).contains(&clock.skew)
            && (self.offset_lo..=self.offset_hi).contains(&clock.offset)
    }

    /// Uniform draw of skew and offset inside the bounds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ClockParams {
        let skew = uniform(rng, self.skew_lo, self.skew_hi);
        let offset = uniform(rng, self.offset_lo, self.offset_hi);
        ClockParams { skew, offset }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * rng.random::<f64>()
    }
}

/// Open interval of global time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalInterval {
    pub lo: f64,
    pub hi: f64,
}

impl GlobalInterval {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    /// Whether `self` lies inside `outer`, allowing `rel_tol` relative slack
    /// at each end for rounding when a clock sits exactly on a bound.
    pub fn is_within(&self, outer: &GlobalInterval, rel_tol: f64) -> bool {
        let slack_lo = rel_tol * outer.lo.abs().max(1.0);
        let slack_hi = rel_tol * outer.hi.abs().max(1.0);
        self.lo >= outer.lo - slack_lo && self.hi <= outer.hi + slack_hi
    }
}

/// Parameters of the pre-shared iteration schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationSchedule {
    /// Local start of iteration 0.
    pub start: f64,
    /// Local length of the active part of each iteration.
    pub dwell: f64,
    pub bounds: ClockBounds,
    /// Number of iterations after the first; the schedule holds `horizon + 1` instants.
    pub horizon: usize,
}

/// One step of the schedule recursion.
#[inline]
pub fn next_start(tau: f64, dwell: f64, bounds: &ClockBounds) -> f64 {
    bounds.skew_ratio() * (tau + dwell - bounds.offset_lo) + bounds.offset_hi
}

impl IterationSchedule {
    /// Validates the schedule parameters. `dwell` may be zero (a pure
    /// recursion with no active window) but never negative.
    pub fn new(start: f64, dwell: f64, bounds: ClockBounds, horizon: usize) -> Result<Self, ClockError> {
        bounds.validate()?;
        if !(start > bounds.offset_hi) {
            return Err(ClockError::InvalidSchedule(format!(
                "start {start} must exceed offset_hi {}",
                bounds.offset_hi
            )));
        }
        if !(dwell >= 0.0) || !dwell.is_finite() {
            return Err(ClockError::InvalidSchedule(format!("dwell must be >= 0, got {dwell}")));
        }
        // the first step is the smallest increment when ratio >= 1 and
        // offset_hi >= offset_lo, so checking it suffices
        let first = next_start(start, dwell, &bounds);
        if !(first > start) {
            return Err(ClockError::InvalidSchedule(
                "schedule is not strictly increasing".to_string(),
            ));
        }
        Ok(Self {
            start,
            dwell,
            bounds,
            horizon,
        })
    }

    /// Local start instants of iterations `0..=horizon`.
    pub fn build(&self) -> Vec<f64> {
        let mut taus = Vec::with_capacity(self.horizon + 1);
        let mut tau = self.start;
        taus.push(tau);
        for _ in 0..self.horizon {
            tau = next_start(tau, self.dwell, &self.bounds);
            taus.push(tau);
        }
        taus
    }

    /// Global interval that contains the i-th local iteration of every
    /// in-bounds clock. Needs `starts[i + 1]`, so `i < horizon`.
    pub fn global_interval(&self, starts: &[f64], i: usize) -> Result<GlobalInterval, ClockError> {
        if i + 1 >= starts.len() {
            return Err(ClockError::BeyondHorizon {
                index: i,
                horizon: self.horizon,
            });
        }
        let b = &self.bounds;
        Ok(GlobalInterval {
            lo: (starts[i] - b.offset_hi) / b.skew_hi,
            hi: (starts[i + 1] - b.offset_hi) / b.skew_hi,
        })
    }

    /// Global-time window of the i-th local iteration of `clock`, with no
    /// bounds check.
    pub fn local_window(&self, clock: &ClockParams, starts: &[f64], i: usize) -> Result<GlobalInterval, ClockError> {
        let tau = *starts.get(i).ok_or(ClockError::BeyondHorizon {
            index: i,
            horizon: self.horizon,
        })?;
        Ok(GlobalInterval {
            lo: clock.global_time(tau),
            hi: clock.global_time(tau + self.dwell),
        })
    }

    /// Global-time window of the i-th local iteration of an in-bounds clock.
    pub fn iteration_window(&self, clock: &ClockParams, starts: &[f64], i: usize) -> Result<GlobalInterval, ClockError> {
        if !self.bounds.contains(clock) {
            return Err(ClockError::OutOfBounds {
                skew: clock.skew,
                offset: clock.offset,
            });
        }
        self.local_window(clock, starts, i)
    }
}

/// First iteration index at which the schedule increment
/// `starts[i + 1] - starts[i]` reaches `target`, if it happens within `max_iter`.
/// Runs the recursion directly so it does not need to store the sequence.
pub fn iterations_until_increment(schedule: &IterationSchedule, target: f64, max_iter: usize) -> Option<usize> {
    let mut tau = schedule.start;
    for i in 0..max_iter {
        let next = next_start(tau, schedule.dwell, &schedule.bounds);
        if next - tau >= target {
            return Some(i);
        }
        tau = next;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_bounds() -> ClockBounds {
        ClockBounds::new(1.0, 1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn local_time_examples() {
        let id = ClockParams::new(1.0, 0.0).unwrap();
        assert_eq!(local_time(&id, 5.0), 5.0);
        let c = ClockParams::new(1.0 + 2e-5, -1e-2).unwrap();
        assert_relative_eq!(local_time(&c, 100.0), 99.992, epsilon = 1e-12);
        let c = ClockParams::new(0.99998, 0.01).unwrap();
        let tau = local_time(&c, 1000.0);
        assert_relative_eq!(tau, 999.99, epsilon = 1e-9);
        assert_relative_eq!(c.global_time(tau), 1000.0, epsilon = 1e-9);
    }

    #[test]
    fn global_time_examples() {
        let t = global_time_from_estimate(99.992, 1.0 + 2e-5, -1e-2).unwrap();
        assert!((t - 100.0).abs() < 1e-9);
        assert_eq!(global_time_from_estimate(5.0, 1.0, 0.0).unwrap(), 5.0);
        let t = global_time_from_estimate(10.0, 1.0001, 0.5).unwrap();
        assert_relative_eq!(t, 9.5 / 1.0001, epsilon = 1e-15);
        assert!((t - 9.49905).abs() < 1e-5);
    }

    #[test]
    fn nonpositive_skew_rejected() {
        assert_eq!(
            global_time_from_estimate(1.0, 0.0, 0.0),
            Err(ClockError::NonPositiveSkew(0.0))
        );
        assert!(global_time_from_estimate(1.0, -2.0, 0.0).is_err());
        assert!(ClockParams::new(-1.0, 0.0).is_err());
        assert!(ClockParams::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn round_trip_random_clocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bounds = ClockBounds::new(0.5, 2.0, -10.0, 10.0).unwrap();
        for _ in 0..10_000 {
            let c = bounds.sample(&mut rng);
            let t = rng.random_range(0.0..1e5);
            let back = global_time_from_estimate(c.local_time(t), c.skew, c.offset).unwrap();
            assert!((back - t).abs() <= 1e-9 * t.abs().max(1.0));
        }
    }

    #[test]
    fn identical_bounds_give_uniform_schedule() {
        let s = IterationSchedule::new(1.0, 1.0, unit_bounds(), 5).unwrap();
        assert_eq!(s.build(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn doubling_schedule() {
        let bounds = ClockBounds::new(1.0, 2.0, 0.0, 0.0).unwrap();
        let s = IterationSchedule::new(1.0, 0.0, bounds, 3).unwrap();
        assert_eq!(s.build(), vec![1.0, 2.0, 4.0, 8.0]);
    }

    #[test]
    fn schedule_recursion_holds() {
        let bounds = ClockBounds::new(1.0, 1.0 + 4e-5, -0.05, 0.0).unwrap();
        let s = IterationSchedule::new(1.0, 1.0, bounds, 1000).unwrap();
        let taus = s.build();
        assert_eq!(taus.len(), 1001);
        for w in taus.windows(2) {
            let expect = (1.0 + 4e-5) * (w[0] + 1.0 + 0.05);
            assert_relative_eq!(w[1], expect, max_relative = 1e-15);
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn schedule_rejects_bad_parameters() {
        let bounds = ClockBounds::new(1.0, 1.0, -0.05, 0.5).unwrap();
        assert!(matches!(
            IterationSchedule::new(0.5, 1.0, bounds, 10),
            Err(ClockError::InvalidSchedule(_))
        ));
        assert!(IterationSchedule::new(1.0, -1.0, bounds, 10).is_err());
        assert!(ClockBounds::new(2.0, 1.0, 0.0, 0.0).is_err());
        assert!(ClockBounds::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(ClockBounds::new(1.0, 1.0, 1.0, 0.0).is_err());
        // identical bounds with zero dwell never advance
        assert!(IterationSchedule::new(1.0, 0.0, unit_bounds(), 10).is_err());
    }

    #[test]
    fn identity_window_matches_schedule() {
        let s = IterationSchedule::new(1.0, 0.5, unit_bounds(), 4).unwrap();
        let taus = s.build();
        let id = ClockParams::reference();
        for i in 0..4 {
            let w = s.iteration_window(&id, &taus, i).unwrap();
            assert_eq!(w.lo, taus[i]);
            assert_eq!(w.hi, taus[i] + 0.5);
            assert!(w.is_within(&s.global_interval(&taus, i).unwrap(), 1e-12));
        }
    }

    #[test]
    fn out_of_bounds_clock_rejected() {
        let bounds = ClockBounds::new(1.0, 1.0 + 4e-5, -0.05, 0.0).unwrap();
        let s = IterationSchedule::new(1.0, 1.0, bounds, 4).unwrap();
        let taus = s.build();
        let c = ClockParams::new(1.0 + 5e-5, 0.0).unwrap();
        assert!(matches!(
            s.iteration_window(&c, &taus, 0),
            Err(ClockError::OutOfBounds { .. })
        ));
        assert!(s.local_window(&c, &taus, 0).is_ok());
        assert!(matches!(
            s.global_interval(&taus, 4),
            Err(ClockError::BeyondHorizon { .. })
        ));
    }

    #[test]
    fn containment_for_sampled_clocks() {
        let bounds = ClockBounds::new(1.0 - 2e-5, 1.0 + 2e-5, -0.05, 0.0).unwrap();
        let s = IterationSchedule::new(1.0, 1.0, bounds, 500).unwrap();
        let taus = s.build();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut corners = vec![
            ClockParams::new(bounds.skew_lo, bounds.offset_lo).unwrap(),
            ClockParams::new(bounds.skew_hi, bounds.offset_hi).unwrap(),
            ClockParams::new(bounds.skew_lo, bounds.offset_hi).unwrap(),
            ClockParams::new(bounds.skew_hi, bounds.offset_lo).unwrap(),
        ];
        corners.extend((0..1000).map(|_| bounds.sample(&mut rng)));
        for c in &corners {
            let mut prev_hi = f64::NEG_INFINITY;
            for i in 0..s.horizon {
                let w = s.iteration_window(c, &taus, i).unwrap();
                let g = s.global_interval(&taus, i).unwrap();
                assert!(w.is_within(&g, 1e-12), "clock {c:?} iteration {i}");
                // windows of one clock are disjoint and ordered
                assert!(w.lo >= prev_hi);
                prev_hi = w.hi;
            }
        }
    }

    #[test]
    fn too_fast_clock_eventually_escapes() {
        let bounds = ClockBounds::new(1.0, 1.0 + 4e-5, -0.05, 0.0).unwrap();
        let s = IterationSchedule::new(1.0, 1.0, bounds, 2000).unwrap();
        let taus = s.build();
        let c = ClockParams::new(1.0 + 4.4e-5, 0.0).unwrap();
        let escaped = (0..s.horizon).any(|i| {
            let w = s.local_window(&c, &taus, i).unwrap();
            !w.is_within(&s.global_interval(&taus, i).unwrap(), 1e-12)
        });
        assert!(escaped);
    }

    #[test]
    fn increment_milestone() {
        let bounds = ClockBounds::new(1.0, 1.0 + 4e-5, 0.0, 0.0).unwrap();
        let s = IterationSchedule::new(1.0, 1.0, bounds, 0).unwrap();
        let i = iterations_until_increment(&s, 60.0, 200_000).unwrap();
        assert!((i as f64 - 1.023e5).abs() / 1.023e5 < 0.01, "{i}");
        assert_eq!(iterations_until_increment(&s, 60.0, 10), None);
    }
}
