//! Time schedules for multi-step sampling.
//!
//! Diffusion schedules are descending noise levels `sigma_max = t_N > ... > t_1 = sigma_min > t_0 = 0`
//! stored in traversal order, so `times[0]` is the starting time and the last entry is the
//! terminal time. Ascending grids (used by the synthetic ODE testbed) share the same type and
//! are distinguished by [`Direction`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SIGMA_MIN: f64 = 0.002;
pub const DEFAULT_SIGMA_MAX: f64 = 80.0;
pub const DEFAULT_RHO: f64 = 7.0;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("a schedule needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("sigmas must satisfy 0 < sigma_min < sigma_max (got sigma_min={sigma_min}, sigma_max={sigma_max})")]
    InvalidSigmas { sigma_min: f64, sigma_max: f64 },
    #[error("rho must be >= 1, got {0}")]
    InvalidRho(f64),
    #[error("schedule times are not strictly monotone at index {0}")]
    NotMonotone(usize),
    #[error("schedule endpoints are inconsistent: {0}")]
    BadEndpoints(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScheduleKind {
    PolynomialRho,
    Uniform,
    #[serde(rename = "LogSNR")]
    LogSnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Descending,
    Ascending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct TimeSchedule {
    kind: ScheduleKind,
    rho: f64,
    sigma_min: f64,
    sigma_max: f64,
    #[serde(default, skip_serializing_if = "is_descending")]
    direction: Direction,
    times: Vec<f64>,
}

fn is_descending(d: &Direction) -> bool {
    *d == Direction::Descending
}

#[derive(Deserialize)]
struct RawSchedule {
    kind: ScheduleKind,
    rho: f64,
    sigma_min: f64,
    sigma_max: f64,
    #[serde(default)]
    direction: Direction,
    times: Vec<f64>,
}

impl TryFrom<RawSchedule> for TimeSchedule {
    type Error = ScheduleError;

    fn try_from(raw: RawSchedule) -> Result<Self, Self::Error> {
        let schedule = TimeSchedule {
            kind: raw.kind,
            rho: raw.rho,
            sigma_min: raw.sigma_min,
            sigma_max: raw.sigma_max,
            direction: raw.direction,
            times: raw.times,
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

/// Builds a descending noise-level schedule with `steps` intervals ending at exactly 0.
///
/// The `steps` non-zero times interpolate between `sigma_max` and `sigma_min`:
/// `PolynomialRho` linearly in `t^(1/rho)`, `Uniform` linearly in `t`, `LogSnr` linearly in `ln t`.
pub fn build_schedule(
    kind: ScheduleKind,
    steps: usize,
    sigma_min: f64,
    sigma_max: f64,
    rho: f64,
) -> Result<TimeSchedule, ScheduleError> {
    if steps < 2 {
        return Err(ScheduleError::TooFewSteps(steps));
    }
    if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
        return Err(ScheduleError::InvalidSigmas { sigma_min, sigma_max });
    }
    let rho = match kind {
        ScheduleKind::PolynomialRho => {
            if !(rho >= 1.0 && rho.is_finite()) {
                return Err(ScheduleError::InvalidRho(rho));
            }
            rho
        }
        ScheduleKind::Uniform => 1.0,
        ScheduleKind::LogSnr => rho,
    };

    let last = (steps - 1) as f64;
    let mut times: Vec<f64> = (0..steps)
        .map(|i| {
            let frac = i as f64 / last;
            match kind {
                ScheduleKind::PolynomialRho | ScheduleKind::Uniform => {
                    let hi = sigma_max.powf(1.0 / rho);
                    let lo = sigma_min.powf(1.0 / rho);
                    (hi + frac * (lo - hi)).powf(rho)
                }
                ScheduleKind::LogSnr => {
                    let (hi, lo) = (sigma_max.ln(), sigma_min.ln());
                    (hi + frac * (lo - hi)).exp()
                }
            }
        })
        .collect();
    // Pin both anchors exactly; powf round trips can drift by an ulp.
    times[0] = sigma_max;
    times[steps - 1] = sigma_min;
    times.push(0.0);

    let schedule = TimeSchedule {
        kind,
        rho,
        sigma_min,
        sigma_max,
        direction: Direction::Descending,
        times,
    };
    schedule.validate()?;
    Ok(schedule)
}

impl TimeSchedule {
    /// Ascending uniform grid `start, start + h, ..., end` with `steps` intervals.
    pub fn ascending_grid(start: f64, end: f64, steps: usize) -> Result<Self, ScheduleError> {
        if steps < 1 {
            return Err(ScheduleError::TooFewSteps(steps));
        }
        if !(start < end && start.is_finite() && end.is_finite()) {
            return Err(ScheduleError::BadEndpoints(format!(
                "ascending grid needs start < end, got [{start}, {end}]"
            )));
        }
        let h = (end - start) / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|i| start + i as f64 * h).collect();
        times[steps] = end;
        let schedule = TimeSchedule {
            kind: ScheduleKind::Uniform,
            rho: 1.0,
            sigma_min: start,
            sigma_max: end,
            direction: Direction::Ascending,
            times,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Wraps an explicit descending time list (first entry is the start, last must be 0).
    pub fn from_descending_times(times: Vec<f64>) -> Result<Self, ScheduleError> {
        if times.len() < 2 {
            return Err(ScheduleError::TooFewSteps(times.len().saturating_sub(1)));
        }
        let sigma_max = times[0];
        let sigma_min = times[times.len() - 2];
        let schedule = TimeSchedule {
            kind: ScheduleKind::PolynomialRho,
            rho: 1.0,
            sigma_min,
            sigma_max,
            direction: Direction::Descending,
            times,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    fn validate(&self) -> Result<(), ScheduleError> {
        let times = &self.times;
        if times.len() < 2 {
            return Err(ScheduleError::TooFewSteps(times.len().saturating_sub(1)));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(ScheduleError::BadEndpoints("non-finite time".into()));
        }
        for i in 1..times.len() {
            let ok = match self.direction {
                Direction::Descending => times[i] < times[i - 1],
                Direction::Ascending => times[i] > times[i - 1],
            };
            if !ok {
                return Err(ScheduleError::NotMonotone(i));
            }
        }
        if self.direction == Direction::Descending {
            if times[times.len() - 1] != 0.0 {
                return Err(ScheduleError::BadEndpoints("final time must be exactly 0".into()));
            }
            if times[0] != self.sigma_max {
                return Err(ScheduleError::BadEndpoints("first time must equal sigma_max".into()));
            }
            if times[times.len() - 2] <= 0.0 {
                return Err(ScheduleError::BadEndpoints("interior times must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Times in traversal order.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of intervals (the `N` of an `N`-step sampler).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Signed interval lengths `times[i+1] - times[i]` in traversal order.
    ///
    /// Negative for descending schedules.
    pub fn step_sizes(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Splits every interval into `factor` equal sub-intervals.
    pub fn refine(&self, factor: usize) -> TimeSchedule {
        assert!(factor >= 1, "refinement factor must be positive");
        let mut times = Vec::with_capacity(self.steps() * factor + 1);
        for w in self.times.windows(2) {
            for k in 0..factor {
                times.push(w[0] + (w[1] - w[0]) * (k as f64 / factor as f64));
            }
        }
        times.push(*self.times.last().unwrap());
        TimeSchedule {
            times,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn polynomial_two_steps_hits_both_anchors() {
        let s = build_schedule(ScheduleKind::PolynomialRho, 2, 0.002, 80.0, 7.0).unwrap();
        assert_eq!(s.times(), &[80.0, 0.002, 0.0]);
    }

    #[test]
    fn uniform_three_steps() {
        let s = build_schedule(ScheduleKind::Uniform, 3, 0.002, 80.0, 1.0).unwrap();
        let expected = [80.0, 40.001, 0.002, 0.0];
        for (a, b) in s.times().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn polynomial_five_steps_matches_rho_formula() {
        let s = build_schedule(ScheduleKind::PolynomialRho, 5, 0.002, 80.0, 7.0).unwrap();
        assert_eq!(s.times().len(), 6);
        let (hi, lo) = (80f64.powf(1.0 / 7.0), 0.002f64.powf(1.0 / 7.0));
        for i in 0..5 {
            let expected = (hi + (i as f64 / 4.0) * (lo - hi)).powi(7);
            assert!((s.times()[i] - expected).abs() <= 1e-12 * expected.max(1.0));
        }
        assert!(s.times().windows(2).all(|w| w[1] < w[0]));
        assert_eq!(s.times()[0], 80.0);
        assert_eq!(s.times()[5], 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            build_schedule(ScheduleKind::Uniform, 1, 0.002, 80.0, 1.0),
            Err(ScheduleError::TooFewSteps(1))
        );
        assert!(matches!(
            build_schedule(ScheduleKind::Uniform, 4, 0.0, 80.0, 1.0),
            Err(ScheduleError::InvalidSigmas { .. })
        ));
        assert!(matches!(
            build_schedule(ScheduleKind::Uniform, 4, 80.0, 80.0, 1.0),
            Err(ScheduleError::InvalidSigmas { .. })
        ));
        assert!(matches!(
            build_schedule(ScheduleKind::Uniform, 4, -1.0, 80.0, 1.0),
            Err(ScheduleError::InvalidSigmas { .. })
        ));
        assert_eq!(
            build_schedule(ScheduleKind::PolynomialRho, 4, 0.002, 80.0, 0.5),
            Err(ScheduleError::InvalidRho(0.5))
        );
    }

    #[test]
    fn step_sizes_are_signed_differences() {
        let s = build_schedule(ScheduleKind::PolynomialRho, 2, 0.002, 80.0, 7.0).unwrap();
        let h = s.step_sizes();
        assert!((h[0] + 79.998).abs() < 1e-12);
        assert!((h[1] + 0.002).abs() < 1e-15);

        let u = TimeSchedule::from_descending_times(vec![1.0, 0.5, 0.0]).unwrap();
        assert_eq!(u.step_sizes(), vec![-0.5, -0.5]);
    }

    #[test]
    fn log_snr_is_geometric() {
        let s = build_schedule(ScheduleKind::LogSnr, 4, 0.01, 10.0, 1.0).unwrap();
        let t = s.times();
        let r1 = t[1] / t[0];
        let r2 = t[2] / t[1];
        assert!((r1 - r2).abs() < 1e-12);
        assert_eq!(t[4], 0.0);
    }

    #[test]
    fn ascending_grid_and_refine() {
        let g = TimeSchedule::ascending_grid(0.0, 1.0, 4).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(g.step_sizes().iter().all(|&h| h > 0.0));

        let s = build_schedule(ScheduleKind::PolynomialRho, 3, 0.002, 80.0, 7.0).unwrap();
        let r = s.refine(5);
        assert_eq!(r.steps(), 15);
        for (i, t) in s.times().iter().enumerate() {
            assert_eq!(r.times()[5 * i], *t);
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let s = build_schedule(ScheduleKind::LogSnr, 4, 0.002, 80.0, 7.0).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"kind\":\"LogSNR\""));
        assert!(!json.contains("direction"));
        let back: TimeSchedule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);

        let bad = r#"{"kind":"Uniform","rho":1,"sigma_min":0.1,"sigma_max":1,"times":[1,2,0]}"#;
        assert!(serde_json::from_str::<TimeSchedule>(bad).is_err());
    }

    fn kinds() -> impl Strategy<Value = ScheduleKind> {
        prop_oneof![
            Just(ScheduleKind::PolynomialRho),
            Just(ScheduleKind::Uniform),
            Just(ScheduleKind::LogSnr)
        ]
    }

    proptest! {
        #[test]
        fn strictly_decreasing_everywhere(
            kind in kinds(),
            steps in 2usize..200,
            sigma_min in 1e-4f64..1.0,
            ratio in 1.01f64..1e4,
            rho in 1.0f64..12.0,
        ) {
            let sigma_max = sigma_min * ratio;
            let s = build_schedule(kind, steps, sigma_min, sigma_max, rho).unwrap();
            prop_assert_eq!(s.times().len(), steps + 1);
            prop_assert!(s.times().windows(2).all(|w| w[1] < w[0]));
            prop_assert_eq!(s.times()[0], sigma_max);
            prop_assert_eq!(*s.times().last().unwrap(), 0.0);
            prop_assert!(s.step_sizes().iter().all(|&h| h < 0.0));
            let total: f64 = s.step_sizes().iter().sum();
            prop_assert!((total + sigma_max).abs() <= 1e-9 * sigma_max);
        }

        #[test]
        fn uniform_equals_rho_one(
            steps in 2usize..100,
            sigma_min in 1e-4f64..1.0,
            ratio in 1.01f64..1e4,
        ) {
            let sigma_max = sigma_min * ratio;
            let u = build_schedule(ScheduleKind::Uniform, steps, sigma_min, sigma_max, 1.0).unwrap();
            let p = build_schedule(ScheduleKind::PolynomialRho, steps, sigma_min, sigma_max, 1.0).unwrap();
            for (a, b) in u.times().iter().zip(p.times()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
