use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::Point2;

/// End-effector speed used for every executed path, m/s.
pub const DEFAULT_SPEED: f64 = 0.1;
/// Control rate, Hz.
pub const DEFAULT_RATE: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl TrajectorySample {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub constant_speed: bool,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| w[0].position().distance(w[1].position()))
            .sum()
    }

    pub fn start(&self) -> Option<Point2> {
        self.samples.first().map(TrajectorySample::position)
    }

    pub fn end(&self) -> Option<Point2> {
        self.samples.last().map(TrajectorySample::position)
    }

    pub fn positions(&self) -> impl Iterator<Item = Point2> + '_ {
        self.samples.iter().map(TrajectorySample::position)
    }
}

/// Resamples a polyline by arc length so the end effector moves at `speed`,
/// emitting one sample per control tick `1/rate` and a final (possibly
/// shorter) tick that lands exactly on the last point.
pub fn retime_constant_speed(path: &[Point2], speed: f64, rate: f64) -> Result<Trajectory, SimError> {
    if path.is_empty() {
        return Err(SimError::EmptyPath);
    }
    if path.iter().any(|p| !p.is_finite()) {
        return Err(SimError::NonFinitePath);
    }
    if !(speed > 0.0 && speed.is_finite() && rate > 0.0 && rate.is_finite()) {
        return Err(SimError::InvalidTiming);
    }

    let mut cumulative = Vec::with_capacity(path.len());
    let mut total = 0.0;
    cumulative.push(0.0);
    for w in path.windows(2) {
        total += w[0].distance(w[1]);
        cumulative.push(total);
    }

    let step = speed / rate;
    let full_ticks = libm::floor(total / step + 1e-9) as usize;
    let mut samples = Vec::with_capacity(full_ticks + 2);
    let mut segment = 0usize;
    let mut position_at = |s: f64| -> Point2 {
        while segment + 1 < path.len() - 1 && cumulative[segment + 1] < s {
            segment += 1;
        }
        if path.len() == 1 {
            return path[0];
        }
        let seg_len = cumulative[segment + 1] - cumulative[segment];
        if seg_len <= 0.0 {
            return path[segment + 1];
        }
        let u = ((s - cumulative[segment]) / seg_len).clamp(0.0, 1.0);
        path[segment].lerp(path[segment + 1], u)
    };

    for tick in 0..=full_ticks {
        let s = (tick as f64 * step).min(total);
        let p = position_at(s);
        samples.push(TrajectorySample { t: tick as f64 / rate, x: p.x, y: p.y });
    }
    let covered = full_ticks as f64 * step;
    if total - covered > 1e-12 * total.max(1.0) {
        let end = path[path.len() - 1];
        samples.push(TrajectorySample { t: total / speed, x: end.x, y: end.y });
    } else if let Some(last) = samples.last_mut() {
        let end = path[path.len() - 1];
        last.x = end.x;
        last.y = end.y;
    }

    Ok(Trajectory { samples, constant_speed: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn half_meter_takes_five_seconds_and_2501_samples() {
        let traj = retime_constant_speed(&[Point2::new(0.0, 0.0), Point2::new(0.5, 0.0)], 0.1, 500.0).unwrap();
        assert_eq!(traj.samples.len(), 2501);
        assert_eq!(traj.duration(), 5.0);
        assert!(traj.constant_speed);
        for w in traj.samples.windows(2) {
            let dt = w[1].t - w[0].t;
            let gap = w[0].position().distance(w[1].position());
            assert!((gap - 0.1 * dt).abs() <= 1e-9 * 0.1 * dt);
        }
    }

    #[test]
    fn single_point_is_single_sample() {
        let traj = retime_constant_speed(&[Point2::new(0.3, 0.2)], 0.1, 500.0).unwrap();
        assert_eq!(traj.samples.len(), 1);
        assert_eq!(traj.samples[0].t, 0.0);
    }

    #[test]
    fn partial_final_tick_lands_on_endpoint() {
        let path = vec![Point2::new(0.0, 0.0), Point2::new(0.1, 0.0), Point2::new(0.1, 0.10003)];
        let traj = retime_constant_speed(&path, 0.1, 500.0).unwrap();
        assert_eq!(traj.end(), Some(path[2]));
        assert!((traj.duration() - 0.20003 / 0.1).abs() < 1e-12);
        for w in traj.samples.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let err = retime_constant_speed(&[Point2::new(f64::NAN, 0.0)], 0.1, 500.0).unwrap_err();
        assert_eq!(err, SimError::NonFinitePath);
        assert_eq!(retime_constant_speed(&[], 0.1, 500.0).unwrap_err(), SimError::EmptyPath);
    }
}
