//! Trajectory reconstruction and comparison.

use crate::domain::{bracket, GpsFix, TtwVelocitySeries};
use crate::statespace::JointSolution;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NavError {
    #[error("invalid trajectory: {0}")]
    Invalid(String),
    #[error("epoch {0} s lies outside the TTW series")]
    OutsideSpan(f64),
    #[error("trajectory spans zero time")]
    ZeroDuration,
    #[error("trajectories do not overlap in time")]
    Disjoint,
}

/// Horizontal positions at increasing epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t: Vec<f64>,
    east: Vec<f64>,
    north: Vec<f64>,
}

impl Trajectory {
    pub fn new(t: Vec<f64>, east: Vec<f64>, north: Vec<f64>) -> Result<Self, NavError> {
        if t.is_empty() || east.len() != t.len() || north.len() != t.len() {
            return Err(NavError::Invalid("needs equal, nonzero lengths".into()));
        }
        if t.iter().chain(&east).chain(&north).any(|x| !x.is_finite()) {
            return Err(NavError::Invalid("non-finite entry".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(NavError::Invalid("times must be strictly increasing".into()));
        }
        Ok(Self { t, east, north })
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn east(&self) -> &[f64] {
        &self.east
    }

    pub fn north(&self) -> &[f64] {
        &self.north
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn endpoint(&self) -> (f64, f64) {
        let n = self.t.len() - 1;
        (self.east[n], self.north[n])
    }

    /// Position at `time` by linear interpolation.
    pub fn at(&self, time: f64) -> Option<(f64, f64)> {
        let (i, f) = bracket(&self.t, time)?;
        if f == 0.0 {
            return Some((self.east[i], self.north[i]));
        }
        Some((
            self.east[i] + f * (self.east[i + 1] - self.east[i]),
            self.north[i] + f * (self.north[i + 1] - self.north[i]),
        ))
    }
}

/// Integrates the linearly interpolated TTW velocity from the start fix.
pub fn dead_reckon(ttw: &TtwVelocitySeries, start: GpsFix, epochs: &[f64]) -> Result<Trajectory, NavError> {
    let ts = ttw.t();
    // Cumulative integral at the TTW nodes, relative to the first node.
    let mut cum_e = vec![0.0; ts.len()];
    let mut cum_n = vec![0.0; ts.len()];
    for i in 1..ts.len() {
        let h = ts[i] - ts[i - 1];
        cum_e[i] = cum_e[i - 1] + 0.5 * h * (ttw.u()[i] + ttw.u()[i - 1]);
        cum_n[i] = cum_n[i - 1] + 0.5 * h * (ttw.v()[i] + ttw.v()[i - 1]);
    }
    let integral = |t: f64| -> Result<(f64, f64), NavError> {
        let (i, f) = bracket(ts, t).ok_or(NavError::OutsideSpan(t))?;
        if f == 0.0 {
            return Ok((cum_e[i], cum_n[i]));
        }
        let h = t - ts[i];
        let (u, v) = ttw.at(t).expect("inside span");
        Ok((cum_e[i] + 0.5 * h * (ttw.u()[i] + u), cum_n[i] + 0.5 * h * (ttw.v()[i] + v)))
    };
    let (e0, n0) = integral(start.time)?;
    let mut east = Vec::with_capacity(epochs.len());
    let mut north = Vec::with_capacity(epochs.len());
    for &t in epochs {
        let (e, n) = integral(t)?;
        east.push(start.east + e - e0);
        north.push(start.north + n - n0);
    }
    Trajectory::new(epochs.to_vec(), east, north)
}

/// Adds the constant drift that closes the trajectory on `gps_end`.
pub fn depth_averaged_correction(dr: &Trajectory, gps_end: GpsFix) -> Result<Trajectory, NavError> {
    let n = dr.len() - 1;
    let (t0, t1) = (dr.t[0], dr.t[n]);
    if !(t1 > t0) {
        return Err(NavError::ZeroDuration);
    }
    let ve = (gps_end.east - dr.east[n]) / (t1 - t0);
    let vn = (gps_end.north - dr.north[n]) / (t1 - t0);
    let mut east: Vec<f64> = dr.t.iter().zip(&dr.east).map(|(t, e)| e + ve * (t - t0)).collect();
    let mut north: Vec<f64> = dr.t.iter().zip(&dr.north).map(|(t, x)| x + vn * (t - t0)).collect();
    east[n] = gps_end.east;
    north[n] = gps_end.north;
    Trajectory::new(dr.t.clone(), east, north)
}

/// Positions straight from the joint solution's states.
pub fn adcp_informed_trajectory(solution: &JointSolution) -> Trajectory {
    Trajectory::new(
        solution.epochs.clone(),
        solution.states.iter().map(|s| s[0]).collect(),
        solution.states.iter().map(|s| s[1]).collect(),
    )
    .expect("solution epochs are increasing and states finite")
}

/// Largest horizontal distance between two trajectories over their common
/// time span, evaluated at every epoch of either one (both interpolated
/// linearly, so the maximum between epochs is never larger).
pub fn max_horizontal_offset(a: &Trajectory, b: &Trajectory) -> Result<f64, NavError> {
    let lo = a.t[0].max(b.t[0]);
    let hi = a.t[a.len() - 1].min(b.t[b.len() - 1]);
    if lo > hi {
        return Err(NavError::Disjoint);
    }
    let mut best: f64 = 0.0;
    for &t in a.t.iter().chain(&b.t).filter(|&&t| t >= lo && t <= hi).chain([&lo, &hi]) {
        let (ae, an) = a.at(t).expect("inside overlap");
        let (be, bn) = b.at(t).expect("inside overlap");
        best = best.max((ae - be).hypot(an - bn));
    }
    Ok(best)
}

/// Horizontal path length before and after `split_time`.
pub fn phase_path_lengths(tr: &Trajectory, split_time: f64) -> (f64, f64) {
    let (mut first, mut second) = (0.0, 0.0);
    for i in 1..tr.len() {
        let (t0, t1) = (tr.t[i - 1], tr.t[i]);
        let d = (tr.east[i] - tr.east[i - 1]).hypot(tr.north[i] - tr.north[i - 1]);
        if t1 <= split_time {
            first += d;
        } else if t0 >= split_time {
            second += d;
        } else {
            let f = (split_time - t0) / (t1 - t0);
            first += f * d;
            second += (1.0 - f) * d;
        }
    }
    (first, second)
}
