//! Synthetic dives with known truth.
//!
//! Everything happens on a lattice `t_j = j * ping_interval`. Depth, TTW
//! velocity and current are evaluated at lattice times; the over-the-ground
//! velocity is their sum and positions are its trapezoid integral, so the
//! truth is exactly representable by the solvers' temporal grid whenever that
//! grid coincides with the lattice.

use crate::domain::{
    bracket, depth_grid, Cast, CurrentProfileEstimate, DiveRecord, DomainError, GpsFix, ProfileShape, RawDive,
    VelocityProfile,
};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Depth-dependent horizontal current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurrentField {
    /// `u = u0 + du_dz * z`, likewise for `v`.
    Linear { u0: f64, v0: f64, du_dz: f64, dv_dz: f64 },
    /// Piecewise linear through the knots, constant beyond them.
    Knots { depth: Vec<f64>, u: Vec<f64>, v: Vec<f64> },
    /// `u = u_deep + u_surface * exp(-z / scale)`, likewise for `v`.
    SurfaceIntensified { u_deep: f64, v_deep: f64, u_surface: f64, v_surface: f64, scale: f64 },
}

impl Default for CurrentField {
    fn default() -> Self {
        CurrentField::SurfaceIntensified { u_deep: 0.05, v_deep: -0.05, u_surface: 0.25, v_surface: 0.2, scale: 50.0 }
    }
}

impl CurrentField {
    pub fn zero() -> Self {
        CurrentField::Linear { u0: 0.0, v0: 0.0, du_dz: 0.0, dv_dz: 0.0 }
    }

    pub fn at(&self, z: f64) -> (f64, f64) {
        match self {
            CurrentField::Linear { u0, v0, du_dz, dv_dz } => (u0 + du_dz * z, v0 + dv_dz * z),
            CurrentField::Knots { depth, u, v } => {
                let n = depth.len();
                if z <= depth[0] {
                    return (u[0], v[0]);
                }
                if z >= depth[n - 1] {
                    return (u[n - 1], v[n - 1]);
                }
                let (i, f) = bracket(depth, z).expect("inside knot span");
                if f == 0.0 {
                    return (u[i], v[i]);
                }
                (u[i] + f * (u[i + 1] - u[i]), v[i] + f * (v[i + 1] - v[i]))
            }
            CurrentField::SurfaceIntensified { u_deep, v_deep, u_surface, v_surface, scale } => {
                let e = (-z / scale).exp();
                (u_deep + u_surface * e, v_deep + v_surface * e)
            }
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Invalid(format!("current field: {m}")));
        match self {
            CurrentField::Linear { u0, v0, du_dz, dv_dz } => {
                if ![u0, v0, du_dz, dv_dz].iter().all(|x| x.is_finite()) {
                    return bad("non-finite coefficient");
                }
            }
            CurrentField::Knots { depth, u, v } => {
                if depth.is_empty() || depth.len() != u.len() || depth.len() != v.len() {
                    return bad("knot lists must be nonempty and of equal length");
                }
                if depth.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("knot depths must be strictly increasing");
                }
                if depth.iter().chain(u).chain(v).any(|x| !x.is_finite()) {
                    return bad("non-finite knot");
                }
            }
            CurrentField::SurfaceIntensified { u_deep, v_deep, u_surface, v_surface, scale } => {
                if ![u_deep, v_deep, u_surface, v_surface].iter().all(|x| x.is_finite()) {
                    return bad("non-finite coefficient");
                }
                if !(*scale > 0.0 && scale.is_finite()) {
                    return bad("scale must be positive");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Facing {
    #[default]
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Requested dive length (s); the dive ends on the last whole ping
    /// interval that fits.
    pub dive_duration: f64,
    pub max_depth: f64,
    pub descent_rate: f64,
    pub ascent_rate: f64,
    pub ttw_speed: f64,
    /// Compass headings (degrees clockwise from north) on each cast.
    pub heading_descent_deg: f64,
    pub heading_ascent_deg: f64,
    /// Current seen on the descent, and on the ascent unless
    /// `ascent_current` is given.
    pub current: CurrentField,
    /// Ascent-phase current. The truth blends linearly from `current` to this
    /// field while the glider sits at the bottom.
    pub ascent_current: Option<CurrentField>,
    pub ping_interval: f64,
    pub bin_size: f64,
    pub bins_per_ping: usize,
    pub blanking_distance: f64,
    pub facing: Facing,
    pub noise_adcp: f64,
    pub noise_ttw: f64,
    /// Length of the ADCP gap centered on the bottom stay (s).
    pub bottom_gap: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            dive_duration: 3600.0,
            max_depth: 200.0,
            descent_rate: 0.12,
            ascent_rate: 0.12,
            ttw_speed: 0.25,
            heading_descent_deg: 90.0,
            heading_ascent_deg: 90.0,
            current: CurrentField::default(),
            ascent_current: None,
            ping_interval: 15.0,
            bin_size: 2.0,
            bins_per_ping: 6,
            blanking_distance: 0.5,
            facing: Facing::Up,
            noise_adcp: 0.03,
            noise_ttw: 0.05,
            bottom_gap: 120.0,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    /// Number of lattice steps in the dive.
    pub fn steps(&self) -> usize {
        (self.dive_duration / self.ping_interval + 1e-9).floor() as usize
    }

    /// Actual dive end time, a whole number of ping intervals.
    pub fn end_time(&self) -> f64 {
        self.steps() as f64 * self.ping_interval
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("dive_duration", self.dive_duration),
            ("max_depth", self.max_depth),
            ("descent_rate", self.descent_rate),
            ("ascent_rate", self.ascent_rate),
            ("ping_interval", self.ping_interval),
            ("bin_size", self.bin_size),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("ttw_speed", self.ttw_speed),
            ("blanking_distance", self.blanking_distance),
            ("noise_adcp", self.noise_adcp),
            ("noise_ttw", self.noise_ttw),
            ("bottom_gap", self.bottom_gap),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.heading_descent_deg.is_finite() && self.heading_ascent_deg.is_finite()) {
            return Err(SimError::Invalid("headings must be finite".into()));
        }
        if self.bins_per_ping == 0 {
            return Err(SimError::Invalid("bins_per_ping must be at least 1".into()));
        }
        self.current.validate()?;
        if let Some(a) = &self.ascent_current {
            a.validate()?;
        }
        if self.steps() < 4 {
            return Err(SimError::Infeasible(format!(
                "dive of {} s holds fewer than 4 ping intervals of {} s",
                self.dive_duration, self.ping_interval
            )));
        }
        let needed = self.max_depth / self.descent_rate + self.max_depth / self.ascent_rate;
        if needed > self.end_time() {
            return Err(SimError::Infeasible(format!(
                "reaching {} m and returning needs {needed} s, dive lasts {} s",
                self.max_depth,
                self.end_time()
            )));
        }
        Ok(())
    }

    fn bottom_window(&self) -> (f64, f64) {
        let t_end = self.end_time();
        (self.max_depth / self.descent_rate, t_end - self.max_depth / self.ascent_rate)
    }

    /// Glider depth at time `t`.
    pub fn depth_at(&self, t: f64) -> f64 {
        let up = self.ascent_rate * (self.end_time() - t);
        (self.descent_rate * t).min(self.max_depth).min(up).max(0.0)
    }

    /// Truth current at depth `z` and time `t`.
    pub fn current_at(&self, z: f64, t: f64) -> (f64, f64) {
        let (ud, vd) = self.current.at(z);
        let Some(ascent) = &self.ascent_current else {
            return (ud, vd);
        };
        let (ua, va) = ascent.at(z);
        let (b0, b1) = self.bottom_window();
        let alpha = if t <= b0 {
            0.0
        } else if t >= b1 {
            1.0
        } else {
            (t - b0) / (b1 - b0)
        };
        (ud + alpha * (ua - ud), vd + alpha * (va - vd))
    }

    /// The phase profile of a cast: the descent or ascent field.
    pub fn cast_current(&self, cast: Cast, z: f64) -> (f64, f64) {
        match (cast, &self.ascent_current) {
            (Cast::Ascent, Some(a)) => a.at(z),
            _ => self.current.at(z),
        }
    }
}

/// Truth at one lattice epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub t: f64,
    pub east: f64,
    pub north: f64,
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDive {
    pub dive: DiveRecord,
    pub truth_profile: CurrentProfileEstimate,
    pub truth_states: Vec<TruthState>,
    pub spec: ScenarioSpec,
}

impl SyntheticDive {
    pub fn split_time(&self) -> f64 {
        self.dive.depth().split_time()
    }
}

fn gaussian_stream(seed: u64, stream: u64) -> impl FnMut() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let normal = Normal::standard();
    move || normal.inverse_cdf(rng.sample::<f64, _>(Open01))
}

/// Generates the solver inputs and the truth, without validating the record.
pub fn generate_raw(spec: &ScenarioSpec) -> Result<(RawDive, Vec<TruthState>), SimError> {
    spec.validate()?;
    let n = spec.steps();
    let dt = spec.ping_interval;
    let times: Vec<f64> = (0..=n).map(|j| j as f64 * dt).collect();
    let depth: Vec<f64> = times.iter().map(|&t| spec.depth_at(t)).collect();
    let max = depth.iter().copied().fold(0.0, f64::max);
    let split = depth.iter().rposition(|&z| z == max).unwrap_or(0);

    let heading = |j: usize| {
        let deg = if j <= split { spec.heading_descent_deg } else { spec.heading_ascent_deg };
        deg.to_radians()
    };
    let mut truth = Vec::with_capacity(n + 1);
    let mut ttw_u = Vec::with_capacity(n + 1);
    let mut ttw_v = Vec::with_capacity(n + 1);
    for (j, (&t, &z)) in times.iter().zip(&depth).enumerate() {
        let h = heading(j);
        let (pu, pv) = (spec.ttw_speed * h.sin(), spec.ttw_speed * h.cos());
        let (cu, cv) = spec.current_at(z, t);
        ttw_u.push(pu);
        ttw_v.push(pv);
        truth.push(TruthState { t, east: 0.0, north: 0.0, u: cu + pu, v: cv + pv, depth: z });
    }
    for j in 1..=n {
        let (a, b) = (truth[j - 1], truth[j]);
        truth[j].east = a.east + 0.5 * dt * (a.u + b.u);
        truth[j].north = a.north + 0.5 * dt * (a.v + b.v);
    }

    let (b0, b1) = spec.bottom_window();
    let gap_center = 0.5 * (b0 + b1);
    let mut noise = gaussian_stream(spec.seed, 1);
    let mut raw = RawDive {
        adcp_u_rel: Vec::new(),
        adcp_v_rel: Vec::new(),
        adcp_t: Vec::new(),
        adcp_z: Vec::new(),
        adcp_ping: Vec::new(),
        adcp_cast: Vec::new(),
        ttw_t: times.clone(),
        ttw_u: Vec::with_capacity(n + 1),
        ttw_v: Vec::with_capacity(n + 1),
        depth_t: times.clone(),
        depth_z: depth.clone(),
        gps_start: GpsFix::new(0.0, 0.0, 0.0),
        gps_end: GpsFix::new(times[n], truth[n].east, truth[n].north),
    };
    for j in 1..n {
        let t = times[j];
        if spec.bottom_gap > 0.0 && (t - gap_center).abs() < 0.5 * spec.bottom_gap {
            continue;
        }
        let cast = if j <= split { Cast::Descent } else { Cast::Ascent };
        for i in 1..=spec.bins_per_ping {
            let range = spec.blanking_distance + i as f64 * spec.bin_size;
            let zb = match spec.facing {
                Facing::Up => depth[j] - range,
                Facing::Down => depth[j] + range,
            };
            if zb < 0.0 {
                continue;
            }
            let (cu, cv) = spec.current_at(zb, t);
            let (eu, ev) = (noise(), noise());
            raw.adcp_u_rel.push(cu - truth[j].u + spec.noise_adcp * eu);
            raw.adcp_v_rel.push(cv - truth[j].v + spec.noise_adcp * ev);
            raw.adcp_t.push(t);
            raw.adcp_z.push(zb);
            raw.adcp_ping.push(j - 1);
            raw.adcp_cast.push(cast);
        }
    }
    let mut noise = gaussian_stream(spec.seed, 2);
    for (u, v) in ttw_u.iter().zip(&ttw_v) {
        let (eu, ev) = (noise(), noise());
        raw.ttw_u.push(u + spec.noise_ttw * eu);
        raw.ttw_v.push(v + spec.noise_ttw * ev);
    }
    Ok((raw, truth))
}

/// Generates a validated synthetic dive. Deterministic given the spec.
pub fn generate(spec: &ScenarioSpec) -> Result<SyntheticDive, SimError> {
    let (raw, truth_states) = generate_raw(spec)?;
    if raw.adcp_t.is_empty() {
        return Err(SimError::Infeasible("no ADCP sample survives blanking and surface clipping".into()));
    }
    let max_z = raw.adcp_z.iter().chain(&raw.depth_z).copied().fold(0.0, f64::max);
    let z_hat = depth_grid(spec.bin_size, max_z);
    let hist = coverage_histogram(&raw, spec.bin_size);
    let branch = |cast: Cast, coverage: Vec<usize>| {
        let (u, v) = z_hat.iter().map(|&z| spec.cast_current(cast, z)).unzip();
        VelocityProfile { u, v, coverage }
    };
    let shape = if spec.ascent_current.is_some() {
        ProfileShape::TwoProfile {
            descent: branch(Cast::Descent, hist.descent.clone()),
            ascent: branch(Cast::Ascent, hist.ascent.clone()),
        }
    } else {
        ProfileShape::Single(branch(Cast::Descent, hist.total()))
    };
    let truth_profile = CurrentProfileEstimate::new(z_hat, shape)?;
    let dive = DiveRecord::from_raw(raw)?;
    Ok(SyntheticDive { dive, truth_profile, truth_states, spec: spec.clone() })
}

/// Number of distinct pings with at least one sample in each depth cell,
/// counted separately for each cast. Cell `l` is `[l dz - dz/2, l dz + dz/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageHistogram {
    pub z_hat: Vec<f64>,
    pub descent: Vec<usize>,
    pub ascent: Vec<usize>,
}

impl CoverageHistogram {
    pub fn total(&self) -> Vec<usize> {
        self.descent.iter().zip(&self.ascent).map(|(a, b)| a + b).collect()
    }

    /// Most frequent nonzero per-cast count (largest on ties); zero when no
    /// cell is covered.
    pub fn modal(&self) -> usize {
        let mut freq = std::collections::BTreeMap::new();
        for &c in self.descent.iter().chain(&self.ascent).filter(|&&c| c > 0) {
            *freq.entry(c).or_insert(0usize) += 1;
        }
        freq.into_iter().max_by_key(|&(c, f)| (f, c)).map_or(0, |(c, _)| c)
    }
}

pub fn coverage_histogram(raw: &RawDive, dz: f64) -> CoverageHistogram {
    let max_z = raw.adcp_z.iter().chain(&raw.depth_z).copied().filter(|z| z.is_finite()).fold(0.0, f64::max);
    let z_hat = depth_grid(dz, max_z);
    let l = z_hat.len();
    let mut seen: Vec<(Cast, usize, usize)> = raw
        .adcp_z
        .iter()
        .zip(&raw.adcp_ping)
        .zip(&raw.adcp_cast)
        .filter(|((z, _), _)| z.is_finite() && **z >= 0.0)
        .map(|((&z, &p), &c)| (c, ((z / dz).round() as usize).min(l - 1), p))
        .collect();
    seen.sort_by_key(|&(c, node, p)| (c.code(), node, p));
    seen.dedup();
    let mut hist = CoverageHistogram { z_hat, descent: vec![0; l], ascent: vec![0; l] };
    for (c, node, _) in seen {
        match c {
            Cast::Descent => hist.descent[node] += 1,
            Cast::Ascent => hist.ascent[node] += 1,
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_dive;

    fn quiet() -> ScenarioSpec {
        ScenarioSpec { noise_adcp: 0.0, noise_ttw: 0.0, ..Default::default() }
    }

    #[test]
    fn default_dive_is_valid() {
        let s = generate(&ScenarioSpec::default()).unwrap();
        assert!(validate_dive(&s.dive.to_raw()).is_empty());
        assert_eq!(s.dive.gps_end().time, 3600.0);
        assert_eq!(s.truth_states.len(), 241);
    }

    #[test]
    fn zero_current_samples_are_minus_ttw() {
        let spec = ScenarioSpec { current: CurrentField::zero(), ..quiet() };
        let s = generate(&spec).unwrap();
        let adcp = s.dive.adcp();
        for i in 0..adcp.len() {
            let (u, v) = s.dive.ttw().at(adcp.t()[i]).unwrap();
            assert_eq!(adcp.u_rel()[i], -u);
            assert_eq!(adcp.v_rel()[i], -v);
        }
        let t = s.dive.ttw().t();
        let (mut e, mut n) = (0.0, 0.0);
        for j in 1..t.len() {
            let h = t[j] - t[j - 1];
            e += 0.5 * h * (s.dive.ttw().u()[j] + s.dive.ttw().u()[j - 1]);
            n += 0.5 * h * (s.dive.ttw().v()[j] + s.dive.ttw().v()[j - 1]);
        }
        assert!((s.dive.gps_end().east - e).abs() < 1e-9);
        assert!((s.dive.gps_end().north - n).abs() < 1e-9);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate(&ScenarioSpec::default()).unwrap();
        let b = generate(&ScenarioSpec::default()).unwrap();
        assert_eq!(a, b);
        let c = generate(&ScenarioSpec { seed: 1, ..Default::default() }).unwrap();
        assert_ne!(a.dive.adcp().u_rel(), c.dive.adcp().u_rel());
    }

    #[test]
    fn truth_decomposition_holds_on_the_lattice() {
        let s = generate(&quiet()).unwrap();
        for (j, st) in s.truth_states.iter().enumerate() {
            let (cu, cv) = s.spec.current_at(st.depth, st.t);
            assert_eq!(st.u, cu + s.dive.ttw().u()[j]);
            assert_eq!(st.v, cv + s.dive.ttw().v()[j]);
        }
        let last = s.truth_states.last().unwrap();
        assert_eq!((last.east, last.north), (s.dive.gps_end().east, s.dive.gps_end().north));
    }

    #[test]
    fn default_coverage_is_five_to_seven_traces_per_cast() {
        let s = generate(&ScenarioSpec::default()).unwrap();
        let h = coverage_histogram(&s.dive.to_raw(), 2.0);
        let modal = h.modal();
        assert!((5..=7).contains(&modal), "modal coverage {modal}");
    }

    #[test]
    fn huge_blanking_leaves_no_coverage() {
        let spec = ScenarioSpec { blanking_distance: 500.0, ..Default::default() };
        let (raw, _) = generate_raw(&spec).unwrap();
        let h = coverage_histogram(&raw, 2.0);
        assert!(h.total().iter().all(|&c| c == 0));
        assert!(matches!(generate(&spec), Err(SimError::Infeasible(_))));
    }

    #[test]
    fn single_ping_histogram_sums_to_bins() {
        let (mut raw, _) = generate_raw(&quiet()).unwrap();
        let keep: Vec<usize> = (0..raw.adcp_ping.len()).filter(|&i| raw.adcp_ping[i] == 40).collect();
        raw.adcp_z = keep.iter().map(|&i| raw.adcp_z[i]).collect();
        raw.adcp_ping = keep.iter().map(|&i| raw.adcp_ping[i]).collect();
        raw.adcp_cast = keep.iter().map(|&i| raw.adcp_cast[i]).collect();
        let h = coverage_histogram(&raw, 2.0);
        assert_eq!(h.total().iter().sum::<usize>(), 6);
        // Near the surface the upper bins are clipped.
        let (mut raw2, _) = generate_raw(&quiet()).unwrap();
        let first = raw2.adcp_ping[0];
        let keep: Vec<usize> = (0..raw2.adcp_ping.len()).filter(|&i| raw2.adcp_ping[i] == first).collect();
        raw2.adcp_z = keep.iter().map(|&i| raw2.adcp_z[i]).collect();
        raw2.adcp_ping = keep.iter().map(|&i| raw2.adcp_ping[i]).collect();
        raw2.adcp_cast = keep.iter().map(|&i| raw2.adcp_cast[i]).collect();
        let n = coverage_histogram(&raw2, 2.0).total().iter().sum::<usize>();
        assert!((1..6).contains(&n));
    }

    #[test]
    fn infeasible_geometry_is_rejected() {
        let spec = ScenarioSpec { max_depth: 1000.0, ..Default::default() };
        assert!(matches!(generate(&spec), Err(SimError::Infeasible(_))));
        let spec = ScenarioSpec { bins_per_ping: 0, ..Default::default() };
        assert!(matches!(generate(&spec), Err(SimError::Invalid(_))));
    }

    #[test]
    fn ascent_field_takes_over_after_the_bottom() {
        let spec = ScenarioSpec { ascent_current: Some(CurrentField::zero()), ..quiet() };
        let (b0, b1) = spec.bottom_window();
        assert_eq!(spec.current_at(50.0, b0 - 1.0), spec.current.at(50.0));
        assert_eq!(spec.current_at(50.0, b1 + 1.0), (0.0, 0.0));
        let s = generate(&spec).unwrap();
        assert_eq!(s.truth_profile.form(), crate::domain::ProfileForm::TwoProfile);
    }
}
