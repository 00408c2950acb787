//! Dive inputs and estimate containers shared by both solvers.
//!
//! Conventions held throughout the crate:
//! - time in seconds since dive start, depth in meters positive down;
//! - horizontal positions in a local tangent plane (east, north) anchored at the
//!   dive-start GPS fix;
//! - an ADCP sample is ocean velocity minus glider over-the-ground velocity
//!   (plus noise).
//!
//! Validated types keep their fields private. Raw, unchecked data lives in
//! [`RawDive`], which is what the serializers read and write;
//! [`validate_dive`] reports every problem with a raw record and
//! [`DiveRecord::from_raw`] succeeds exactly when that report is empty.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Mean Earth radius used by the equirectangular projection (m).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid dive record: {}", format_violations(.0))]
    InvalidDive(Vec<Violation>),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

fn invalid(what: &'static str, reason: impl Into<String>) -> DomainError {
    DomainError::Invalid { what, reason: reason.into() }
}

/// One invariant violation found in a raw dive record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Machine-readable code, e.g. `gps_end_before_last_ping`.
    pub code: String,
    /// Offending sample index, when the violation is tied to one.
    pub index: Option<usize>,
    pub message: String,
}

impl Violation {
    fn new(code: &str, index: Option<usize>, message: impl Into<String>) -> Self {
        Self { code: code.to_string(), index, message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} [index {}]: {}", self.code, i, self.message),
            None => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

/// Which half of the dive a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cast {
    Descent,
    Ascent,
}

impl Cast {
    pub fn code(self) -> char {
        match self {
            Cast::Descent => 'D',
            Cast::Ascent => 'A',
        }
    }

    pub fn from_code(s: &str) -> Option<Cast> {
        match s {
            "D" => Some(Cast::Descent),
            "A" => Some(Cast::Ascent),
            _ => None,
        }
    }
}

/// A GPS fix in the local tangent plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub time: f64,
    pub east: f64,
    pub north: f64,
}

impl GpsFix {
    pub fn new(time: f64, east: f64, north: f64) -> Self {
        Self { time, east, north }
    }

    /// Projects a latitude/longitude fix onto the tangent plane anchored at
    /// `anchor_lat_deg`, `anchor_lon_deg` (equirectangular, adequate for a few km).
    pub fn from_lat_lon(time: f64, lat_deg: f64, lon_deg: f64, anchor_lat_deg: f64, anchor_lon_deg: f64) -> Self {
        let lat0 = anchor_lat_deg.to_radians();
        let east = EARTH_RADIUS_M * (lon_deg - anchor_lon_deg).to_radians() * lat0.cos();
        let north = EARTH_RADIUS_M * (lat_deg - anchor_lat_deg).to_radians();
        Self { time, east, north }
    }
}

/// Unchecked dive data as read from disk. Field layout mirrors the validated
/// types one-to-one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDive {
    pub adcp_u_rel: Vec<f64>,
    pub adcp_v_rel: Vec<f64>,
    pub adcp_t: Vec<f64>,
    pub adcp_z: Vec<f64>,
    pub adcp_ping: Vec<usize>,
    pub adcp_cast: Vec<Cast>,
    pub ttw_t: Vec<f64>,
    pub ttw_u: Vec<f64>,
    pub ttw_v: Vec<f64>,
    pub depth_t: Vec<f64>,
    pub depth_z: Vec<f64>,
    pub gps_start: GpsFix,
    pub gps_end: GpsFix,
}

/// Earth-referenced ADCP relative velocities, one entry per valid sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcpObservationSet {
    u_rel: Vec<f64>,
    v_rel: Vec<f64>,
    t: Vec<f64>,
    z: Vec<f64>,
    ping: Vec<usize>,
    cast: Vec<Cast>,
}

impl AdcpObservationSet {
    pub fn new(
        u_rel: Vec<f64>,
        v_rel: Vec<f64>,
        t: Vec<f64>,
        z: Vec<f64>,
        ping: Vec<usize>,
        cast: Vec<Cast>,
    ) -> Result<Self, DomainError> {
        let mut out = Vec::new();
        check_adcp(&u_rel, &v_rel, &t, &z, &ping, &cast, &mut out);
        if !out.is_empty() {
            return Err(DomainError::InvalidDive(out));
        }
        Ok(Self { u_rel, v_rel, t, z, ping, cast })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn u_rel(&self) -> &[f64] {
        &self.u_rel
    }

    pub fn v_rel(&self) -> &[f64] {
        &self.v_rel
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn ping(&self) -> &[usize] {
        &self.ping
    }

    pub fn cast(&self) -> &[Cast] {
        &self.cast
    }

    /// Distinct ping times in increasing order.
    pub fn ping_times(&self) -> Vec<f64> {
        let mut times = self.t.clone();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    /// Number of distinct pings.
    pub fn ping_count(&self) -> usize {
        let mut p = self.ping.clone();
        p.sort_unstable();
        p.dedup();
        p.len()
    }

    /// Sample indices sorted by time, depth, cast and values. Solvers assemble
    /// rows in this order so the result does not depend on how the input
    /// happened to list the bins.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.t[a]
                .total_cmp(&self.t[b])
                .then(self.z[a].total_cmp(&self.z[b]))
                .then(self.cast[a].code().cmp(&self.cast[b].code()))
                .then(self.u_rel[a].total_cmp(&self.u_rel[b]))
                .then(self.v_rel[a].total_cmp(&self.v_rel[b]))
        });
        idx
    }
}

fn check_adcp(u: &[f64], v: &[f64], t: &[f64], z: &[f64], ping: &[usize], cast: &[Cast], out: &mut Vec<Violation>) {
    let k = t.len();
    if k == 0 {
        out.push(Violation::new("adcp_empty", None, "no ADCP samples"));
        return;
    }
    if [u.len(), v.len(), z.len(), ping.len(), cast.len()].iter().any(|&n| n != k) {
        out.push(Violation::new(
            "adcp_length_mismatch",
            None,
            format!("u={}, v={}, t={}, z={}, ping={}, cast={}", u.len(), v.len(), k, z.len(), ping.len(), cast.len()),
        ));
        return;
    }
    for (name, xs) in [("u_rel", u), ("v_rel", v), ("t", t), ("z", z)] {
        for (i, x) in xs.iter().enumerate() {
            if !x.is_finite() {
                out.push(Violation::new("adcp_nonfinite", Some(i), format!("{name} is {x}")));
            }
        }
    }
    // Each ping has a single time, and ping order is time order.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&i| (ping[i], i));
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(t[a].is_finite() && t[b].is_finite()) {
            continue;
        }
        if ping[a] == ping[b] && t[a] != t[b] {
            out.push(Violation::new(
                "adcp_ping_time_inconsistent",
                Some(b),
                format!("ping {} has times {} and {}", ping[a], t[a], t[b]),
            ));
        } else if t[b] < t[a] {
            out.push(Violation::new(
                "adcp_time_order",
                Some(b),
                format!("ping {} at {} precedes ping {} at {}", ping[b], t[b], ping[a], t[a]),
            ));
        }
    }
}

/// Horizontal through-the-water velocity from the flight model.
#[derive(Debug, Clone, PartialEq)]
pub struct TtwVelocitySeries {
    t: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl TtwVelocitySeries {
    pub fn new(t: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self, DomainError> {
        let mut out = Vec::new();
        check_ttw(&t, &u, &v, &mut out);
        if let Some(first) = out.first() {
            return Err(invalid("TTW series", first.to_string()));
        }
        Ok(Self { t, u, v })
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// Linear interpolation of (u, v) at `time`; `None` outside the series span.
    pub fn at(&self, time: f64) -> Option<(f64, f64)> {
        let (i, f) = bracket(&self.t, time)?;
        if f == 0.0 {
            return Some((self.u[i], self.v[i]));
        }
        Some((self.u[i] + f * (self.u[i + 1] - self.u[i]), self.v[i] + f * (self.v[i + 1] - self.v[i])))
    }
}

fn check_ttw(t: &[f64], u: &[f64], v: &[f64], out: &mut Vec<Violation>) {
    if t.is_empty() {
        out.push(Violation::new("ttw_empty", None, "no TTW samples"));
        return;
    }
    if u.len() != t.len() || v.len() != t.len() {
        out.push(Violation::new("ttw_length_mismatch", None, format!("t={}, u={}, v={}", t.len(), u.len(), v.len())));
        return;
    }
    for (name, xs) in [("t", t), ("u", u), ("v", v)] {
        for (i, x) in xs.iter().enumerate() {
            if !x.is_finite() {
                out.push(Violation::new("ttw_nonfinite", Some(i), format!("{name} is {x}")));
            }
        }
    }
    for i in 1..t.len() {
        if t[i] <= t[i - 1] {
            out.push(Violation::new("ttw_time_not_increasing", Some(i), format!("{} after {}", t[i], t[i - 1])));
        }
    }
}

/// Glider depth record.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSeries {
    t: Vec<f64>,
    z: Vec<f64>,
}

impl DepthSeries {
    pub fn new(t: Vec<f64>, z: Vec<f64>) -> Result<Self, DomainError> {
        let mut out = Vec::new();
        check_depth(&t, &z, &mut out);
        if let Some(first) = out.first() {
            return Err(invalid("depth series", first.to_string()));
        }
        Ok(Self { t, z })
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Depth at `time` by linear interpolation; `None` outside the span.
    pub fn at(&self, time: f64) -> Option<f64> {
        let (i, f) = bracket(&self.t, time)?;
        if f == 0.0 {
            return Some(self.z[i]);
        }
        Some(self.z[i] + f * (self.z[i + 1] - self.z[i]))
    }

    pub fn max_depth(&self) -> f64 {
        self.z.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Time of the last sample of the deepest region. Everything at or before
    /// it belongs to the descent.
    pub fn split_time(&self) -> f64 {
        let max = self.max_depth();
        let last = self.z.iter().rposition(|&z| z == max).unwrap_or(0);
        self.t[last]
    }

    /// Cast of an instant, by comparison with [`DepthSeries::split_time`].
    pub fn cast_at(&self, time: f64) -> Cast {
        if time <= self.split_time() {
            Cast::Descent
        } else {
            Cast::Ascent
        }
    }
}

fn check_depth(t: &[f64], z: &[f64], out: &mut Vec<Violation>) {
    if t.is_empty() {
        out.push(Violation::new("depth_empty", None, "no depth samples"));
        return;
    }
    if z.len() != t.len() {
        out.push(Violation::new("depth_length_mismatch", None, format!("t={}, z={}", t.len(), z.len())));
        return;
    }
    let mut finite = true;
    for (name, xs) in [("t", t), ("z", z)] {
        for (i, x) in xs.iter().enumerate() {
            if !x.is_finite() {
                finite = false;
                out.push(Violation::new("depth_nonfinite", Some(i), format!("{name} is {x}")));
            }
        }
    }
    for i in 1..t.len() {
        if t[i] <= t[i - 1] {
            out.push(Violation::new("depth_time_not_increasing", Some(i), format!("{} after {}", t[i], t[i - 1])));
        }
    }
    for (i, &d) in z.iter().enumerate() {
        if d < 0.0 {
            out.push(Violation::new("depth_negative", Some(i), format!("depth {d}")));
        }
    }
    if finite {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let first = z.iter().position(|&d| d == max).unwrap();
        let last = z.iter().rposition(|&d| d == max).unwrap();
        if z[first..=last].iter().any(|&d| d != max) {
            out.push(Violation::new(
                "depth_multiple_maxima",
                Some(last),
                format!("maximum depth {max} reached in separate regions"),
            ));
        }
    }
}

/// Locates `x` in the increasing sequence `ts`: returns `(i, f)` with
/// `x = ts[i] + f (ts[i+1] - ts[i])`, `f` in `[0, 1)`.
pub(crate) fn bracket(ts: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = ts.len();
    if n == 0 || !(x >= ts[0] && x <= ts[n - 1]) {
        return None;
    }
    if n == 1 || x == ts[n - 1] {
        return Some((n - 1, 0.0));
    }
    let i = ts.partition_point(|&t| t <= x) - 1;
    Some((i, (x - ts[i]) / (ts[i + 1] - ts[i])))
}

/// Everything the solvers need for one dive.
#[derive(Debug, Clone, PartialEq)]
pub struct DiveRecord {
    adcp: AdcpObservationSet,
    ttw: TtwVelocitySeries,
    depth: DepthSeries,
    gps_start: GpsFix,
    gps_end: GpsFix,
}

impl DiveRecord {
    pub fn new(
        adcp: AdcpObservationSet,
        ttw: TtwVelocitySeries,
        depth: DepthSeries,
        gps_start: GpsFix,
        gps_end: GpsFix,
    ) -> Result<Self, DomainError> {
        let record = Self { adcp, ttw, depth, gps_start, gps_end };
        let violations = validate_dive(&record.to_raw());
        if !violations.is_empty() {
            return Err(DomainError::InvalidDive(violations));
        }
        Ok(record)
    }

    pub fn from_raw(raw: RawDive) -> Result<Self, DomainError> {
        let violations = validate_dive(&raw);
        if !violations.is_empty() {
            return Err(DomainError::InvalidDive(violations));
        }
        Ok(Self {
            adcp: AdcpObservationSet {
                u_rel: raw.adcp_u_rel,
                v_rel: raw.adcp_v_rel,
                t: raw.adcp_t,
                z: raw.adcp_z,
                ping: raw.adcp_ping,
                cast: raw.adcp_cast,
            },
            ttw: TtwVelocitySeries { t: raw.ttw_t, u: raw.ttw_u, v: raw.ttw_v },
            depth: DepthSeries { t: raw.depth_t, z: raw.depth_z },
            gps_start: raw.gps_start,
            gps_end: raw.gps_end,
        })
    }

    pub fn to_raw(&self) -> RawDive {
        RawDive {
            adcp_u_rel: self.adcp.u_rel.clone(),
            adcp_v_rel: self.adcp.v_rel.clone(),
            adcp_t: self.adcp.t.clone(),
            adcp_z: self.adcp.z.clone(),
            adcp_ping: self.adcp.ping.clone(),
            adcp_cast: self.adcp.cast.clone(),
            ttw_t: self.ttw.t.clone(),
            ttw_u: self.ttw.u.clone(),
            ttw_v: self.ttw.v.clone(),
            depth_t: self.depth.t.clone(),
            depth_z: self.depth.z.clone(),
            gps_start: self.gps_start,
            gps_end: self.gps_end,
        }
    }

    pub fn adcp(&self) -> &AdcpObservationSet {
        &self.adcp
    }

    pub fn ttw(&self) -> &TtwVelocitySeries {
        &self.ttw
    }

    pub fn depth(&self) -> &DepthSeries {
        &self.depth
    }

    pub fn gps_start(&self) -> GpsFix {
        self.gps_start
    }

    pub fn gps_end(&self) -> GpsFix {
        self.gps_end
    }

    pub fn duration(&self) -> f64 {
        self.gps_end.time - self.gps_start.time
    }

    /// Net GPS displacement (east, north) over the dive.
    pub fn displacement(&self) -> (f64, f64) {
        (self.gps_end.east - self.gps_start.east, self.gps_end.north - self.gps_start.north)
    }
}

/// Lists every invariant violation in `raw`. Empty exactly when
/// [`DiveRecord::from_raw`] would succeed.
pub fn validate_dive(raw: &RawDive) -> Vec<Violation> {
    let mut out = Vec::new();
    check_adcp(&raw.adcp_u_rel, &raw.adcp_v_rel, &raw.adcp_t, &raw.adcp_z, &raw.adcp_ping, &raw.adcp_cast, &mut out);
    check_ttw(&raw.ttw_t, &raw.ttw_u, &raw.ttw_v, &mut out);
    check_depth(&raw.depth_t, &raw.depth_z, &mut out);

    let (s, e) = (raw.gps_start, raw.gps_end);
    for (role, fix) in [("start", s), ("end", e)] {
        if !(fix.time.is_finite() && fix.east.is_finite() && fix.north.is_finite()) {
            out.push(Violation::new("gps_nonfinite", None, format!("{role} fix {fix:?}")));
        }
    }
    if s.east != 0.0 || s.north != 0.0 {
        out.push(Violation::new(
            "gps_start_not_origin",
            None,
            format!("start fix at ({}, {}), expected the local origin", s.east, s.north),
        ));
    }
    if s.time >= e.time {
        out.push(Violation::new("gps_end_before_start", None, format!("start {} end {}", s.time, e.time)));
    }

    let finite_t: Vec<(usize, f64)> = raw.adcp_t.iter().copied().enumerate().filter(|(_, t)| t.is_finite()).collect();
    if let (Some(&(i_min, t_min)), Some(&(i_max, t_max))) =
        (finite_t.iter().min_by(|a, b| a.1.total_cmp(&b.1)), finite_t.iter().max_by(|a, b| a.1.total_cmp(&b.1)))
    {
        if s.time >= t_min {
            out.push(Violation::new(
                "gps_start_after_first_ping",
                Some(i_min),
                format!("start fix at {} not before first ping at {}", s.time, t_min),
            ));
        }
        if e.time <= t_max {
            out.push(Violation::new(
                "gps_end_before_last_ping",
                Some(i_max),
                format!("end fix at {} not after last ping at {}", e.time, t_max),
            ));
        }
    }

    // Depth and TTW must be interpolable over the whole GPS window, which
    // contains every ping.
    for (name, ts) in [("depth", &raw.depth_t), ("ttw", &raw.ttw_t)] {
        if let (Some(&first), Some(&last)) = (ts.first(), ts.last()) {
            if first > s.time || last < e.time {
                out.push(Violation::new(
                    if name == "depth" { "depth_span_short" } else { "ttw_span_short" },
                    None,
                    format!("{name} series spans [{first}, {last}], dive spans [{}, {}]", s.time, e.time),
                ));
            }
        }
    }
    out
}

/// Temporal grid for glider velocities and uniform vertical grid for ocean
/// velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrids {
    t_hat: Vec<f64>,
    z_hat: Vec<f64>,
    dz: f64,
}

impl VelocityGrids {
    pub fn new(t_hat: Vec<f64>, dz: f64, max_depth: f64) -> Result<Self, DomainError> {
        if t_hat.len() < 2 || t_hat.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("temporal grid", "needs at least two strictly increasing nodes"));
        }
        if !(dz > 0.0 && dz.is_finite()) {
            return Err(invalid("vertical grid", format!("spacing {dz}")));
        }
        if !(max_depth >= 0.0 && max_depth.is_finite()) {
            return Err(invalid("vertical grid", format!("max depth {max_depth}")));
        }
        Ok(Self { t_hat, z_hat: depth_grid(dz, max_depth), dz })
    }

    pub fn t_hat(&self) -> &[f64] {
        &self.t_hat
    }

    pub fn z_hat(&self) -> &[f64] {
        &self.z_hat
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn m(&self) -> usize {
        self.t_hat.len()
    }

    pub fn l(&self) -> usize {
        self.z_hat.len()
    }
}

/// Nodes `l * dz` from the surface to the first node strictly below
/// `max_depth`, so the last node lies in `(max_depth, max_depth + dz]`.
pub fn depth_grid(dz: f64, max_depth: f64) -> Vec<f64> {
    let l = (max_depth / dz).floor() as usize + 2;
    (0..l).map(|i| i as f64 * dz).collect()
}

/// East/north velocity on depth nodes, with sample coverage per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityProfile {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub coverage: Vec<usize>,
}

impl VelocityProfile {
    pub fn zeros(l: usize) -> Self {
        Self { u: vec![0.0; l], v: vec![0.0; l], coverage: vec![0; l] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProfileShape {
    Single(VelocityProfile),
    TwoProfile { descent: VelocityProfile, ascent: VelocityProfile },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileForm {
    Single,
    TwoProfile,
}

/// Depth-indexed ocean velocity estimate, single or split into descent and
/// ascent branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentProfileEstimate {
    z_hat: Vec<f64>,
    shape: ProfileShape,
}

impl CurrentProfileEstimate {
    pub fn new(z_hat: Vec<f64>, shape: ProfileShape) -> Result<Self, DomainError> {
        let l = z_hat.len();
        let branches: Vec<&VelocityProfile> = match &shape {
            ProfileShape::Single(p) => vec![p],
            ProfileShape::TwoProfile { descent, ascent } => vec![descent, ascent],
        };
        for p in branches {
            if p.u.len() != l || p.v.len() != l || p.coverage.len() != l {
                return Err(invalid("current profile", format!("branch lengths differ from {l} depth nodes")));
            }
            if p.u.iter().chain(&p.v).any(|x| !x.is_finite()) {
                return Err(invalid("current profile", "non-finite velocity"));
            }
        }
        Ok(Self { z_hat, shape })
    }

    pub fn z_hat(&self) -> &[f64] {
        &self.z_hat
    }

    pub fn shape(&self) -> &ProfileShape {
        &self.shape
    }

    pub fn form(&self) -> ProfileForm {
        match self.shape {
            ProfileShape::Single(_) => ProfileForm::Single,
            ProfileShape::TwoProfile { .. } => ProfileForm::TwoProfile,
        }
    }

    /// The profile seen by samples of the given cast.
    pub fn branch(&self, cast: Cast) -> &VelocityProfile {
        match (&self.shape, cast) {
            (ProfileShape::Single(p), _) => p,
            (ProfileShape::TwoProfile { descent, .. }, Cast::Descent) => descent,
            (ProfileShape::TwoProfile { ascent, .. }, Cast::Ascent) => ascent,
        }
    }

    /// Single profile, or the node-wise average of the two branches with
    /// coverage summed.
    pub fn mean_profile(&self) -> VelocityProfile {
        match &self.shape {
            ProfileShape::Single(p) => p.clone(),
            ProfileShape::TwoProfile { descent, ascent } => VelocityProfile {
                u: descent.u.iter().zip(&ascent.u).map(|(a, b)| 0.5 * (a + b)).collect(),
                v: descent.v.iter().zip(&ascent.v).map(|(a, b)| 0.5 * (a + b)).collect(),
                coverage: descent.coverage.iter().zip(&ascent.coverage).map(|(a, b)| a + b).collect(),
            },
        }
    }

    /// Largest |descent - ascent| at the deepest node over both components;
    /// zero for a single profile.
    pub fn bottom_mismatch(&self) -> f64 {
        match &self.shape {
            ProfileShape::Single(_) => 0.0,
            ProfileShape::TwoProfile { descent, ascent } => {
                let l = self.z_hat.len() - 1;
                (descent.u[l] - ascent.u[l]).abs().max((descent.v[l] - ascent.v[l]).abs())
            }
        }
    }

    /// Profile velocity at `depth` for the given cast, linearly interpolated.
    pub fn at(&self, cast: Cast, depth: f64) -> Option<(f64, f64)> {
        let p = self.branch(cast);
        let (i, f) = bracket(&self.z_hat, depth)?;
        if f == 0.0 {
            return Some((p.u[i], p.v[i]));
        }
        Some((p.u[i] + f * (p.u[i + 1] - p.u[i]), p.v[i] + f * (p.v[i + 1] - p.v[i])))
    }
}

/// Over-the-ground glider velocity on the temporal grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GliderVelocitySeries {
    t_hat: Vec<f64>,
    u_g: Vec<f64>,
    v_g: Vec<f64>,
}

impl GliderVelocitySeries {
    pub fn new(t_hat: Vec<f64>, u_g: Vec<f64>, v_g: Vec<f64>) -> Result<Self, DomainError> {
        if u_g.len() != t_hat.len() || v_g.len() != t_hat.len() {
            return Err(invalid("glider velocity series", "length mismatch"));
        }
        if u_g.iter().chain(&v_g).chain(&t_hat).any(|x| !x.is_finite()) {
            return Err(invalid("glider velocity series", "non-finite entry"));
        }
        Ok(Self { t_hat, u_g, v_g })
    }

    pub fn t_hat(&self) -> &[f64] {
        &self.t_hat
    }

    pub fn u_g(&self) -> &[f64] {
        &self.u_g
    }

    pub fn v_g(&self) -> &[f64] {
        &self.v_g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw() -> RawDive {
        RawDive {
            adcp_u_rel: vec![0.1, 0.2, 0.3, 0.1],
            adcp_v_rel: vec![0.0; 4],
            adcp_t: vec![10.0, 10.0, 20.0, 30.0],
            adcp_z: vec![1.0, 3.0, 2.0, 1.0],
            adcp_ping: vec![0, 0, 1, 2],
            adcp_cast: vec![Cast::Descent, Cast::Descent, Cast::Descent, Cast::Ascent],
            ttw_t: vec![0.0, 20.0, 40.0],
            ttw_u: vec![0.2; 3],
            ttw_v: vec![0.0; 3],
            depth_t: vec![0.0, 20.0, 40.0],
            depth_z: vec![0.0, 5.0, 0.0],
            gps_start: GpsFix::new(0.0, 0.0, 0.0),
            gps_end: GpsFix::new(40.0, 8.0, 1.0),
        }
    }

    fn codes(v: &[Violation]) -> Vec<&str> {
        v.iter().map(|x| x.code.as_str()).collect()
    }

    #[test]
    fn well_formed_record_has_no_violations() {
        assert!(validate_dive(&raw()).is_empty());
        assert!(DiveRecord::from_raw(raw()).is_ok());
    }

    #[test]
    fn late_last_ping_is_reported() {
        let mut r = raw();
        r.gps_end.time = 25.0;
        r.ttw_t = vec![0.0, 20.0, 25.0];
        r.depth_t = vec![0.0, 20.0, 25.0];
        let v = validate_dive(&r);
        assert_eq!(codes(&v), vec!["gps_end_before_last_ping"]);
        assert_eq!(v[0].index, Some(3));
    }

    #[test]
    fn nan_sample_names_its_index() {
        let mut r = raw();
        r.adcp_u_rel[2] = f64::NAN;
        let v = validate_dive(&r);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code, "adcp_nonfinite");
        assert_eq!(v[0].index, Some(2));
        assert!(DiveRecord::from_raw(r).is_err());
    }

    #[test]
    fn split_maxima_and_bad_times_are_rejected() {
        let mut r = raw();
        r.depth_t = vec![0.0, 10.0, 20.0, 30.0, 40.0];
        r.depth_z = vec![0.0, 5.0, 3.0, 5.0, 0.0];
        assert_eq!(codes(&validate_dive(&r)), vec!["depth_multiple_maxima"]);

        let mut r = raw();
        r.adcp_t[1] = 11.0;
        assert_eq!(codes(&validate_dive(&r)), vec!["adcp_ping_time_inconsistent"]);

        let mut r = raw();
        r.ttw_t = vec![0.0, 20.0, 20.0];
        assert!(codes(&validate_dive(&r)).contains(&"ttw_time_not_increasing"));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut r = raw();
        r.adcp_u_rel[0] = 0.1 + 1e-17 * std::f64::consts::PI;
        r.gps_end.east = 1.0 / 3.0;
        let s = serde_json::to_string(&r).unwrap();
        let back: RawDive = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn depth_grid_brackets_max_depth() {
        assert_eq!(depth_grid(2.0, 200.0).len(), 102);
        assert_eq!(*depth_grid(2.0, 201.0).last().unwrap(), 202.0);
        assert_eq!(depth_grid(2.0, 0.0), vec![0.0, 2.0]);
    }

    #[test]
    fn split_time_assigns_bottom_to_descent() {
        let d = DepthSeries::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 4.0, 4.0, 1.0]).unwrap();
        assert_eq!(d.split_time(), 2.0);
        assert_eq!(d.cast_at(2.0), Cast::Descent);
        assert_eq!(d.cast_at(2.5), Cast::Ascent);
    }

    #[test]
    fn lat_lon_projection_is_local() {
        let f = GpsFix::from_lat_lon(0.0, 71.0, -150.0, 71.0, -150.0);
        assert_eq!((f.east, f.north), (0.0, 0.0));
        let g = GpsFix::from_lat_lon(0.0, 71.001, -150.0, 71.0, -150.0);
        assert!((g.north - 111.19).abs() < 0.1);
    }
}
