//! Global linear inversion of one dive for the glider's over-the-ground
//! velocity and the ocean current profile.
//!
//! Unknowns are `x = [u_g; u_o]`, the glider velocity on the temporal grid
//! followed by the ocean velocity on the depth grid (or `[u_g; u_d; u_u]`
//! with separate descent and ascent profiles). East and north are solved as
//! two real systems that share every matrix.

use crate::domain::{
    Cast, CurrentProfileEstimate, DiveRecord, DomainError, GliderVelocitySeries, ProfileShape, VelocityGrids,
    VelocityProfile,
};
use crate::operators::{
    build_subsample_matrix, build_time_grid, interp_weights, second_difference, trapezoid_weights, OperatorError,
    SparseMatrix,
};
use crate::sparse_lsq::{self, BlockResidual, LsqBlock, SolveError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dives longer than this (s) default to the two-profile form.
pub const TWO_PROFILE_MIN_DURATION: f64 = 7200.0;

#[derive(Debug, Error)]
pub enum InversionError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("temporal grid has {0} nodes, at least 3 are needed")]
    TooFewNodes(usize),
}

/// Which sequence the glider-side second-difference penalty acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingTarget {
    /// Smooth the over-the-ground velocity `u_g`.
    #[default]
    Otg,
    /// Smooth the implied through-the-water velocity `u_g - u_o(z_g)`.
    TtwResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    /// Vertical grid spacing (m).
    pub dz: f64,
    pub sigma_adcp: f64,
    pub sigma_ttw: f64,
    pub sigma_gps: f64,
    pub lambda_g: f64,
    pub lambda_o: f64,
    /// `None` picks the two-profile form for dives longer than
    /// [`TWO_PROFILE_MIN_DURATION`].
    pub two_profile: Option<bool>,
    /// Weight of the bottom-match row as a multiple of the largest data weight.
    pub bottom_match_weight: f64,
    pub smoothing_target: SmoothingTarget,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            dz: 2.0,
            sigma_adcp: 0.03,
            sigma_ttw: 0.05,
            sigma_gps: 10.0,
            lambda_g: 1.0,
            lambda_o: 1.0,
            two_profile: None,
            bottom_match_weight: 1e8,
            smoothing_target: SmoothingTarget::Otg,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<(), InversionError> {
        let checks = [
            ("dz", self.dz),
            ("sigma_adcp", self.sigma_adcp),
            ("sigma_ttw", self.sigma_ttw),
            ("sigma_gps", self.sigma_gps),
            ("bottom_match_weight", self.bottom_match_weight),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(InversionError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("lambda_g", self.lambda_g), ("lambda_o", self.lambda_o)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(InversionError::Config(format!("{name} must be non-negative and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn uses_two_profiles(&self, dive: &DiveRecord) -> bool {
        self.two_profile.unwrap_or(dive.duration() > TWO_PROFILE_MIN_DURATION)
    }

    fn data_weights(&self) -> [f64; 3] {
        [self.sigma_adcp.powi(-2), self.sigma_gps.powi(-2), self.sigma_ttw.powi(-2)]
    }
}

/// The assembled problem: one block list per horizontal component.
#[derive(Debug, Clone)]
pub struct InversionSystem {
    pub grids: VelocityGrids,
    pub two_profile: bool,
    pub n_unknowns: usize,
    pub east: Vec<LsqBlock>,
    pub north: Vec<LsqBlock>,
    /// Glider depth at each temporal node.
    pub glider_depth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionResult {
    pub glider_velocity: GliderVelocitySeries,
    pub profile: CurrentProfileEstimate,
    /// Ocean velocity at the glider depth on each temporal node.
    pub drift_u: Vec<f64>,
    pub drift_v: Vec<f64>,
    pub residuals_east: Vec<BlockResidual>,
    pub residuals_north: Vec<BlockResidual>,
    pub grids: VelocityGrids,
    pub condition_estimate: f64,
    /// Stacked solution vectors, east then north.
    pub x_east: Vec<f64>,
    pub x_north: Vec<f64>,
}

impl InversionResult {
    pub fn residual(&self, name: &str) -> Option<(f64, f64)> {
        let find = |r: &[BlockResidual]| r.iter().find(|b| b.name == name).map(|b| b.norm);
        Some((find(&self.residuals_east)?, find(&self.residuals_north)?))
    }
}

fn stacked(
    name: &str,
    rows: usize,
    cols: usize,
    trip: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    weight: f64,
) -> Result<LsqBlock, InversionError> {
    let m = SparseMatrix::from_triplets_summed(rows, cols, trip)?;
    Ok(LsqBlock::new(name, m, rhs, weight)?)
}

/// Builds the weighted blocks of both component systems.
pub fn assemble_system(dive: &DiveRecord, config: &InversionConfig) -> Result<InversionSystem, InversionError> {
    config.validate()?;
    let adcp = dive.adcp();
    let span = (dive.gps_start().time, dive.gps_end().time);
    let t_hat = build_time_grid(&adcp.ping_times(), span)?;
    if t_hat.len() < 3 {
        return Err(InversionError::TooFewNodes(t_hat.len()));
    }
    let glider_depth: Vec<f64> =
        t_hat.iter().map(|&t| dive.depth().at(t).expect("validated depth series spans the dive")).collect();
    let max_depth = adcp.z().iter().chain(&glider_depth).copied().fold(0.0, f64::max);
    let grids = VelocityGrids::new(t_hat, config.dz, max_depth)?;
    let (m, l) = (grids.m(), grids.l());
    let two = config.uses_two_profiles(dive);
    let n_prof = if two { 2 } else { 1 };
    let n = m + n_prof * l;
    let k = adcp.len();

    // Column offset of the profile a sample or node belongs to.
    let branch_offset = |cast: Cast| if two && cast == Cast::Ascent { m + l } else { m };

    let [w_adcp, w_gps, w_ttw] = config.data_weights();
    let mut east = Vec::new();
    let mut north = Vec::new();

    // ADCP: -u_g(t_k) + u_o(z_k) = u_a.
    let order = adcp.canonical_order();
    let times: Vec<f64> = order.iter().map(|&r| adcp.t()[r]).collect();
    let ht = build_subsample_matrix(grids.t_hat(), &times)?;
    let mut trip = Vec::with_capacity(3 * k);
    for (row, &r) in order.iter().enumerate() {
        let (cols, vals) = ht.row(row);
        trip.push((row, cols[0], -vals[0]));
        let off = branch_offset(adcp.cast()[r]);
        for (c, w) in interp_weights(grids.z_hat(), adcp.z()[r])? {
            trip.push((row, off + c, w));
        }
    }
    let u_a = order.iter().map(|&r| adcp.u_rel()[r]).collect();
    let v_a = order.iter().map(|&r| adcp.v_rel()[r]).collect();
    east.push(stacked("adcp", k, n, trip.clone(), u_a, w_adcp)?);
    north.push(stacked("adcp", k, n, trip, v_a, w_adcp)?);

    // GPS closure: trapezoid integral of u_g equals the displacement.
    let w = trapezoid_weights(grids.t_hat())?;
    let trip: Vec<_> = w.iter().enumerate().map(|(c, &wc)| (0, c, wc)).collect();
    let (se, sn) = dive.displacement();
    east.push(stacked("gps", 1, n, trip.clone(), vec![se], w_gps)?);
    north.push(stacked("gps", 1, n, trip, vec![sn], w_gps)?);

    // TTW: -u_g + u_o(z_g) = -u_p on every node.
    let node_cast: Vec<Cast> = grids.t_hat().iter().map(|&t| dive.depth().cast_at(t)).collect();
    let mut ttw_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
    for (i, &z) in glider_depth.iter().enumerate() {
        let mut row = vec![(i, -1.0)];
        let off = branch_offset(node_cast[i]);
        row.extend(interp_weights(grids.z_hat(), z)?.into_iter().map(|(c, w)| (off + c, w)));
        ttw_rows.push(row);
    }
    let trip: Vec<_> =
        ttw_rows.iter().enumerate().flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v))).collect();
    let (mut up, mut vp) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for &t in grids.t_hat() {
        let (u, v) = dive.ttw().at(t).expect("validated TTW series spans the dive");
        up.push(-u);
        vp.push(-v);
    }
    east.push(stacked("ttw", m, n, trip.clone(), up, w_ttw)?);
    north.push(stacked("ttw", m, n, trip, vp, w_ttw)?);

    // Glider-side smoothness.
    let d2m = second_difference(m)?;
    let trip: Vec<_> = match config.smoothing_target {
        SmoothingTarget::Otg => d2m.triplets().collect(),
        SmoothingTarget::TtwResidual => d2m
            .triplets()
            .flat_map(|(r, node, coef)| ttw_rows[node].iter().map(move |&(c, v)| (r, c, coef * v)))
            .collect(),
    };
    if config.lambda_g > 0.0 {
        let block = stacked("smooth_glider", m - 2, n, trip, vec![0.0; m - 2], config.lambda_g)?;
        east.push(block.clone());
        north.push(block);
    }

    // Ocean-side smoothness, each profile on its own.
    let d2l = second_difference(l)?;
    let trip: Vec<_> =
        (0..n_prof).flat_map(|p| d2l.triplets().map(move |(r, c, v)| (p * (l - 2) + r, m + p * l + c, v))).collect();
    let rows = n_prof * (l - 2);
    if config.lambda_o > 0.0 {
        let block = stacked("smooth_ocean", rows, n, trip, vec![0.0; rows], config.lambda_o)?;
        east.push(block.clone());
        north.push(block);
    }

    if two {
        let weight = config.bottom_match_weight * w_adcp.max(w_gps).max(w_ttw);
        let trip = vec![(0, m + l - 1, 1.0), (0, m + 2 * l - 1, -1.0)];
        let block = stacked("bottom_match", 1, n, trip, vec![0.0], weight)?;
        east.push(block.clone());
        north.push(block);
    }

    Ok(InversionSystem { grids, two_profile: two, n_unknowns: n, east, north, glider_depth })
}

fn coverage(dive: &DiveRecord, z_hat: &[f64], cast: Option<Cast>) -> Result<Vec<usize>, InversionError> {
    let mut cov = vec![0; z_hat.len()];
    let adcp = dive.adcp();
    for (i, &z) in adcp.z().iter().enumerate() {
        if cast.is_some_and(|c| c != adcp.cast()[i]) {
            continue;
        }
        for (node, _) in interp_weights(z_hat, z)? {
            cov[node] += 1;
        }
    }
    Ok(cov)
}

/// Solves both component systems and unpacks the estimates.
pub fn invert(dive: &DiveRecord, config: &InversionConfig) -> Result<InversionResult, InversionError> {
    let sys = assemble_system(dive, config)?;
    let sol_e = sparse_lsq::solve(&sys.east, sys.n_unknowns)?;
    let sol_n = sparse_lsq::solve(&sys.north, sys.n_unknowns)?;
    unpack(dive, sys, sol_e.x, sol_n.x, sol_e.residuals, sol_n.residuals, sol_e.condition_estimate)
}

fn unpack(
    dive: &DiveRecord,
    sys: InversionSystem,
    xe: Vec<f64>,
    xn: Vec<f64>,
    residuals_east: Vec<BlockResidual>,
    residuals_north: Vec<BlockResidual>,
    condition_estimate: f64,
) -> Result<InversionResult, InversionError> {
    let (m, l) = (sys.grids.m(), sys.grids.l());
    let z_hat = sys.grids.z_hat().to_vec();
    let branch = |off: usize, cast: Option<Cast>| -> Result<VelocityProfile, InversionError> {
        Ok(VelocityProfile {
            u: xe[off..off + l].to_vec(),
            v: xn[off..off + l].to_vec(),
            coverage: coverage(dive, &z_hat, cast)?,
        })
    };
    let shape = if sys.two_profile {
        ProfileShape::TwoProfile {
            descent: branch(m, Some(Cast::Descent))?,
            ascent: branch(m + l, Some(Cast::Ascent))?,
        }
    } else {
        ProfileShape::Single(branch(m, None)?)
    };
    let profile = CurrentProfileEstimate::new(z_hat.clone(), shape)?;

    let ttw = &sys.east[2];
    debug_assert_eq!(ttw.name, "ttw");
    // Drift is the profile part of each TTW row: row minus its -u_g entry.
    let drift = |x: &[f64]| -> Vec<f64> {
        let ax = ttw.matrix.mul_vec(x);
        ax.iter().enumerate().map(|(i, a)| a + x[i]).collect()
    };
    let drift_u = drift(&xe);
    let drift_v = drift(&xn);
    let glider_velocity = GliderVelocitySeries::new(sys.grids.t_hat().to_vec(), xe[..m].to_vec(), xn[..m].to_vec())?;
    Ok(InversionResult {
        glider_velocity,
        profile,
        drift_u,
        drift_v,
        residuals_east,
        residuals_north,
        grids: sys.grids,
        condition_estimate,
        x_east: xe,
        x_north: xn,
    })
}

/// Same as [`invert`] but through the dense oracle; for verification only.
pub fn invert_dense(dive: &DiveRecord, config: &InversionConfig) -> Result<InversionResult, InversionError> {
    let sys = assemble_system(dive, config)?;
    let sol_e = sparse_lsq::dense_oracle_solve(&sys.east, sys.n_unknowns)?;
    let sol_n = sparse_lsq::dense_oracle_solve(&sys.north, sys.n_unknowns)?;
    unpack(dive, sys, sol_e.x, sol_n.x, sol_e.residuals, sol_n.residuals, sol_e.condition_estimate)
}

/// Trapezoid integral of the glider velocity over the dive, `(east, north)`.
pub fn integrate_displacement(velocity: &GliderVelocitySeries) -> (f64, f64) {
    let t = velocity.t_hat();
    if t.len() < 2 {
        return (0.0, 0.0);
    }
    let w = trapezoid_weights(t).expect("at least two nodes");
    (sparse_lsq::dot(&w, velocity.u_g()), sparse_lsq::dot(&w, velocity.v_g()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AdcpObservationSet, DepthSeries, GpsFix, TtwVelocitySeries};

    /// Three pings at 10, 20, 30 s on a dive from 0 to 40 s.
    fn toy_dive(casts: [Cast; 3]) -> DiveRecord {
        let t = vec![10.0, 10.0, 20.0, 30.0];
        let z = vec![1.0, 3.0, 4.0, 2.0];
        let cast = vec![casts[0], casts[0], casts[1], casts[2]];
        let adcp =
            AdcpObservationSet::new(vec![0.1, 0.2, 0.0, -0.1], vec![0.0, 0.1, 0.1, 0.0], t, z, vec![0, 0, 1, 2], cast)
                .unwrap();
        let ttw = TtwVelocitySeries::new(vec![0.0, 40.0], vec![0.2, 0.2], vec![0.0, 0.0]).unwrap();
        let depth = DepthSeries::new(vec![0.0, 20.0, 40.0], vec![0.0, 6.0, 0.0]).unwrap();
        DiveRecord::new(adcp, ttw, depth, GpsFix::new(0.0, 0.0, 0.0), GpsFix::new(40.0, 9.0, 1.0)).unwrap()
    }

    #[test]
    fn block_shapes_match_the_unknown_layout() {
        let dive = toy_dive([Cast::Descent; 3]);
        let cfg = InversionConfig { two_profile: Some(false), ..Default::default() };
        let sys = assemble_system(&dive, &cfg).unwrap();
        let (m, l) = (sys.grids.m(), sys.grids.l());
        assert_eq!(sys.grids.t_hat(), &[0.0, 10.0, 20.0, 30.0, 40.0]);
        assert_eq!(l, 5);
        assert_eq!(sys.n_unknowns, m + l);
        let shapes: Vec<_> = sys.east.iter().map(|b| (b.name.as_str(), b.matrix.rows(), b.matrix.cols())).collect();
        assert_eq!(
            shapes,
            vec![
                ("adcp", 4, m + l),
                ("gps", 1, m + l),
                ("ttw", m, m + l),
                ("smooth_glider", m - 2, m + l),
                ("smooth_ocean", l - 2, m + l),
            ]
        );
    }

    #[test]
    fn two_profile_adds_a_profile_and_a_constraint_row() {
        let dive = toy_dive([Cast::Descent, Cast::Descent, Cast::Ascent]);
        let cfg = InversionConfig { two_profile: Some(true), ..Default::default() };
        let sys = assemble_system(&dive, &cfg).unwrap();
        let (m, l) = (sys.grids.m(), sys.grids.l());
        assert_eq!(sys.n_unknowns, m + 2 * l);
        let last = sys.east.last().unwrap();
        assert_eq!(last.name, "bottom_match");
        assert_eq!(last.matrix.rows(), 1);
        assert_eq!(last.matrix.get(0, m + l - 1), 1.0);
        assert_eq!(last.matrix.get(0, m + 2 * l - 1), -1.0);
        assert_eq!(sys.east[4].matrix.rows(), 2 * (l - 2));
    }

    #[test]
    fn descent_only_samples_leave_ascent_adcp_columns_empty() {
        let dive = toy_dive([Cast::Descent; 3]);
        let cfg = InversionConfig { two_profile: Some(true), ..Default::default() };
        let sys = assemble_system(&dive, &cfg).unwrap();
        let (m, l) = (sys.grids.m(), sys.grids.l());
        let adcp = &sys.east[0];
        assert!(adcp.matrix.triplets().all(|(_, c, _)| c < m + l));
        let res = invert(&dive, &cfg).unwrap();
        assert!(res.profile.bottom_mismatch() <= 1e-4);
        let asc = res.profile.branch(Cast::Ascent);
        assert!(asc.coverage.iter().all(|&c| c == 0));
    }

    #[test]
    fn result_is_invariant_to_a_common_weight_scale() {
        let dive = toy_dive([Cast::Descent, Cast::Descent, Cast::Ascent]);
        let base = InversionConfig { two_profile: Some(false), ..Default::default() };
        let f: f64 = 37.0;
        let scaled = InversionConfig {
            sigma_adcp: base.sigma_adcp / f.sqrt(),
            sigma_ttw: base.sigma_ttw / f.sqrt(),
            sigma_gps: base.sigma_gps / f.sqrt(),
            lambda_g: base.lambda_g * f,
            lambda_o: base.lambda_o * f,
            ..base.clone()
        };
        let a = invert(&dive, &base).unwrap();
        let b = invert(&dive, &scaled).unwrap();
        for (x, y) in a.x_east.iter().chain(&a.x_north).zip(b.x_east.iter().chain(&b.x_north)) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn drift_plus_ttw_matches_otg_within_the_ttw_residual() {
        let dive = toy_dive([Cast::Descent, Cast::Descent, Cast::Ascent]);
        let res = invert(&dive, &InversionConfig::default()).unwrap();
        let (re, rn) = res.residual("ttw").unwrap();
        for (i, &t) in res.grids.t_hat().iter().enumerate() {
            let (up, vp) = dive.ttw().at(t).unwrap();
            let gv = &res.glider_velocity;
            assert!((gv.u_g()[i] - res.drift_u[i] - up).abs() <= re + 1e-10);
            assert!((gv.v_g()[i] - res.drift_v[i] - vp).abs() <= rn + 1e-10);
        }
    }

    #[test]
    fn ttw_residual_smoothing_is_selectable() {
        let dive = toy_dive([Cast::Descent, Cast::Descent, Cast::Ascent]);
        let cfg = InversionConfig { smoothing_target: SmoothingTarget::TtwResidual, ..Default::default() };
        let sys = assemble_system(&dive, &cfg).unwrap();
        let m = sys.grids.m();
        let block = &sys.east[3];
        // Each row touches three glider nodes plus profile nodes.
        assert!(block.matrix.triplets().any(|(_, c, _)| c >= m));
        invert(&dive, &cfg).unwrap();
    }

    #[test]
    fn integrates_constant_velocity_exactly() {
        let t: Vec<f64> = (0..=240).map(|i| i as f64 * 15.0).collect();
        let n = t.len();
        let gv = GliderVelocitySeries::new(t.clone(), vec![0.2; n], vec![0.0; n]).unwrap();
        let (e, no) = integrate_displacement(&gv);
        assert!((e - 720.0).abs() < 1e-9);
        assert_eq!(no, 0.0);
        let zero = GliderVelocitySeries::new(t, vec![0.0; n], vec![0.0; n]).unwrap();
        assert_eq!(integrate_displacement(&zero), (0.0, 0.0));
    }

    #[test]
    fn rejects_grids_that_are_too_short() {
        let adcp =
            AdcpObservationSet::new(vec![0.0], vec![0.0], vec![1.0], vec![1.0], vec![0], vec![Cast::Descent]).unwrap();
        let ttw = TtwVelocitySeries::new(vec![0.0, 2.0], vec![0.0; 2], vec![0.0; 2]).unwrap();
        let depth = DepthSeries::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 0.0]).unwrap();
        let dive = DiveRecord::new(adcp, ttw, depth, GpsFix::new(0.0, 0.0, 0.0), GpsFix::new(2.0, 0.0, 0.0)).unwrap();
        // Single ping: filler spacing 15 s leaves nodes {0, 1, 2}, enough.
        assert!(assemble_system(&dive, &InversionConfig::default()).is_ok());
        let bad = InversionConfig { sigma_adcp: 0.0, ..Default::default() };
        assert!(matches!(assemble_system(&dive, &bad), Err(InversionError::Config(_))));
    }
}
