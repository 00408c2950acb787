//! Joint state-space deconvolution: glider positions and velocities at every
//! epoch together with the current profile, in one sparse least-squares
//! problem.
//!
//! The epoch state is `[e, n, ė, ṅ]` (east/north position and velocity). The
//! unknown vector stacks all epoch states followed by the east and north
//! current profiles: `[x_1 .. x_N; c_u; c_v]`. With `two_profile` each
//! current profile is itself split into a descent and an ascent branch.

use crate::domain::{
    Cast, CurrentProfileEstimate, DiveRecord, DomainError, GliderVelocitySeries, ProfileShape, VelocityGrids,
    VelocityProfile,
};
use crate::operators::{adjacent_difference, build_time_grid, interp_weights, node_index, OperatorError, SparseMatrix};
use crate::sparse_lsq::{self, BlockResidual, LsqBlock, LsqSolution, SolveError};
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StateSpaceError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("epoch times must be strictly increasing with at least two epochs")]
    BadEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateSpaceConfig {
    /// White-noise acceleration scale (m/s²).
    pub sigma_accel: f64,
    /// GPS position noise (m); also the start-position prior scale.
    pub sigma_pos_gps: f64,
    /// Prior scale on the initial velocity (m/s).
    pub sigma_x0_vel: f64,
    /// ADCP term weight. Zero drops the term.
    pub eta1: f64,
    /// OTG/TTW comparison weight. Zero drops the term.
    pub eta2: f64,
    /// Current smoothness weight.
    pub eta3: f64,
    pub dz: f64,
    /// Separate descent and ascent current profiles, matched at the bottom.
    pub two_profile: bool,
    /// Bottom-match weight as a multiple of the largest data weight.
    pub bottom_match_weight: f64,
}

impl Default for StateSpaceConfig {
    fn default() -> Self {
        Self {
            sigma_accel: 1e-3,
            sigma_pos_gps: 10.0,
            sigma_x0_vel: 0.5,
            eta1: 1.0 / (0.03 * 0.03),
            eta2: 1.0 / (0.05 * 0.05),
            eta3: 100.0,
            dz: 2.0,
            two_profile: false,
            bottom_match_weight: 1e8,
        }
    }
}

impl StateSpaceConfig {
    pub fn validate(&self) -> Result<(), StateSpaceError> {
        let positive = [
            ("sigma_accel", self.sigma_accel),
            ("sigma_pos_gps", self.sigma_pos_gps),
            ("sigma_x0_vel", self.sigma_x0_vel),
            ("dz", self.dz),
            ("bottom_match_weight", self.bottom_match_weight),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(StateSpaceError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("eta1", self.eta1), ("eta2", self.eta2), ("eta3", self.eta3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(StateSpaceError::Config(format!("{name} must be non-negative and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Transition and process covariance of one step of the constant-velocity
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessStep {
    pub dt: f64,
    pub g: Matrix4<f64>,
    pub q: Matrix4<f64>,
}

/// `G_k` and `Q_k` for every step `k = 1 .. N-1` of the epoch grid.
pub fn build_process_blocks(t_hat: &[f64], sigma_accel: f64) -> Result<Vec<ProcessStep>, StateSpaceError> {
    if t_hat.len() < 2 || t_hat.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(StateSpaceError::BadEpochs);
    }
    Ok(t_hat.windows(2).map(|w| process_step(w[1] - w[0], sigma_accel)).collect())
}

pub fn process_step(dt: f64, sigma_accel: f64) -> ProcessStep {
    #[rustfmt::skip]
    let g = Matrix4::new(
        1.0, 0.0, dt, 0.0,
        0.0, 1.0, 0.0, dt,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    let s2 = sigma_accel * sigma_accel;
    let (pp, pv, vv) = (s2 * dt.powi(3) / 3.0, s2 * dt * dt / 2.0, s2 * dt);
    #[rustfmt::skip]
    let q = Matrix4::new(
        pp, 0.0, pv, 0.0,
        0.0, pp, 0.0, pv,
        pv, 0.0, vv, 0.0,
        0.0, pv, 0.0, vv,
    );
    ProcessStep { dt, g, q }
}

/// Block bi-diagonal stacked transition: identity on the diagonal, `-G_k`
/// below it, so that `(G x)_k = x_k - G_k x_{k-1}` and the first block row is
/// `x_1`.
pub fn stacked_transition(steps: &[ProcessStep]) -> Result<SparseMatrix, OperatorError> {
    let n = steps.len() + 1;
    let mut trip: Vec<(usize, usize, f64)> = (0..4 * n).map(|i| (i, i, 1.0)).collect();
    for (k, s) in steps.iter().enumerate() {
        for r in 0..4 {
            for c in 0..4 {
                if s.g[(r, c)] != 0.0 {
                    trip.push((4 * (k + 1) + r, 4 * k + c, -s.g[(r, c)]));
                }
            }
        }
    }
    SparseMatrix::from_triplets(4 * n, 4 * n, trip)
}

/// Assembled joint problem.
#[derive(Debug, Clone)]
pub struct JointSystem {
    pub grids: VelocityGrids,
    pub two_profile: bool,
    pub n_unknowns: usize,
    pub blocks: Vec<LsqBlock>,
    pub glider_depth: Vec<f64>,
}

impl JointSystem {
    pub fn epochs(&self) -> usize {
        self.grids.m()
    }

    /// Number of current unknowns per component.
    pub fn profile_len(&self) -> usize {
        self.grids.l() * if self.two_profile { 2 } else { 1 }
    }

    fn cu(&self) -> usize {
        4 * self.epochs()
    }

    fn cv(&self) -> usize {
        self.cu() + self.profile_len()
    }
}

fn block(
    name: &str,
    rows: usize,
    cols: usize,
    trip: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    weight: f64,
) -> Result<LsqBlock, StateSpaceError> {
    let m = SparseMatrix::from_triplets_summed(rows, cols, trip)?;
    Ok(LsqBlock::new(name, m, rhs, weight)?)
}

/// Builds every term of the joint objective over `[x; c_u; c_v]`.
pub fn assemble_joint(dive: &DiveRecord, config: &StateSpaceConfig) -> Result<JointSystem, StateSpaceError> {
    config.validate()?;
    let adcp = dive.adcp();
    let start = dive.gps_start();
    let end = dive.gps_end();
    let t_hat = build_time_grid(&adcp.ping_times(), (start.time, end.time))?;
    let glider_depth: Vec<f64> =
        t_hat.iter().map(|&t| dive.depth().at(t).expect("validated depth series spans the dive")).collect();
    let max_depth = adcp.z().iter().chain(&glider_depth).copied().fold(0.0, f64::max);
    let grids = VelocityGrids::new(t_hat, config.dz, max_depth)?;
    let (nn, l) = (grids.m(), grids.l());
    let two = config.two_profile;
    let mut sys = JointSystem { grids, two_profile: two, n_unknowns: 0, blocks: Vec::new(), glider_depth };
    let (cu, cv, np) = (sys.cu(), sys.cv(), sys.profile_len());
    let n = cu + 2 * np;
    sys.n_unknowns = n;
    let branch = |cast: Cast| if two && cast == Cast::Ascent { l } else { 0 };
    let t_hat = sys.grids.t_hat().to_vec();
    let z_hat = sys.grids.z_hat().to_vec();
    let mut blocks = Vec::new();

    // Process term, whitened. The first four rows are the initial-state prior.
    let (u0, v0) = dive.ttw().at(start.time).expect("validated TTW series spans the dive");
    let sp = config.sigma_pos_gps;
    let sv = config.sigma_x0_vel;
    let mut trip = vec![(0, 0, 1.0 / sp), (1, 1, 1.0 / sp), (2, 2, 1.0 / sv), (3, 3, 1.0 / sv)];
    let mut rhs = vec![start.east / sp, start.north / sp, u0 / sv, v0 / sv];
    let steps = build_process_blocks(&t_hat, config.sigma_accel)?;
    for (k, step) in steps.iter().enumerate() {
        // Per component, residual r = (p_k - p_{k-1} - dt v_{k-1}, v_k - v_{k-1})
        // is whitened by the inverse Cholesky factor of the 2x2 block of Q.
        let dt = step.dt;
        let s = config.sigma_accel;
        let a = (dt.powi(3) / 3.0).sqrt();
        let b = dt * dt / 2.0 / a;
        let c = dt.sqrt() / 2.0;
        let (w11, w21, w22) = (1.0 / (s * a), -b / (a * c * s), 1.0 / (c * s));
        for comp in 0..2 {
            let (p_now, v_now) = (4 * (k + 1) + comp, 4 * (k + 1) + 2 + comp);
            let (p_prev, v_prev) = (4 * k + comp, 4 * k + 2 + comp);
            let pos_row = [(p_now, 1.0), (p_prev, -1.0), (v_prev, -dt)];
            let vel_row = [(v_now, 1.0), (v_prev, -1.0)];
            let r1 = 4 * (k + 1) + 2 * comp;
            let r2 = r1 + 1;
            trip.extend(pos_row.iter().map(|&(col, x)| (r1, col, w11 * x)));
            trip.extend(pos_row.iter().map(|&(col, x)| (r2, col, w21 * x)));
            trip.extend(vel_row.iter().map(|&(col, x)| (r2, col, w22 * x)));
            rhs.extend([0.0, 0.0]);
        }
    }
    blocks.push(block("process", 4 * nn, n, trip, rhs, 1.0)?);

    // GPS fixes at the first and last epochs only.
    let last = 4 * (nn - 1);
    let trip = vec![(0, 0, 1.0), (1, 1, 1.0), (2, last, 1.0), (3, last + 1, 1.0)];
    let rhs = vec![start.east, start.north, end.east, end.north];
    let w_gps = config.sigma_pos_gps.powi(-2);
    blocks.push(block("gps", 4, n, trip, rhs, w_gps)?);

    // ADCP: c(z_k) - OTG(t_k) = u_rel.
    if config.eta1 > 0.0 {
        let k = adcp.len();
        let order = adcp.canonical_order();
        for (name, comp, off, data) in [("adcp_u", 2, cu, adcp.u_rel()), ("adcp_v", 3, cv, adcp.v_rel())] {
            let mut trip = Vec::with_capacity(3 * k);
            for (row, &r) in order.iter().enumerate() {
                let t = adcp.t()[r];
                let epoch = node_index(&t_hat, t).ok_or(OperatorError::TimeNotOnGrid(t))?;
                trip.push((row, 4 * epoch + comp, -1.0));
                let b = off + branch(adcp.cast()[r]);
                for (node, w) in interp_weights(&z_hat, adcp.z()[r])? {
                    trip.push((row, b + node, w));
                }
            }
            let rhs = order.iter().map(|&r| data[r]).collect();
            blocks.push(block(name, k, n, trip, rhs, config.eta1)?);
        }
    }

    // OTG minus current at the glider equals the measured TTW velocity.
    if config.eta2 > 0.0 {
        let mut rhs_u = Vec::with_capacity(nn);
        let mut rhs_v = Vec::with_capacity(nn);
        for &t in &t_hat {
            let (u, v) = dive.ttw().at(t).expect("validated TTW series spans the dive");
            rhs_u.push(u);
            rhs_v.push(v);
        }
        for (name, comp, off, rhs) in [("otg_ttw_u", 2, cu, rhs_u), ("otg_ttw_v", 3, cv, rhs_v)] {
            let mut trip = Vec::with_capacity(3 * nn);
            for (r, (&t, &z)) in t_hat.iter().zip(&sys.glider_depth).enumerate() {
                trip.push((r, 4 * r + comp, 1.0));
                let b = off + branch(dive.depth().cast_at(t));
                for (node, w) in interp_weights(&z_hat, z)? {
                    trip.push((r, b + node, -w));
                }
            }
            blocks.push(block(name, nn, n, trip, rhs, config.eta2)?);
        }
    }

    // Smoothness on each current branch.
    let ar = adjacent_difference(l)?;
    let branches = if two { 2 } else { 1 };
    let smoothed = [("smooth_u", cu), ("smooth_v", cv)];
    for (name, off) in smoothed.into_iter().filter(|_| config.eta3 > 0.0) {
        let trip: Vec<_> = (0..branches)
            .flat_map(|p| ar.triplets().map(move |(r, c, v)| (p * (l - 1) + r, off + p * l + c, v)))
            .collect();
        let rows = branches * (l - 1);
        blocks.push(block(name, rows, n, trip, vec![0.0; rows], config.eta3)?);
    }

    if config.eta1 == 0.0 && config.eta2 == 0.0 && config.eta3 > 0.0 {
        // Nothing ties the current to data: pin it weakly to zero.
        let trip = (0..2 * np).map(|i| (i, cu + i, 1.0)).collect();
        blocks.push(block("current_prior", 2 * np, n, trip, vec![0.0; 2 * np], config.eta3)?);
    }

    if two {
        let w = config.bottom_match_weight * w_gps.max(config.eta1).max(config.eta2);
        let trip =
            vec![(0, cu + l - 1, 1.0), (0, cu + 2 * l - 1, -1.0), (1, cv + l - 1, 1.0), (1, cv + 2 * l - 1, -1.0)];
        blocks.push(block("bottom_match", 2, n, trip, vec![0.0; 2], w)?);
    }

    sys.blocks = blocks;
    Ok(sys)
}

/// Result of the joint solve.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    pub epochs: Vec<f64>,
    /// `[e, n, ė, ṅ]` per epoch.
    pub states: Vec<[f64; 4]>,
    pub profile: CurrentProfileEstimate,
    pub residuals: Vec<BlockResidual>,
    pub condition_estimate: f64,
    pub grids: VelocityGrids,
    pub x: Vec<f64>,
}

impl JointSolution {
    pub fn glider_velocity(&self) -> GliderVelocitySeries {
        GliderVelocitySeries::new(
            self.epochs.clone(),
            self.states.iter().map(|s| s[2]).collect(),
            self.states.iter().map(|s| s[3]).collect(),
        )
        .expect("solution states are finite")
    }

    pub fn residual(&self, name: &str) -> Option<f64> {
        self.residuals.iter().find(|b| b.name == name).map(|b| b.norm)
    }
}

pub fn solve_joint(dive: &DiveRecord, config: &StateSpaceConfig) -> Result<JointSolution, StateSpaceError> {
    let sys = assemble_joint(dive, config)?;
    let sol = sparse_lsq::solve(&sys.blocks, sys.n_unknowns)?;
    unpack(dive, &sys, sol)
}

/// [`solve_joint`] through the dense oracle; for verification only.
pub fn solve_joint_dense(dive: &DiveRecord, config: &StateSpaceConfig) -> Result<JointSolution, StateSpaceError> {
    let sys = assemble_joint(dive, config)?;
    let sol = sparse_lsq::dense_oracle_solve(&sys.blocks, sys.n_unknowns)?;
    unpack(dive, &sys, sol)
}

fn unpack(dive: &DiveRecord, sys: &JointSystem, sol: LsqSolution) -> Result<JointSolution, StateSpaceError> {
    let nn = sys.epochs();
    let l = sys.grids.l();
    let x = sol.x;
    let states = (0..nn).map(|k| [x[4 * k], x[4 * k + 1], x[4 * k + 2], x[4 * k + 3]]).collect();
    let z_hat = sys.grids.z_hat();
    let adcp = dive.adcp();
    let coverage = |cast: Option<Cast>| -> Result<Vec<usize>, StateSpaceError> {
        let mut cov = vec![0; l];
        for (i, &z) in adcp.z().iter().enumerate() {
            if cast.is_none_or(|c| c == adcp.cast()[i]) {
                for (node, _) in interp_weights(z_hat, z)? {
                    cov[node] += 1;
                }
            }
        }
        Ok(cov)
    };
    let branch = |b: usize, cast: Option<Cast>| -> Result<VelocityProfile, StateSpaceError> {
        let (u0, v0) = (sys.cu() + b * l, sys.cv() + b * l);
        Ok(VelocityProfile { u: x[u0..u0 + l].to_vec(), v: x[v0..v0 + l].to_vec(), coverage: coverage(cast)? })
    };
    let shape = if sys.two_profile {
        ProfileShape::TwoProfile { descent: branch(0, Some(Cast::Descent))?, ascent: branch(1, Some(Cast::Ascent))? }
    } else {
        ProfileShape::Single(branch(0, None)?)
    };
    Ok(JointSolution {
        epochs: sys.grids.t_hat().to_vec(),
        states,
        profile: CurrentProfileEstimate::new(z_hat.to_vec(), shape)?,
        residuals: sol.residuals,
        condition_estimate: sol.condition_estimate,
        grids: sys.grids.clone(),
        x,
    })
}
