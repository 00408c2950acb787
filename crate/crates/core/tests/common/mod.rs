#![allow(dead_code)]

use gliderdec_core::domain::{Cast, CurrentProfileEstimate};
use gliderdec_core::inversion::InversionConfig;
use gliderdec_core::simulator::{CurrentField, ScenarioSpec};
use gliderdec_core::statespace::StateSpaceConfig;

pub fn linear_shear() -> CurrentField {
    CurrentField::Linear { u0: 0.2, v0: -0.1, du_dz: -0.001, dv_dz: 0.0008 }
}

pub fn quiet(current: CurrentField) -> ScenarioSpec {
    ScenarioSpec { noise_adcp: 0.0, noise_ttw: 0.0, current, ..Default::default() }
}

/// Weights that make the data terms dominate on noise-free dives.
pub fn exact_inversion() -> InversionConfig {
    InversionConfig {
        sigma_adcp: 1e-4,
        sigma_ttw: 1e-4,
        sigma_gps: 1e-4,
        two_profile: Some(false),
        ..Default::default()
    }
}

pub fn exact_joint() -> StateSpaceConfig {
    StateSpaceConfig {
        sigma_accel: 1e-2,
        sigma_pos_gps: 1e-5,
        sigma_x0_vel: 1e3,
        eta1: 1e10,
        eta2: 1e10,
        eta3: 1e-6,
        ..Default::default()
    }
}

pub fn noisy_inversion() -> InversionConfig {
    InversionConfig { lambda_g: 1e6, lambda_o: 1e4, two_profile: Some(false), ..Default::default() }
}

pub fn noisy_joint() -> StateSpaceConfig {
    StateSpaceConfig { sigma_accel: 1e-2, eta3: 3e3, ..Default::default() }
}

/// Errors of one branch against the scenario's current, on covered nodes only.
pub fn branch_errors(p: &CurrentProfileEstimate, spec: &ScenarioSpec, cast: Cast) -> Vec<f64> {
    let b = p.branch(cast);
    let mut out = Vec::new();
    for (i, &z) in p.z_hat().iter().enumerate() {
        if b.coverage[i] == 0 {
            continue;
        }
        let (u, v) = spec.cast_current(cast, z);
        out.push(b.u[i] - u);
        out.push(b.v[i] - v);
    }
    out
}

pub fn max_abs(e: &[f64]) -> f64 {
    e.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn rms(e: &[f64]) -> f64 {
    (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt()
}
