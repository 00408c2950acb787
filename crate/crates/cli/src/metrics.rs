use gliderdec_core::domain::{Cast, CurrentProfileEstimate, DiveRecord, ProfileShape};
use gliderdec_core::inversion::{integrate_displacement, InversionResult};
use gliderdec_core::statespace::JointSolution;

/// Pearson correlation, `None` when either series is constant or too short.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let (ma, mb) = (a[..n].iter().sum::<f64>() / n as f64, b[..n].iter().sum::<f64>() / n as f64);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Per-component correlation of the mean profiles over depths that both
/// estimates cover.
pub fn profile_correlation(a: &CurrentProfileEstimate, b: &CurrentProfileEstimate) -> (Option<f64>, Option<f64>) {
    let (pa, pb) = (a.mean_profile(), b.mean_profile());
    let (mut ua, mut ub, mut va, mut vb) = (vec![], vec![], vec![], vec![]);
    for (i, &z) in a.z_hat().iter().enumerate() {
        let Some(j) = b.z_hat().iter().position(|&w| (w - z).abs() <= 1e-9) else { continue };
        if pa.coverage[i] == 0 || pb.coverage[j] == 0 {
            continue;
        }
        ua.push(pa.u[i]);
        ub.push(pb.u[j]);
        va.push(pa.v[i]);
        vb.push(pb.v[j]);
    }
    (pearson(&ua, &ub), pearson(&va, &vb))
}

/// Root-mean-square error of every covered node of every branch, both
/// components pooled, against a depth-and-cast truth function.
pub fn profile_rmse(p: &CurrentProfileEstimate, truth: impl Fn(Cast, f64) -> (f64, f64)) -> Option<f64> {
    let casts: &[Cast] = match p.shape() {
        ProfileShape::Single(_) => &[Cast::Descent],
        ProfileShape::TwoProfile { .. } => &[Cast::Descent, Cast::Ascent],
    };
    let (mut sum, mut n) = (0.0, 0usize);
    for &cast in casts {
        let b = p.branch(cast);
        for (i, &z) in p.z_hat().iter().enumerate() {
            if b.coverage[i] == 0 {
                continue;
            }
            let (u, v) = truth(cast, z);
            sum += (b.u[i] - u).powi(2) + (b.v[i] - v).powi(2);
            n += 2;
        }
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Largest per-component misfit between the integrated glider velocity and
/// the GPS displacement.
pub fn inversion_gps_closure(r: &InversionResult, dive: &DiveRecord) -> f64 {
    let (de, dn) = integrate_displacement(&r.glider_velocity);
    let (se, sn) = dive.displacement();
    (de - se).abs().max((dn - sn).abs())
}

/// Largest per-component misfit between the joint track and either fix.
pub fn joint_gps_closure(j: &JointSolution, dive: &DiveRecord) -> f64 {
    let (first, last) = (j.states[0], j.states[j.states.len() - 1]);
    let (s, e) = (dive.gps_start(), dive.gps_end());
    [first[0] - s.east, first[1] - s.north, last[0] - e.east, last[1] - e.north].iter().fold(0.0, |m, x| m.max(x.abs()))
}
