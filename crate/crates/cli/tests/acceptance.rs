//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use gliderdec::config::ConfigFile;
use gliderdec::{cmd_process, cmd_simulate, Method, RunConfig};
use gliderdec_core::domain::{Cast, CurrentProfileEstimate, DiveRecord};
use gliderdec_core::inversion::{integrate_displacement, invert, invert_dense, InversionConfig, SmoothingTarget};
use gliderdec_core::navigation::{
    adcp_informed_trajectory, dead_reckon, depth_averaged_correction, max_horizontal_offset, phase_path_lengths,
};
use gliderdec_core::operators::{
    adjacent_difference, build_linear_interp_matrix, build_subsample_matrix, second_difference, trapezoid_weights,
    SparseMatrix,
};
use gliderdec_core::simulator::{generate, CurrentField, ScenarioSpec, SyntheticDive};
use gliderdec_core::sparse_lsq::{dense_oracle_solve, solve, LsqBlock};
use gliderdec_core::statespace::{solve_joint, solve_joint_dense, StateSpaceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Criterion 1
const EXACT_PROFILE_TOL: f64 = 1e-6;
const EXACT_ENDPOINT_TOL: f64 = 1e-6;
const EXACT_RUNTIME: Duration = Duration::from_secs(1);
// Criteria 2 and 3
const NOISY_SEEDS: u64 = 20;
const NOISY_SIGMA_ADCP: f64 = 0.03;
const NOISY_SIGMA_TTW: f64 = 0.05;
const NOISY_MEDIAN_RMSE: f64 = 0.02;
const NOISY_RUNTIME: Duration = Duration::from_secs(30);
const MIN_CORRELATION: f64 = 0.95;
// Criterion 4
const CLOSURE_SIGMAS: f64 = 5.0;
// Criterion 5
const RANDOM_SYSTEMS: usize = 100;
const MAX_RANDOM_UNKNOWNS: usize = 500;
const ORACLE_REL_TOL: f64 = 1e-8;
// Criterion 6
const BRANCH_RMSE: f64 = 0.03;
const BOTTOM_MATCH_TOL: f64 = 1e-4;
// Criterion 7
const OFFSET_OVER_FLOOR: f64 = 10.0;
// Criterion 8
const OPERATOR_TOL: f64 = 1e-12;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn branch_errors(p: &CurrentProfileEstimate, spec: &ScenarioSpec, cast: Cast) -> Vec<f64> {
    let b = p.branch(cast);
    let mut e = Vec::new();
    for (i, &z) in p.z_hat().iter().enumerate() {
        if b.coverage[i] > 0 {
            let (u, v) = spec.cast_current(cast, z);
            e.push(b.u[i] - u);
            e.push(b.v[i] - v);
        }
    }
    e
}

fn rms(e: &[f64]) -> f64 {
    (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn exact_inversion() -> InversionConfig {
    InversionConfig {
        sigma_adcp: 1e-4,
        sigma_ttw: 1e-4,
        sigma_gps: 1e-4,
        two_profile: Some(false),
        ..Default::default()
    }
}

fn exact_joint() -> StateSpaceConfig {
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

fn noisy_inversion() -> InversionConfig {
    InversionConfig {
        sigma_adcp: NOISY_SIGMA_ADCP,
        sigma_ttw: NOISY_SIGMA_TTW,
        lambda_g: 1e6,
        lambda_o: 1e4,
        two_profile: Some(false),
        ..Default::default()
    }
}

fn noisy_joint() -> StateSpaceConfig {
    StateSpaceConfig {
        sigma_accel: 1e-2,
        eta1: NOISY_SIGMA_ADCP.powi(-2),
        eta2: NOISY_SIGMA_TTW.powi(-2),
        eta3: 3e3,
        ..Default::default()
    }
}

fn noisy_suite() -> Vec<SyntheticDive> {
    (0..NOISY_SEEDS)
        .map(|seed| {
            let spec =
                ScenarioSpec { seed, noise_adcp: NOISY_SIGMA_ADCP, noise_ttw: NOISY_SIGMA_TTW, ..Default::default() };
            generate(&spec).expect("default geometry is feasible")
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let spec = ScenarioSpec {
        noise_adcp: 0.0,
        noise_ttw: 0.0,
        current: CurrentField::Linear { u0: 0.2, v0: -0.1, du_dz: -0.001, dv_dz: 0.0008 },
        ..Default::default()
    };
    let sim = generate(&spec).map_err(|e| e.to_string())?;
    let truth_end = sim.truth_states.last().unwrap();
    let start = sim.dive.gps_start();

    let t0 = Instant::now();
    let inv = invert(&sim.dive, &exact_inversion()).map_err(|e| e.to_string())?;
    let t_inv = t0.elapsed();
    let inv_err = branch_errors(&inv.profile, &spec, Cast::Descent).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (de, dn) = integrate_displacement(&inv.glider_velocity);
    let inv_end = (start.east + de - truth_end.east).abs().max((start.north + dn - truth_end.north).abs());

    let t0 = Instant::now();
    let joint = solve_joint(&sim.dive, &exact_joint()).map_err(|e| e.to_string())?;
    let t_joint = t0.elapsed();
    let joint_err = branch_errors(&joint.profile, &spec, Cast::Descent).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let last = joint.states.last().unwrap();
    let joint_end = (last[0] - truth_end.east).abs().max((last[1] - truth_end.north).abs());

    check(
        inv_err <= EXACT_PROFILE_TOL
            && joint_err <= EXACT_PROFILE_TOL
            && inv_end <= EXACT_ENDPOINT_TOL
            && joint_end <= EXACT_ENDPOINT_TOL
            && t_inv <= EXACT_RUNTIME
            && t_joint <= EXACT_RUNTIME,
        format!(
            "profile max err inv {inv_err:.2e} joint {joint_err:.2e} m/s; endpoint err inv {inv_end:.2e} joint {joint_end:.2e} m; runtime inv {t_inv:.2?} joint {t_joint:.2?}"
        ),
    )
}

struct NoisyRuns {
    inv_rmse: Vec<f64>,
    joint_rmse: Vec<f64>,
    corr: Vec<(f64, f64)>,
    closure: Vec<(f64, f64)>,
    elapsed: Duration,
}

fn noisy_runs(suite: &[SyntheticDive]) -> Result<NoisyRuns, String> {
    let (inv_cfg, joint_cfg) = (noisy_inversion(), noisy_joint());
    let mut out =
        NoisyRuns { inv_rmse: vec![], joint_rmse: vec![], corr: vec![], closure: vec![], elapsed: Duration::ZERO };
    let t0 = Instant::now();
    for sim in suite {
        let inv = invert(&sim.dive, &inv_cfg).map_err(|e| e.to_string())?;
        let joint = solve_joint(&sim.dive, &joint_cfg).map_err(|e| e.to_string())?;
        out.inv_rmse.push(rms(&branch_errors(&inv.profile, &sim.spec, Cast::Descent)));
        out.joint_rmse.push(rms(&branch_errors(&joint.profile, &sim.spec, Cast::Descent)));

        let (pi, pj) = (inv.profile.branch(Cast::Descent), joint.profile.branch(Cast::Descent));
        let covered: Vec<usize> = (0..pi.u.len()).filter(|&i| pi.coverage[i] > 0 && pj.coverage[i] > 0).collect();
        let pick = |v: &[f64]| covered.iter().map(|&i| v[i]).collect::<Vec<_>>();
        out.corr.push((correlation(&pick(&pi.u), &pick(&pj.u)), correlation(&pick(&pi.v), &pick(&pj.v))));

        let (de, dn) = integrate_displacement(&inv.glider_velocity);
        let (se, sn) = sim.dive.displacement();
        let inv_gap = (de - se).abs().max((dn - sn).abs());
        let (first, last) = (joint.states[0], *joint.states.last().unwrap());
        let (s, e) = (sim.dive.gps_start(), sim.dive.gps_end());
        let joint_gap = [first[0] - s.east, first[1] - s.north, last[0] - e.east, last[1] - e.north]
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        out.closure.push((inv_gap, joint_gap));
    }
    out.elapsed = t0.elapsed();
    Ok(out)
}

fn criterion_2(r: &NoisyRuns) -> Outcome {
    let (mi, mj) = (median(r.inv_rmse.clone()), median(r.joint_rmse.clone()));
    check(
        mi <= NOISY_MEDIAN_RMSE && mj <= NOISY_MEDIAN_RMSE && r.elapsed <= NOISY_RUNTIME,
        format!("median RMSE inv {mi:.4} joint {mj:.4} m/s over {NOISY_SEEDS} seeds; runtime {:.2?}", r.elapsed),
    )
}

fn criterion_3(r: &NoisyRuns) -> Outcome {
    let worst_u = r.corr.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let worst_v = r.corr.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    check(
        worst_u >= MIN_CORRELATION && worst_v >= MIN_CORRELATION,
        format!("worst per-seed correlation u {worst_u:.4} v {worst_v:.4}"),
    )
}

fn criterion_4(r: &NoisyRuns) -> Outcome {
    let (ic, jc) = (noisy_inversion(), noisy_joint());
    let worst_inv = r.closure.iter().map(|c| c.0).fold(0.0, f64::max);
    let worst_joint = r.closure.iter().map(|c| c.1).fold(0.0, f64::max);
    check(
        worst_inv <= CLOSURE_SIGMAS * ic.sigma_gps && worst_joint <= CLOSURE_SIGMAS * jc.sigma_pos_gps,
        format!(
            "worst inversion closure {worst_inv:.3e} m (limit {}), worst joint fix misfit {worst_joint:.3e} m (limit {})",
            CLOSURE_SIGMAS * ic.sigma_gps,
            CLOSURE_SIGMAS * jc.sigma_pos_gps
        ),
    )
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn random_block(rng: &mut ChaCha8Rng, name: &str, rows: usize, n: usize, density: f64) -> LsqBlock {
    let mut trip = Vec::new();
    for r in 0..rows {
        // Guarantee at least one entry per row.
        trip.push((r, rng.random_range(0..n), rng.random_range(-1.0..1.0)));
        for c in 0..n {
            if rng.random_bool(density) {
                trip.push((r, c, rng.random_range(-1.0..1.0)));
            }
        }
    }
    let m = SparseMatrix::from_triplets_summed(rows, n, trip).unwrap();
    let rhs = (0..rows).map(|_| rng.random_range(-10.0..10.0)).collect();
    LsqBlock::new(name, m, rhs, 10f64.powf(rng.random_range(-2.0..2.0))).unwrap()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..RANDOM_SYSTEMS {
        let n = rng.random_range(2..=MAX_RANDOM_UNKNOWNS);
        let density = rng.random_range(2.0 / n as f64..0.2f64.max(2.0 / n as f64 + 1e-3));
        let data_rows = n + rng.random_range(1..=n / 2 + 1);
        let mut blocks = vec![random_block(&mut rng, "data", data_rows, n, density)];
        for k in 0..rng.random_range(0..3) {
            let rows = rng.random_range(1..=n);
            blocks.push(random_block(&mut rng, &format!("extra{k}"), rows, n, density));
        }
        let ridge = SparseMatrix::identity(n);
        blocks.push(LsqBlock::new("ridge", ridge, vec![0.0; n], 1e-3).unwrap());
        let s = solve(&blocks, n).map_err(|e| e.to_string())?;
        let d = dense_oracle_solve(&blocks, n).map_err(|e| e.to_string())?;
        worst = worst.max(rel_diff(&s.x, &d.x));
    }

    let spec = ScenarioSpec { dive_duration: 900.0, max_depth: 40.0, seed: 3, ..Default::default() };
    let toy = generate(&spec).map_err(|e| e.to_string())?;
    let ic = InversionConfig { two_profile: Some(true), ..Default::default() };
    let (a, b) = (invert(&toy.dive, &ic), invert_dense(&toy.dive, &ic));
    let (a, b) = (a.map_err(|e| e.to_string())?, b.map_err(|e| e.to_string())?);
    let inv_diff = rel_diff(&a.x_east, &b.x_east).max(rel_diff(&a.x_north, &b.x_north));
    let jc = StateSpaceConfig::default();
    let (a, b) = (solve_joint(&toy.dive, &jc), solve_joint_dense(&toy.dive, &jc));
    let (a, b) = (a.map_err(|e| e.to_string())?, b.map_err(|e| e.to_string())?);
    let joint_diff = rel_diff(&a.x, &b.x);
    check(
        worst <= ORACLE_REL_TOL && inv_diff <= ORACLE_REL_TOL && joint_diff <= ORACLE_REL_TOL,
        format!(
            "worst relative difference: random systems {worst:.2e}, toy inversion {inv_diff:.2e} ({} unknowns), toy joint {joint_diff:.2e} ({} unknowns)",
            2 * a.grids.m() + 2 * a.grids.l(),
            a.x.len()
        ),
    )
}

fn surface_jet() -> (CurrentField, CurrentField) {
    (
        CurrentField::SurfaceIntensified { u_deep: 0.02, v_deep: 0.0, u_surface: -0.35, v_surface: 0.15, scale: 40.0 },
        CurrentField::SurfaceIntensified { u_deep: 0.02, v_deep: 0.0, u_surface: 0.05, v_surface: -0.05, scale: 40.0 },
    )
}

fn criterion_6() -> Outcome {
    let (descent, ascent) = surface_jet();
    let (na, nt) = (0.015, 0.025);
    let cfg = InversionConfig {
        sigma_adcp: na,
        sigma_ttw: nt,
        two_profile: Some(true),
        lambda_g: 1e8,
        lambda_o: 1e4,
        smoothing_target: SmoothingTarget::TtwResidual,
        ..Default::default()
    };
    let (mut worst_d, mut worst_a, mut worst_gap) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..NOISY_SEEDS {
        let spec = ScenarioSpec {
            seed,
            noise_adcp: na,
            noise_ttw: nt,
            current: descent.clone(),
            ascent_current: Some(ascent.clone()),
            ..Default::default()
        };
        let sim = generate(&spec).map_err(|e| e.to_string())?;
        let r = invert(&sim.dive, &cfg).map_err(|e| e.to_string())?;
        worst_d = worst_d.max(rms(&branch_errors(&r.profile, &spec, Cast::Descent)));
        worst_a = worst_a.max(rms(&branch_errors(&r.profile, &spec, Cast::Ascent)));
        worst_gap = worst_gap.max(r.profile.bottom_mismatch());
    }
    check(
        worst_d <= BRANCH_RMSE && worst_a <= BRANCH_RMSE && worst_gap <= BOTTOM_MATCH_TOL,
        format!(
            "worst branch RMSE descent {worst_d:.4} ascent {worst_a:.4} m/s over {NOISY_SEEDS} seeds; worst bottom mismatch {worst_gap:.1e} m/s"
        ),
    )
}

struct Signature {
    offset: f64,
    adcp: (f64, f64),
    uniform: (f64, f64),
}

fn signature(dive: &DiveRecord, split: f64, cfg: &StateSpaceConfig) -> Result<Signature, String> {
    let j = solve_joint(dive, cfg).map_err(|e| e.to_string())?;
    let adcp = adcp_informed_trajectory(&j);
    let dr = dead_reckon(dive.ttw(), dive.gps_start(), &j.epochs).map_err(|e| e.to_string())?;
    let avg = depth_averaged_correction(&dr, dive.gps_end()).map_err(|e| e.to_string())?;
    Ok(Signature {
        offset: max_horizontal_offset(&avg, &adcp).map_err(|e| e.to_string())?,
        adcp: phase_path_lengths(&adcp, split),
        uniform: phase_path_lengths(&avg, split),
    })
}

fn criterion_7() -> Outcome {
    let (descent, ascent) = surface_jet();
    let noise: f64 = 0.001;
    let cfg = StateSpaceConfig {
        sigma_accel: 1e-2,
        eta1: noise.powi(-2),
        eta2: noise.powi(-2),
        eta3: 3e3,
        two_profile: true,
        ..Default::default()
    };
    let (mut worst_ratio, mut signs, mut min_offset) = (f64::INFINITY, 0, f64::INFINITY);
    let seeds = 10;
    for seed in 0..seeds {
        let spec = ScenarioSpec {
            seed,
            noise_adcp: noise,
            noise_ttw: noise,
            current: descent.clone(),
            ascent_current: Some(ascent.clone()),
            ..Default::default()
        };
        let sheared = generate(&spec).map_err(|e| e.to_string())?;
        let s = signature(&sheared.dive, sheared.split_time(), &cfg)?;
        // Same geometry, noise and seed without any current: whatever offset
        // remains is what noise alone produces.
        let control = generate(&ScenarioSpec { current: CurrentField::zero(), ascent_current: None, ..spec })
            .map_err(|e| e.to_string())?;
        let floor = signature(&control.dive, control.split_time(), &cfg)?.offset;
        worst_ratio = worst_ratio.min(s.offset / floor);
        min_offset = min_offset.min(s.offset);
        if s.adcp.0 < s.uniform.0 && s.adcp.1 > s.uniform.1 {
            signs += 1;
        }
    }
    check(
        worst_ratio > OFFSET_OVER_FLOOR && signs == seeds,
        format!(
            "smallest offset {min_offset:.1} m, worst offset/noise-floor ratio {worst_ratio:.1}; dive compressed and climb stretched on {signs}/{seeds} seeds"
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let dz = rng.random_range(0.5..5.0);
        let l = rng.random_range(3..80);
        let z_hat: Vec<f64> = (0..l).map(|i| dz * i as f64).collect();
        let depths: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..z_hat[l - 1])).collect();
        let h = build_linear_interp_matrix(&z_hat, &depths, None).map_err(|e| e.to_string())?;
        for k in 0..depths.len() {
            worst = worst.max((h.row(k).1.iter().sum::<f64>() - 1.0).abs());
        }

        let mut t = vec![rng.random_range(-100.0..100.0)];
        for _ in 0..rng.random_range(1..60) {
            t.push(t.last().unwrap() + rng.random_range(0.5..30.0));
        }
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-0.05..0.05));
        let w = trapezoid_weights(&t).map_err(|e| e.to_string())?;
        let (t0, t1) = (t[0], t[t.len() - 1]);
        let exact = a * (t1 - t0) + 0.5 * b * (t1 * t1 - t0 * t0);
        let approx: f64 = w.iter().zip(&t).map(|(wi, ti)| wi * (a + b * ti)).sum();
        worst = worst.max((approx - exact).abs() / (1.0 + exact.abs()));

        let affine: Vec<f64> = (0..l).map(|i| a + b * i as f64).collect();
        let d2 = second_difference(l).map_err(|e| e.to_string())?.mul_vec(&affine);
        let ar = adjacent_difference(l).map_err(|e| e.to_string())?.mul_vec(&vec![a; l]);
        worst = d2.iter().chain(&ar).fold(worst, |m, x| m.max(x.abs()));

        let s = build_subsample_matrix(&t, &t).map_err(|e| e.to_string())?;
        let x: Vec<f64> = t.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        if s.mul_vec(&x) != x {
            return Err("subsampling a grid at its own nodes is not the identity".into());
        }
    }
    check(worst <= OPERATOR_TOL, format!("largest deviation {worst:.1e} over 200 random operator instances"))
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let scenario = tmp.path().join("scenario.toml");
    fs::write(&scenario, "seed = 42\n").map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let bundle = tmp.path().join(run).join("bundle");
        let out = tmp.path().join(run).join("out");
        let mut written = cmd_simulate(&scenario, &bundle, Some(42)).map_err(|e| e.to_string())?;
        let cfg = RunConfig::new(ConfigFile::default(), out, Some(Method::Both), true);
        written.extend(cmd_process(&bundle, &cfg).map_err(|e| e.to_string())?);
        files.push(written);
    }
    let rel = |p: &Path, run: &str| p.strip_prefix(tmp.path().join(run)).unwrap().to_path_buf();
    let mut differing = Vec::new();
    for (a, b) in files[0].iter().zip(&files[1]) {
        if rel(a, "a") != rel(b, "b") || fs::read(a).ok() != fs::read(b).ok() {
            differing.push(rel(a, "a").display().to_string());
        }
    }
    check(
        differing.is_empty() && files[0].len() == files[1].len(),
        format!("{} files compared, {} differ {differing:?}", files[0].len(), differing.len()),
    )
}

fn main() {
    let suite = noisy_suite();
    let noisy = noisy_runs(&suite);
    let from_noisy = |f: fn(&NoisyRuns) -> Outcome| noisy.as_ref().map_err(Clone::clone).and_then(f);
    let results = [
        ("noise-free recovery", criterion_1()),
        ("noisy recovery", from_noisy(criterion_2)),
        ("method agreement", from_noisy(criterion_3)),
        ("GPS closure", from_noisy(criterion_4)),
        ("oracle equivalence", criterion_5()),
        ("two-profile behavior", criterion_6()),
        ("trajectory signature", criterion_7()),
        ("operator properties", criterion_8()),
        ("determinism", criterion_9()),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(d) => println!("criterion {} {name}: PASS ({d})", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({d})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
