use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gliderdec_core::domain::{DiveRecord, ProfileForm};
use gliderdec_core::inversion::{integrate_displacement, invert, InversionConfig, InversionError, InversionResult};
use gliderdec_core::navigation::{
    adcp_informed_trajectory, dead_reckon, depth_averaged_correction, max_horizontal_offset, Trajectory,
};
use gliderdec_core::simulator::{generate, SimError, SyntheticDive};
use gliderdec_core::sparse_lsq::BlockResidual;
use gliderdec_core::statespace::{solve_joint, JointSolution, StateSpaceConfig, StateSpaceError};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::bundle::{
    load_dive, write_bundle, write_profile, write_trajectory, write_truth_states, Table, TRUTH_PROFILE_FILE,
    TRUTH_STATES_FILE,
};
use crate::config::{load_scenario, ConfigFile, Method, RunConfig};
use crate::error::CliError;
use crate::format::json_num;
use crate::metrics::{inversion_gps_closure, joint_gps_closure, profile_correlation, profile_rmse};
use crate::plots;

pub const THREADS_ENV: &str = "GLIDERDEC_THREADS";

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Invalid(m) => CliError::Config(m),
        SimError::Infeasible(m) => CliError::Infeasible(m),
        SimError::Domain(d) => CliError::Infeasible(d.to_string()),
    }
}

fn inversion_error(e: InversionError) -> CliError {
    match e {
        InversionError::Config(m) => CliError::Config(format!("inversion: {m}")),
        other => CliError::Solver(format!("inversion: {other}")),
    }
}

fn joint_error(e: StateSpaceError) -> CliError {
    match e {
        StateSpaceError::Config(m) => CliError::Config(format!("statespace: {m}")),
        other => CliError::Solver(format!("joint: {other}")),
    }
}

/// Generates a synthetic dive and writes the bundle plus truth files into `out`.
pub fn cmd_simulate(scenario: &Path, out: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>, CliError> {
    let mut spec = load_scenario(scenario)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let sim = generate(&spec).map_err(sim_error)?;
    write_bundle(out, &sim.dive.to_raw())?;
    write_profile(&out.join(TRUTH_PROFILE_FILE), &sim.truth_profile)?;
    write_truth_states(&out.join(TRUTH_STATES_FILE), &sim.truth_states)?;
    Ok(["adcp.csv", "ttw.csv", "depth.csv", "gps.csv", TRUTH_PROFILE_FILE, TRUTH_STATES_FILE]
        .iter()
        .map(|f| out.join(f))
        .collect())
}

fn blocks_json(blocks: &[BlockResidual]) -> Value {
    Value::Array(
        blocks
            .iter()
            .map(|b| json!({ "block": b.name, "weight": json_num(b.weight), "norm": json_num(b.norm) }))
            .collect(),
    )
}

struct Tracks {
    dead: Trajectory,
    avg: Trajectory,
    adcp: Option<Trajectory>,
}

fn tracks(dive: &DiveRecord, epochs: &[f64], joint: Option<&JointSolution>) -> Result<Tracks, CliError> {
    let nav = |e: gliderdec_core::navigation::NavError| CliError::Solver(format!("navigation: {e}"));
    let dead = dead_reckon(dive.ttw(), dive.gps_start(), epochs).map_err(nav)?;
    let avg = depth_averaged_correction(&dead, dive.gps_end()).map_err(nav)?;
    Ok(Tracks { dead, avg, adcp: joint.map(adcp_informed_trajectory) })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(CliError::io(path))
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).expect("JSON values serialize");
    text.push('\n');
    write_text(path, &text)
}

/// Runs the configured methods on a bundle and writes every result file.
pub fn cmd_process(bundle: &Path, run: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let dive = load_dive(bundle)?;
    run.validate()?;
    let inv = match run.method.runs_invert() {
        true => Some(invert(&dive, &run.inversion).map_err(inversion_error)?),
        false => None,
    };
    let joint = match run.method.runs_joint() {
        true => Some(solve_joint(&dive, &run.statespace).map_err(joint_error)?),
        false => None,
    };

    let out = &run.output_dir;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let mut written = Vec::new();
    let mut emit = |name: &str| {
        let p = out.join(name);
        written.push(p.clone());
        p
    };

    let mut residuals = Map::new();
    if let Some(r) = &inv {
        write_profile(&emit("profile_invert.csv"), &r.profile)?;
        residuals.insert(
            "invert".into(),
            json!({
                "two_profile": r.profile.form() == ProfileForm::TwoProfile,
                "condition_estimate": json_num(r.condition_estimate),
                "east": blocks_json(&r.residuals_east),
                "north": blocks_json(&r.residuals_north),
            }),
        );
    }
    if let Some(j) = &joint {
        write_profile(&emit("profile_joint.csv"), &j.profile)?;
        residuals.insert(
            "joint".into(),
            json!({
                "two_profile": j.profile.form() == ProfileForm::TwoProfile,
                "condition_estimate": json_num(j.condition_estimate),
                "blocks": blocks_json(&j.residuals),
            }),
        );
    }
    write_json(&emit("residuals.json"), &Value::Object(residuals))?;

    let epochs: Vec<f64> = match (&joint, &inv) {
        (Some(j), _) => j.epochs.clone(),
        (None, Some(r)) => r.grids.t_hat().to_vec(),
        (None, None) => unreachable!("a method always runs"),
    };
    let tr = tracks(&dive, &epochs, joint.as_ref())?;
    write_trajectory(&emit("trajectory_dead.csv"), &tr.dead)?;
    write_trajectory(&emit("trajectory_avg.csv"), &tr.avg)?;
    if let Some(a) = &tr.adcp {
        write_trajectory(&emit("trajectory_adcp.csv"), a)?;
    }

    let offset = |a: &Trajectory, b: &Trajectory| -> Result<Value, CliError> {
        max_horizontal_offset(a, b).map(json_num).map_err(|e| CliError::Solver(format!("navigation: {e}")))
    };
    let mut offsets = Map::new();
    offsets.insert("dead_vs_avg".into(), offset(&tr.dead, &tr.avg)?);
    if let Some(a) = &tr.adcp {
        offsets.insert("avg_vs_adcp".into(), offset(&tr.avg, a)?);
        offsets.insert("dead_vs_adcp".into(), offset(&tr.dead, a)?);
    }
    let methods: Vec<&str> = [(inv.is_some(), "invert"), (joint.is_some(), "joint")]
        .iter()
        .filter_map(|&(ran, name)| ran.then_some(name))
        .collect();
    let mut comparison = Map::new();
    comparison.insert("methods".into(), json!(methods));
    if let (Some(r), Some(j)) = (&inv, &joint) {
        let (cu, cv) = profile_correlation(&r.profile, &j.profile);
        comparison.insert(
            "correlation".into(),
            json!({ "u": cu.map_or(Value::Null, json_num), "v": cv.map_or(Value::Null, json_num) }),
        );
    }
    comparison.insert("max_horizontal_offset_m".into(), Value::Object(offsets));
    write_json(&emit("comparison.json"), &Value::Object(comparison))?;

    if run.emit_plots {
        let (glider, profile) = match (&inv, &joint) {
            (Some(r), _) => (r.glider_velocity.clone(), &r.profile),
            (None, Some(j)) => (j.glider_velocity(), &j.profile),
            (None, None) => unreachable!("a method always runs"),
        };
        write_text(&emit("profile.svg"), &plots::traces_and_profile(&dive, &glider, profile))?;
        if let (Some(r), Some(j)) = (&inv, &joint) {
            write_text(&emit("methods.svg"), &plots::method_comparison(&r.profile, &j.profile))?;
        }
        let mut named = vec![("dead reckoned", &tr.dead), ("depth-averaged", &tr.avg)];
        if let Some(a) = &tr.adcp {
            named.push(("ADCP-informed", a));
        }
        write_text(&emit("trajectory.svg"), &plots::trajectory_comparison(&named))?;
    }
    Ok(written)
}

/// One sweep axis: a configuration key and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<f64>,
}

impl FromStr for GridAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (key, vals) = s.split_once('=').ok_or_else(|| format!("`{s}` is not of the form key=v1,v2,..."))?;
        let values = vals
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{v}` in `{s}` is not a number")))
            .collect::<Result<Vec<_>, _>>()?;
        let key = key.trim().to_string();
        if key.is_empty() || values.is_empty() {
            return Err(format!("`{s}` needs a key and at least one value"));
        }
        Ok(Self { key, values })
    }
}

/// Sets a numeric configuration field by name. A bare key applies to every
/// section that has it; `inversion.` or `statespace.` restricts it.
fn set_field(inv: &mut InversionConfig, ss: &mut StateSpaceConfig, key: &str, value: f64) -> Result<(), CliError> {
    let (section, field) = match key.split_once('.') {
        Some((s, f)) => (Some(s), f),
        None => (None, key),
    };
    if let Some(s) = section {
        if s != "inversion" && s != "statespace" {
            return Err(CliError::Parse(format!("grid key `{key}`: unknown section `{s}`")));
        }
    }
    fn patch<T: serde::Serialize + serde::de::DeserializeOwned>(cfg: &mut T, field: &str, value: f64) -> Option<bool> {
        let mut v = serde_json::to_value(&*cfg).ok()?;
        let slot = v.as_object_mut()?.get_mut(field)?;
        if !slot.is_number() {
            return Some(false);
        }
        *slot = json!(value);
        *cfg = serde_json::from_value(v).ok()?;
        Some(true)
    }
    let mut hit = false;
    for (name, result) in [
        ("inversion", (section != Some("statespace")).then(|| patch(inv, field, value)).flatten()),
        ("statespace", (section != Some("inversion")).then(|| patch(ss, field, value)).flatten()),
    ] {
        match result {
            Some(true) => hit = true,
            Some(false) => return Err(CliError::Parse(format!("grid key `{key}`: {name}.{field} is not numeric"))),
            None => {}
        }
    }
    if hit {
        Ok(())
    } else {
        Err(CliError::Parse(format!("grid key `{key}` matches no numeric configuration field")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub method: Method,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

/// `GLIDERDEC_THREADS` as a thread cap, if set.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Parse(format!("{THREADS_ENV}=`{s}` is not a positive integer"))),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Ok,
    ConfigError,
    SolverFailure,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::ConfigError => "config_error",
            CellStatus::SolverFailure => "solver_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub status: CellStatus,
    pub rmse: Option<f64>,
    pub gps_closure: Option<f64>,
    pub endpoint_error: Option<f64>,
}

impl CellMetrics {
    fn failed(status: CellStatus) -> Self {
        Self { status, rmse: None, gps_closure: None, endpoint_error: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub values: Vec<f64>,
    pub invert: Option<CellMetrics>,
    pub joint: Option<CellMetrics>,
}

fn run_invert(sim: &SyntheticDive, cfg: &InversionConfig) -> CellMetrics {
    let r: InversionResult = match invert(&sim.dive, cfg) {
        Ok(r) => r,
        Err(InversionError::Config(_)) => return CellMetrics::failed(CellStatus::ConfigError),
        Err(_) => return CellMetrics::failed(CellStatus::SolverFailure),
    };
    let (de, dn) = integrate_displacement(&r.glider_velocity);
    let truth = sim.truth_states.last().expect("simulated dives have states");
    let start = sim.dive.gps_start();
    CellMetrics {
        status: CellStatus::Ok,
        rmse: profile_rmse(&r.profile, |c, z| sim.spec.cast_current(c, z)),
        gps_closure: Some(inversion_gps_closure(&r, &sim.dive)),
        endpoint_error: Some((start.east + de - truth.east).hypot(start.north + dn - truth.north)),
    }
}

fn run_joint(sim: &SyntheticDive, cfg: &StateSpaceConfig) -> CellMetrics {
    let j = match solve_joint(&sim.dive, cfg) {
        Ok(j) => j,
        Err(StateSpaceError::Config(_)) => return CellMetrics::failed(CellStatus::ConfigError),
        Err(_) => return CellMetrics::failed(CellStatus::SolverFailure),
    };
    let truth = sim.truth_states.last().expect("simulated dives have states");
    let last = j.states[j.states.len() - 1];
    CellMetrics {
        status: CellStatus::Ok,
        rmse: profile_rmse(&j.profile, |c, z| sim.spec.cast_current(c, z)),
        gps_closure: Some(joint_gps_closure(&j, &sim.dive)),
        endpoint_error: Some((last[0] - truth.east).hypot(last[1] - truth.north)),
    }
}

/// Every combination of grid values in row-major order, first axis slowest.
fn combinations(grid: &[GridAxis]) -> Vec<Vec<f64>> {
    grid.iter().fold(vec![vec![]], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |&v| {
                    let mut c = prefix.clone();
                    c.push(v);
                    c
                })
            })
            .collect()
    })
}

/// Runs the selected methods on one synthetic dive for every grid cell.
pub fn run_sweep(
    sim: &SyntheticDive,
    base: &ConfigFile,
    grid: &[GridAxis],
    opts: &SweepOptions,
) -> Result<Vec<SweepCell>, CliError> {
    if grid.is_empty() {
        return Err(CliError::Parse("sweep grid is empty".into()));
    }
    let cells = combinations(grid);
    let mut configs = Vec::with_capacity(cells.len());
    for values in &cells {
        let (mut inv, mut ss) = (base.inversion.clone(), base.statespace.clone());
        for (axis, &v) in grid.iter().zip(values) {
            set_field(&mut inv, &mut ss, &axis.key, v)?;
        }
        configs.push((inv, ss));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .zip(configs.par_iter())
            .map(|(values, (inv, ss))| SweepCell {
                values: values.clone(),
                invert: opts.method.runs_invert().then(|| run_invert(sim, inv)),
                joint: opts.method.runs_joint().then(|| run_joint(sim, ss)),
            })
            .collect()
    }))
}

pub fn write_sweep(path: &Path, grid: &[GridAxis], cells: &[SweepCell], method: Method) -> Result<(), CliError> {
    let mut header: Vec<String> = vec!["cell".into()];
    header.extend(grid.iter().map(|a| a.key.clone()));
    let prefixes: Vec<&str> = [(method.runs_invert(), "invert"), (method.runs_joint(), "joint")]
        .iter()
        .filter_map(|&(on, p)| on.then_some(p))
        .collect();
    for p in &prefixes {
        for col in ["status", "rmse_mps", "gps_closure_m", "endpoint_error_m"] {
            header.push(format!("{p}_{col}"));
        }
    }
    let name = path.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&name, &header_refs);
    for (i, c) in cells.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(t.nums(&c.values)?);
        for m in [&c.invert, &c.joint].into_iter().flatten() {
            row.push(m.status.as_str().into());
            for v in [m.rmse, m.gps_closure, m.endpoint_error] {
                row.push(match v {
                    Some(x) => t.num(x)?,
                    None => String::new(),
                });
            }
        }
        t.push(row);
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    t.write(path)
}

/// Loads the scenario, sweeps the grid and writes the metrics table.
pub fn cmd_sweep(
    scenario: &Path,
    base: &ConfigFile,
    grid: &[GridAxis],
    out: &Path,
    opts: &SweepOptions,
) -> Result<Vec<SweepCell>, CliError> {
    let mut spec = load_scenario(scenario)?;
    if let Some(seed) = opts.seed {
        spec.seed = seed;
    }
    let sim = generate(&spec).map_err(sim_error)?;
    let cells = run_sweep(&sim, base, grid, opts)?;
    write_sweep(out, grid, &cells, opts.method)?;
    Ok(cells)
}
