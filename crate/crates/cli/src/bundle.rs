//! Dive bundle directories: one CSV per instrument stream plus GPS fixes.

use std::fs;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Terminator, WriterBuilder};
use gliderdec_core::domain::{
    validate_dive, Cast, CurrentProfileEstimate, DiveRecord, GpsFix, ProfileShape, RawDive, VelocityProfile,
};
use gliderdec_core::navigation::Trajectory;
use gliderdec_core::simulator::TruthState;

use crate::error::CliError;
use crate::format::fmt_num;

pub const ADCP_FILE: &str = "adcp.csv";
pub const TTW_FILE: &str = "ttw.csv";
pub const DEPTH_FILE: &str = "depth.csv";
pub const GPS_FILE: &str = "gps.csv";
pub const TRUTH_PROFILE_FILE: &str = "truth_profile.csv";
pub const TRUTH_STATES_FILE: &str = "truth_states.csv";

pub const ADCP_HEADER: [&str; 6] = ["time_s", "depth_m", "u_rel_mps", "v_rel_mps", "ping", "cast"];
pub const TTW_HEADER: [&str; 3] = ["time_s", "u_ttw_mps", "v_ttw_mps"];
pub const DEPTH_HEADER: [&str; 2] = ["time_s", "depth_m"];
pub const GPS_HEADER: [&str; 4] = ["role", "time_s", "east_m", "north_m"];
pub const GPS_LATLON: [&str; 2] = ["lat_deg", "lon_deg"];
pub const PROFILE_HEADER: [&str; 5] = ["cast", "depth_m", "u_mps", "v_mps", "coverage"];
pub const TRAJECTORY_HEADER: [&str; 3] = ["time_s", "east_m", "north_m"];
pub const TRUTH_STATES_HEADER: [&str; 6] = ["time_s", "east_m", "north_m", "u_mps", "v_mps", "depth_m"];

/// Collects rows of already formatted cells and writes them in one go.
pub(crate) struct Table {
    name: String,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub(crate) fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), rows: vec![header.iter().map(|s| s.to_string()).collect()] }
    }

    pub(crate) fn push(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub(crate) fn num(&self, x: f64) -> Result<String, CliError> {
        fmt_num(x, &self.name)
    }

    pub(crate) fn nums(&self, xs: &[f64]) -> Result<Vec<String>, CliError> {
        xs.iter().map(|&x| self.num(x)).collect()
    }

    pub(crate) fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(Vec::new());
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::Parse(format!("{}: {e}", self.name)))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Parse(format!("{}: {e}", self.name)))?;
        fs::write(path, bytes).map_err(CliError::io(path))
    }
}

pub fn write_bundle(dir: &Path, raw: &RawDive) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;

    let mut t = Table::new(ADCP_FILE, &ADCP_HEADER);
    for i in 0..raw.adcp_t.len() {
        let mut row = t.nums(&[raw.adcp_t[i], raw.adcp_z[i], raw.adcp_u_rel[i], raw.adcp_v_rel[i]])?;
        row.push(raw.adcp_ping[i].to_string());
        row.push(raw.adcp_cast[i].code().to_string());
        t.push(row);
    }
    t.write(&dir.join(ADCP_FILE))?;

    let mut t = Table::new(TTW_FILE, &TTW_HEADER);
    for i in 0..raw.ttw_t.len() {
        let row = t.nums(&[raw.ttw_t[i], raw.ttw_u[i], raw.ttw_v[i]])?;
        t.push(row);
    }
    t.write(&dir.join(TTW_FILE))?;

    let mut t = Table::new(DEPTH_FILE, &DEPTH_HEADER);
    for i in 0..raw.depth_t.len() {
        let row = t.nums(&[raw.depth_t[i], raw.depth_z[i]])?;
        t.push(row);
    }
    t.write(&dir.join(DEPTH_FILE))?;

    let mut t = Table::new(GPS_FILE, &GPS_HEADER);
    for (role, fix) in [("start", raw.gps_start), ("end", raw.gps_end)] {
        let mut row = vec![role.to_string()];
        row.extend(t.nums(&[fix.time, fix.east, fix.north])?);
        t.push(row);
    }
    t.write(&dir.join(GPS_FILE))
}

struct Rows {
    name: String,
    header: Vec<String>,
    records: Vec<(u64, StringRecord)>,
}

impl Rows {
    fn read(dir: &Path, name: &str) -> Result<Self, CliError> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
        let mut rdr = ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let parse_err = |e: csv::Error| CliError::Parse(format!("{name}: {e}"));
        let header = rdr.headers().map_err(parse_err)?.iter().map(str::to_string).collect();
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(parse_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            records.push((line, rec));
        }
        Ok(Self { name: name.to_string(), header, records })
    }

    fn expect_header(&self, expected: &[&str]) -> Result<(), CliError> {
        if self.header.len() < expected.len() || self.header[..expected.len()] != *expected {
            return Err(CliError::Parse(format!(
                "{}: line 1: header `{}` does not start with `{}`",
                self.name,
                self.header.join(","),
                expected.join(",")
            )));
        }
        Ok(())
    }

    fn cell<'a>(&self, line: u64, rec: &'a StringRecord, col: usize) -> Result<&'a str, CliError> {
        rec.get(col).ok_or_else(|| {
            CliError::Parse(format!("{}: line {line}: missing column `{}`", self.name, self.header[col]))
        })
    }

    fn float(&self, line: u64, rec: &StringRecord, col: usize) -> Result<f64, CliError> {
        let s = self.cell(line, rec, col)?;
        s.trim().parse().map_err(|_| {
            CliError::Parse(format!("{}: line {line}, column `{}`: `{s}` is not a number", self.name, self.header[col]))
        })
    }

    fn floats(&self, cols: usize) -> Result<Vec<Vec<f64>>, CliError> {
        let mut out = vec![Vec::with_capacity(self.records.len()); cols];
        for (line, rec) in &self.records {
            for (c, col) in out.iter_mut().enumerate() {
                col.push(self.float(*line, rec, c)?);
            }
        }
        Ok(out)
    }
}

/// Reads a bundle without checking dive invariants.
pub fn read_bundle(dir: &Path) -> Result<RawDive, CliError> {
    let adcp = Rows::read(dir, ADCP_FILE)?;
    adcp.expect_header(&ADCP_HEADER)?;
    let mut cols = adcp.floats(4)?;
    let (adcp_v_rel, adcp_u_rel) = (cols.pop().unwrap(), cols.pop().unwrap());
    let (adcp_z, adcp_t) = (cols.pop().unwrap(), cols.pop().unwrap());
    let mut adcp_ping = Vec::with_capacity(adcp.records.len());
    let mut adcp_cast = Vec::with_capacity(adcp.records.len());
    for (line, rec) in &adcp.records {
        let s = adcp.cell(*line, rec, 4)?;
        adcp_ping.push(s.trim().parse().map_err(|_| {
            CliError::Parse(format!("{ADCP_FILE}: line {line}, column `ping`: `{s}` is not a ping index"))
        })?);
        let s = adcp.cell(*line, rec, 5)?;
        adcp_cast.push(Cast::from_code(s.trim()).ok_or_else(|| {
            CliError::Parse(format!("{ADCP_FILE}: line {line}, column `cast`: `{s}` is neither D nor A"))
        })?);
    }

    let ttw = Rows::read(dir, TTW_FILE)?;
    ttw.expect_header(&TTW_HEADER)?;
    let mut cols = ttw.floats(3)?;
    let (ttw_v, ttw_u, ttw_t) = (cols.pop().unwrap(), cols.pop().unwrap(), cols.pop().unwrap());

    let depth = Rows::read(dir, DEPTH_FILE)?;
    depth.expect_header(&DEPTH_HEADER)?;
    let mut cols = depth.floats(2)?;
    let (depth_z, depth_t) = (cols.pop().unwrap(), cols.pop().unwrap());

    let (gps_start, gps_end) = read_gps(dir)?;
    Ok(RawDive {
        adcp_u_rel,
        adcp_v_rel,
        adcp_t,
        adcp_z,
        adcp_ping,
        adcp_cast,
        ttw_t,
        ttw_u,
        ttw_v,
        depth_t,
        depth_z,
        gps_start,
        gps_end,
    })
}

struct GpsRow {
    line: u64,
    time: f64,
    east_north: Option<(f64, f64)>,
    lat_lon: Option<(f64, f64)>,
}

fn read_gps(dir: &Path) -> Result<(GpsFix, GpsFix), CliError> {
    let rows = Rows::read(dir, GPS_FILE)?;
    rows.expect_header(&GPS_HEADER)?;
    let has_latlon = rows.header.len() >= 6 && rows.header[4..6] == GPS_LATLON;
    if rows.header.len() != GPS_HEADER.len() && !has_latlon {
        return Err(CliError::Parse(format!(
            "{GPS_FILE}: line 1: extra columns must be exactly `{}`",
            GPS_LATLON.join(",")
        )));
    }
    let pair = |line: u64, rec: &StringRecord, a: usize| -> Result<Option<(f64, f64)>, CliError> {
        let blank = |c: usize| rec.get(c).is_none_or(|s| s.trim().is_empty());
        if blank(a) && blank(a + 1) {
            return Ok(None);
        }
        Ok(Some((rows.float(line, rec, a)?, rows.float(line, rec, a + 1)?)))
    };
    let (mut start, mut end) = (None, None);
    for (line, rec) in &rows.records {
        let row = GpsRow {
            line: *line,
            time: rows.float(*line, rec, 1)?,
            east_north: pair(*line, rec, 2)?,
            lat_lon: if has_latlon { pair(*line, rec, 4)? } else { None },
        };
        let slot = match rows.cell(*line, rec, 0)?.trim() {
            "start" => &mut start,
            "end" => &mut end,
            other => {
                return Err(CliError::Parse(format!(
                    "{GPS_FILE}: line {line}, column `role`: `{other}` is neither start nor end"
                )))
            }
        };
        if slot.replace(row).is_some() {
            return Err(CliError::Parse(format!("{GPS_FILE}: line {line}: duplicate fix role")));
        }
    }
    let (Some(start), Some(end)) = (start, end) else {
        return Err(CliError::Parse(format!("{GPS_FILE}: needs exactly one start and one end fix")));
    };
    let anchor = start.lat_lon;
    let fix = |r: &GpsRow| -> Result<GpsFix, CliError> {
        match (r.east_north, r.lat_lon, anchor) {
            (Some((e, n)), _, _) => Ok(GpsFix::new(r.time, e, n)),
            (None, Some((lat, lon)), Some((lat0, lon0))) => Ok(GpsFix::from_lat_lon(r.time, lat, lon, lat0, lon0)),
            _ => Err(CliError::Parse(format!(
                "{GPS_FILE}: line {}: fix needs east_m/north_m, or lat_deg/lon_deg on both fixes",
                r.line
            ))),
        }
    };
    Ok((fix(&start)?, fix(&end)?))
}

/// Reads and validates a bundle.
pub fn load_dive(dir: &Path) -> Result<DiveRecord, CliError> {
    let raw = read_bundle(dir)?;
    let violations = validate_dive(&raw);
    if !violations.is_empty() {
        return Err(CliError::Invalid(violations));
    }
    DiveRecord::from_raw(raw).map_err(|e| CliError::Parse(e.to_string()))
}

fn branches(p: &CurrentProfileEstimate) -> Vec<(&'static str, &VelocityProfile)> {
    match p.shape() {
        ProfileShape::Single(b) => vec![("all", b)],
        ProfileShape::TwoProfile { descent, ascent } => vec![("D", descent), ("A", ascent)],
    }
}

/// Long-format profile table; single profiles use cast `all`.
pub fn write_profile(path: &Path, p: &CurrentProfileEstimate) -> Result<(), CliError> {
    let name = path.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let mut t = Table::new(&name, &PROFILE_HEADER);
    for (cast, b) in branches(p) {
        for (i, &z) in p.z_hat().iter().enumerate() {
            let mut row = vec![cast.to_string()];
            row.extend(t.nums(&[z, b.u[i], b.v[i]])?);
            row.push(b.coverage[i].to_string());
            t.push(row);
        }
    }
    t.write(path)
}

pub fn write_trajectory(path: &Path, tr: &Trajectory) -> Result<(), CliError> {
    let name = path.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let mut t = Table::new(&name, &TRAJECTORY_HEADER);
    for i in 0..tr.len() {
        let row = t.nums(&[tr.t()[i], tr.east()[i], tr.north()[i]])?;
        t.push(row);
    }
    t.write(path)
}

pub fn write_truth_states(path: &Path, states: &[TruthState]) -> Result<(), CliError> {
    let mut t = Table::new(TRUTH_STATES_FILE, &TRUTH_STATES_HEADER);
    for s in states {
        let row = t.nums(&[s.t, s.east, s.north, s.u, s.v, s.depth])?;
        t.push(row);
    }
    t.write(path)
}
