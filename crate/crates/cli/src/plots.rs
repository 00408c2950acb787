//! Self-contained SVG figures. Depth axes increase downward.

use std::fmt::Write as _;

use gliderdec_core::domain::{CurrentProfileEstimate, DiveRecord, GliderVelocitySeries, ProfileShape};
use gliderdec_core::navigation::Trajectory;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub scatter: bool,
}

struct Panel {
    left: f64,
    top: f64,
    x: (f64, f64),
    y: (f64, f64),
    depth_down: bool,
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * PANEL_W
    }

    fn py(&self, y: f64) -> f64 {
        let f = (y - self.y.0) / (self.y.1 - self.y.0);
        if self.depth_down {
            self.top + f * PANEL_H
        } else {
            self.top + (1.0 - f) * PANEL_H
        }
    }
}

fn range(series: &[Series], pick: impl Fn(&(f64, f64)) -> f64) -> (f64, f64) {
    let (lo, hi) = series
        .iter()
        .flat_map(|s| s.points.iter().map(&pick))
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-12 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn draw_panel(out: &mut String, p: &Panel, series: &[Series], title: &str, xlabel: &str, ylabel: &str) {
    let (l, t) = (p.left, p.top);
    let _ = writeln!(
        out,
        r##"<rect x="{l:.2}" y="{t:.2}" width="{PANEL_W:.2}" height="{PANEL_H:.2}" fill="none" stroke="#444"/>"##
    );
    let _ =
        writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{title}</text>"#, l + PANEL_W / 2.0, t - 12.0);
    for v in ticks(p.x.0, p.x.1) {
        let x = p.px(v);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#444"/><text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"##,
            t + PANEL_H,
            t + PANEL_H + 5.0,
            t + PANEL_H + 17.0,
            label(v)
        );
    }
    for v in ticks(p.y.0, p.y.1) {
        let y = p.py(v);
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{l:.2}" y2="{y:.2}" stroke="#444"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"##,
            l - 5.0,
            l - 7.0,
            y + 3.0,
            label(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{xlabel}</text>"#,
        l + PANEL_W / 2.0,
        t + PANEL_H + 34.0
    );
    let (cx, cy) = (l - 44.0, t + PANEL_H / 2.0);
    let _ = writeln!(
        out,
        r#"<text x="{cx:.2}" y="{cy:.2}" text-anchor="middle" font-size="11" transform="rotate(-90 {cx:.2} {cy:.2})">{ylabel}</text>"#
    );
    let mut line_idx = 0;
    for s in series {
        if s.scatter {
            let _ = write!(out, r##"<g fill="#999" fill-opacity="0.35">"##);
            for &(x, y) in &s.points {
                let _ = write!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="1.2"/>"#, p.px(x), p.py(y));
            }
            let _ = writeln!(out, "</g>");
            continue;
        }
        let color = COLORS[line_idx % COLORS.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", p.px(x), p.py(y))).collect();
        let _ =
            writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#, pts.join(" "));
        let ly = t + 16.0 + 14.0 * line_idx as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
            l + 8.0,
            l + 26.0,
            l + 30.0,
            ly + 3.0,
            s.label
        );
        line_idx += 1;
    }
}

fn document(panels: usize, body: &str) -> String {
    let w = MARGIN + panels as f64 * (PANEL_W + MARGIN);
    let h = PANEL_H + 2.0 * MARGIN;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Side-by-side east and north panels of velocity against depth.
fn depth_figure(u: Vec<Series>, v: Vec<Series>) -> String {
    let mut body = String::new();
    let y = range(&u, |p| p.1);
    let y = (y.0.min(0.0), y.1);
    for (k, (series, name)) in [(u, "east"), (v, "north")].into_iter().enumerate() {
        let panel = Panel {
            left: MARGIN + k as f64 * (PANEL_W + MARGIN),
            top: MARGIN,
            x: range(&series, |p| p.0),
            y,
            depth_down: true,
        };
        draw_panel(&mut body, &panel, &series, &format!("{name} velocity"), "velocity (m/s)", "depth (m)");
    }
    document(2, &body)
}

fn profile_series(label: &str, p: &CurrentProfileEstimate) -> (Vec<Series>, Vec<Series>) {
    let branches = match p.shape() {
        ProfileShape::Single(b) => vec![(label.to_string(), b)],
        ProfileShape::TwoProfile { descent, ascent } => {
            vec![(format!("{label} descent"), descent), (format!("{label} ascent"), ascent)]
        }
    };
    let mut us = Vec::new();
    let mut vs = Vec::new();
    for (name, b) in branches {
        let z = p.z_hat();
        us.push(Series {
            label: name.clone(),
            points: b.u.iter().zip(z).map(|(&u, &z)| (u, z)).collect(),
            scatter: false,
        });
        vs.push(Series { label: name, points: b.v.iter().zip(z).map(|(&v, &z)| (v, z)).collect(), scatter: false });
    }
    (us, vs)
}

fn interp(t_hat: &[f64], vals: &[f64], t: f64) -> f64 {
    let k = t_hat.partition_point(|&x| x <= t).clamp(1, t_hat.len() - 1);
    let (t0, t1) = (t_hat[k - 1], t_hat[k]);
    let f = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
    vals[k - 1] + f * (vals[k] - vals[k - 1])
}

/// ADCP samples shifted into the earth frame by the estimated glider
/// velocity, overlaid on the estimated profile.
pub fn traces_and_profile(dive: &DiveRecord, glider: &GliderVelocitySeries, p: &CurrentProfileEstimate) -> String {
    let a = dive.adcp();
    let (mut su, mut sv) = (Vec::with_capacity(a.len()), Vec::with_capacity(a.len()));
    for i in 0..a.len() {
        let t = a.t()[i];
        su.push((a.u_rel()[i] + interp(glider.t_hat(), glider.u_g(), t), a.z()[i]));
        sv.push((a.v_rel()[i] + interp(glider.t_hat(), glider.v_g(), t), a.z()[i]));
    }
    let (pu, pv) = profile_series("estimate", p);
    let mut u = vec![Series { label: "samples".into(), points: su, scatter: true }];
    let mut v = vec![Series { label: "samples".into(), points: sv, scatter: true }];
    u.extend(pu);
    v.extend(pv);
    depth_figure(u, v)
}

pub fn method_comparison(inv: &CurrentProfileEstimate, joint: &CurrentProfileEstimate) -> String {
    let (mut u, mut v) = profile_series("inversion", inv);
    let (ju, jv) = profile_series("joint", joint);
    u.extend(ju);
    v.extend(jv);
    depth_figure(u, v)
}

pub fn trajectory_comparison(tracks: &[(&str, &Trajectory)]) -> String {
    let series: Vec<Series> = tracks
        .iter()
        .map(|(name, tr)| Series {
            label: name.to_string(),
            points: tr.east().iter().zip(tr.north()).map(|(&e, &n)| (e, n)).collect(),
            scatter: false,
        })
        .collect();
    let panel =
        Panel { left: MARGIN, top: MARGIN, x: range(&series, |p| p.0), y: range(&series, |p| p.1), depth_down: false };
    let mut body = String::new();
    draw_panel(&mut body, &panel, &series, "horizontal track", "east (m)", "north (m)");
    document(1, &body)
}
