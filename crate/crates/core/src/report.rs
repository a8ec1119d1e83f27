//! CSV tables and SVG figures for the analysis artifacts.
//!
//! | file | columns |
//! |------|---------|
//! | `fallprob.csv` | `controller,lo,hi,trials,falls,probability` (empty probability for an empty bin) |
//! | `heatmap.csv` | `controller,iy,ivy,y,vy,count,visits,visited,energy_sign` |
//! | `energy_series.csv` | `controller,t,n,mean,q25,q75` |
//! | `energy_steps.csv` | `controller,step,n,min,q1,median,q3,max` |
//! | `efficiency.csv` | `controller,efficiency_percent,pushes_scored,below_floor,fell_before_next_step,late_efficiency_percent,late_pushes_scored` |

use std::fmt::Write as _;

use serde::Serialize;

use crate::analysis::{EnergyStats, FallProbabilityTable, PhaseSpaceHeatmap};
use crate::lipm::{orbital_energy, PendulumConstant};

fn to_csv<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

#[derive(Serialize)]
struct FallRow<'a> {
    controller: &'a str,
    lo: f64,
    hi: f64,
    trials: usize,
    falls: usize,
    probability: Option<f64>,
}

pub fn fallprob_csv(tables: &[FallProbabilityTable]) -> Result<Vec<u8>, csv::Error> {
    to_csv(tables.iter().flat_map(|t| {
        t.bins.iter().map(move |b| FallRow {
            controller: t.controller.as_str(),
            lo: b.lo,
            hi: b.hi,
            trials: b.trials,
            falls: b.falls,
            probability: b.probability,
        })
    }))
}

#[derive(Serialize)]
struct HeatRow<'a> {
    controller: &'a str,
    iy: usize,
    ivy: usize,
    y: f64,
    vy: f64,
    count: u64,
    visits: u64,
    visited: bool,
    energy_sign: i8,
}

fn energy_sign(map: &PhaseSpaceHeatmap, iy: usize, ivy: usize) -> i8 {
    let Ok(c) = PendulumConstant::new(map.zero_energy_slope) else {
        return 0;
    };
    let e = orbital_energy(map.spec.cell_center(iy, ivy), c);
    if e > 0.0 {
        1
    } else if e < 0.0 {
        -1
    } else {
        0
    }
}

pub fn heatmap_csv(maps: &[PhaseSpaceHeatmap]) -> Result<Vec<u8>, csv::Error> {
    to_csv(maps.iter().flat_map(|m| {
        (0..m.spec.ny).flat_map(move |iy| {
            (0..m.spec.nvy).map(move |ivy| {
                let s = m.spec.cell_center(iy, ivy);
                HeatRow {
                    controller: m.controller.as_str(),
                    iy,
                    ivy,
                    y: s.y,
                    vy: s.vy,
                    count: m.count(iy, ivy),
                    visits: m.visits[iy * m.spec.nvy + ivy],
                    visited: m.visited(iy, ivy),
                    energy_sign: energy_sign(m, iy, ivy),
                }
            })
        })
    }))
}

#[derive(Serialize)]
struct SeriesRow<'a> {
    controller: &'a str,
    t: f64,
    n: usize,
    mean: f64,
    q25: f64,
    q75: f64,
}

#[derive(Serialize)]
struct StepRow<'a> {
    controller: &'a str,
    step: u32,
    n: usize,
    min: f64,
    q1: f64,
    median: f64,
    q3: f64,
    max: f64,
}

#[derive(Serialize)]
struct EfficiencyRow<'a> {
    controller: &'a str,
    efficiency_percent: Option<f64>,
    pushes_scored: usize,
    below_floor: usize,
    fell_before_next_step: usize,
    late_efficiency_percent: Option<f64>,
    late_pushes_scored: usize,
}

pub fn energy_series_csv(stats: &[EnergyStats]) -> Result<Vec<u8>, csv::Error> {
    to_csv(stats.iter().flat_map(|s| {
        s.series.iter().map(move |p| SeriesRow {
            controller: s.controller.as_str(),
            t: p.t,
            n: p.n,
            mean: p.mean,
            q25: p.q25,
            q75: p.q75,
        })
    }))
}

pub fn energy_steps_csv(stats: &[EnergyStats]) -> Result<Vec<u8>, csv::Error> {
    to_csv(stats.iter().flat_map(|s| {
        s.per_step.iter().map(move |b| StepRow {
            controller: s.controller.as_str(),
            step: b.step,
            n: b.n,
            min: b.min,
            q1: b.q1,
            median: b.median,
            q3: b.q3,
            max: b.max,
        })
    }))
}

pub fn efficiency_csv(stats: &[EnergyStats]) -> Result<Vec<u8>, csv::Error> {
    to_csv(stats.iter().map(|s| EfficiencyRow {
        controller: s.controller.as_str(),
        efficiency_percent: s.efficiency.percent,
        pushes_scored: s.efficiency.pushes_scored,
        below_floor: s.efficiency.below_floor,
        fell_before_next_step: s.efficiency.fell_before_next_step,
        late_efficiency_percent: s.efficiency_late.percent,
        late_pushes_scored: s.efficiency_late.pushes_scored,
    }))
}

const PALETTE: [&str; 4] = ["#d62728", "#ff7f0e", "#2ca02c", "#1f77b4"];
const FONT: &str = r#"font-family="sans-serif" font-size="11""#;

/// Linear map from data to pixel coordinates of one panel.
#[derive(Clone, Copy)]
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (x0, y0, w, h) = (self.x0, self.y0, self.w, self.h);
        let _ = writeln!(
            out,
            r##"<rect x="{x0:.1}" y="{y0:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#333"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" {FONT} font-weight="bold">{}</text>"#,
            x0 + w / 2.0,
            y0 - 8.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" {FONT}>{}</text>"#,
            x0 + w / 2.0,
            y0 + h + 32.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text transform="translate({:.1},{:.1}) rotate(-90)" text-anchor="middle" {FONT}>{}</text>"#,
            x0 - 40.0,
            y0 + h / 2.0,
            escape(ylabel)
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = self.xr.0 + f * (self.xr.1 - self.xr.0);
            let yv = self.yr.0 + f * (self.yr.1 - self.yr.0);
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" {FONT}>{}</text>"#,
                self.px(xv),
                y0 + h + 14.0,
                tick(xv)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" {FONT}>{}</text>"#,
                x0 - 4.0,
                self.py(yv) + 4.0,
                tick(yv)
            );
        }
    }

    fn clip(&self, out: &mut String, id: &str) {
        let _ = writeln!(
            out,
            r#"<clipPath id="{id}"><rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}"/></clipPath>"#,
            self.x0, self.y0, self.w, self.h
        );
    }
}

fn tick(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn polyline(out: &mut String, f: &Frame, pts: impl Iterator<Item = (f64, f64)>, color: &str, extra: &str) {
    let pts: Vec<String> = pts.map(|(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
    if pts.len() < 2 {
        return;
    }
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5" {extra}/>"#,
        pts.join(" ")
    );
}

fn legend(out: &mut String, x: f64, y: f64, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let yy = y + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="{}" stroke-width="2"/><text x="{:.1}" y="{:.1}" {FONT}>{}</text>"#,
            x + 18.0,
            PALETTE[i % PALETTE.len()],
            x + 22.0,
            yy + 4.0,
            escape(name)
        );
    }
}

/// Fall probability against impulse magnitude, one curve per controller.
pub fn fallprob_svg(tables: &[FallProbabilityTable]) -> String {
    let xmax = tables
        .iter()
        .flat_map(|t| t.bins.last().map(|b| b.hi))
        .fold(1.0f64, f64::max);
    let f = Frame {
        x0: 60.0,
        y0: 30.0,
        w: 420.0,
        h: 260.0,
        xr: (0.0, xmax),
        yr: (0.0, 1.0),
    };
    let mut out = svg_open(640.0, 340.0);
    f.axes(&mut out, "Fall probability", "|impulse| (N s)", "P(fall)");
    for (i, t) in tables.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts = t
            .bins
            .iter()
            .filter_map(|b| b.probability.map(|p| (0.5 * (b.lo + b.hi), p)));
        polyline(&mut out, &f, pts, color, "");
    }
    let names: Vec<&str> = tables.iter().map(|t| t.controller.as_str()).collect();
    legend(&mut out, 495.0, 40.0, &names);
    out.push_str("</svg>\n");
    out
}

/// One panel per heat map: fall-path counts on a log scale, unvisited cells
/// greyed, zero-energy lines overlaid.
pub fn heatmap_svg(maps: &[PhaseSpaceHeatmap]) -> String {
    let (pw, ph, gap) = (240.0, 240.0, 80.0);
    let width = 60.0 + maps.len() as f64 * (pw + gap);
    let mut out = svg_open(width.max(320.0), ph + 90.0);
    for (k, m) in maps.iter().enumerate() {
        let f = Frame {
            x0: 60.0 + k as f64 * (pw + gap),
            y0: 30.0,
            w: pw,
            h: ph,
            xr: m.spec.y_bounds,
            yr: m.spec.vy_bounds,
        };
        let max = m.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let cw = pw / m.spec.ny as f64;
        let ch = ph / m.spec.nvy as f64;
        for iy in 0..m.spec.ny {
            for ivy in 0..m.spec.nvy {
                let fill = if !m.visited(iy, ivy) {
                    "#e0e0e0".to_owned()
                } else {
                    let v = (1.0 + m.count(iy, ivy) as f64).ln() / (1.0 + max).ln();
                    let g = (255.0 * (1.0 - v)).round() as u8;
                    format!("rgb(255,{g},{g})")
                };
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    f.x0 + iy as f64 * cw,
                    f.y0 + ph - (ivy + 1) as f64 * ch,
                    cw + 0.05,
                    ch + 0.05
                );
            }
        }
        let id = format!("panel{k}");
        f.clip(&mut out, &id);
        let c = m.zero_energy_slope;
        let (lo, hi) = m.spec.y_bounds;
        for s in [c, -c] {
            polyline(
                &mut out,
                &f,
                [(lo, s * lo), (hi, s * hi)].into_iter(),
                "#000",
                &format!(r#"stroke-dasharray="4 3" clip-path="url(#{id})""#),
            );
        }
        let title = format!("{} ({} falls)", m.controller.as_str(), m.falls);
        f.axes(&mut out, &title, "y (m)", "vy (m/s)");
    }
    out.push_str("</svg>\n");
    out
}

/// Push-aligned excess energy (mean and interquartile band) and per-step
/// box plots, one column per controller.
pub fn energy_svg(stats: &[EnergyStats]) -> String {
    let (pw, ph, gap) = (260.0, 200.0, 80.0);
    let width = 60.0 + stats.len() as f64 * (pw + gap);
    let mut out = svg_open(width.max(320.0), 2.0 * ph + 150.0);
    let ymax = stats
        .iter()
        .flat_map(|s| s.series.iter().map(|p| p.q75))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let bmax = stats
        .iter()
        .flat_map(|s| s.per_step.iter().map(|b| b.q3))
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.5;
    for (k, s) in stats.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let x0 = 60.0 + k as f64 * (pw + gap);
        let (t0, t1) = match (s.series.first(), s.series.last()) {
            (Some(a), Some(b)) if b.t > a.t => (a.t, b.t),
            _ => (0.0, 1.0),
        };
        let top = Frame {
            x0,
            y0: 30.0,
            w: pw,
            h: ph,
            xr: (t0, t1),
            yr: (0.0, ymax),
        };
        let band: Vec<String> = s
            .series
            .iter()
            .map(|p| (p.t, p.q75))
            .chain(s.series.iter().rev().map(|p| (p.t, p.q25)))
            .map(|(t, v)| format!("{:.2},{:.2}", top.px(t), top.py(v)))
            .collect();
        if !band.is_empty() {
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.25" stroke="none"/>"#,
                band.join(" ")
            );
        }
        polyline(&mut out, &top, s.series.iter().map(|p| (p.t, p.mean)), color, "");
        let title = format!("{}: push-aligned", s.controller.as_str());
        top.axes(&mut out, &title, "t - t_push (s)", "|E - E_nom|");

        let n = s.per_step.len().max(1) as f64;
        let bottom = Frame {
            x0,
            y0: ph + 110.0,
            w: pw,
            h: ph,
            xr: (-0.5, n - 0.5),
            yr: (0.0, bmax),
        };
        let bw = 0.6 * pw / n;
        for (i, b) in s.per_step.iter().enumerate() {
            let cx = bottom.px(i as f64);
            let clampy = |v: f64| bottom.py(v.min(bmax));
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{color}"/>"#,
                clampy(b.min),
                clampy(b.max)
            );
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{bw:.2}" height="{:.2}" fill="white" stroke="{color}"/>"#,
                cx - bw / 2.0,
                clampy(b.q3),
                (clampy(b.q1) - clampy(b.q3)).max(0.0)
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
                cx - bw / 2.0,
                clampy(b.median),
                cx + bw / 2.0,
                clampy(b.median)
            );
        }
        let eff = s
            .efficiency
            .percent
            .map_or_else(|| "n/a".to_owned(), |p| format!("{p:.1}%"));
        let title = if s.per_step.is_empty() {
            format!("{}: no step alignment", s.controller.as_str())
        } else {
            format!("{}: per step, efficiency {eff}", s.controller.as_str())
        };
        bottom.axes(&mut out, &title, "steps after push", "|E - E_nom|");
    }
    out.push_str("</svg>\n");
    out
}
