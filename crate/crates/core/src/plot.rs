//! Plot data and minimal SVG rendering for sensitivity results.
//!
//! Each method contributes three polylines over the sensitivity parameter:
//! the point estimate and the two confidence limits.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::Result;
use crate::estimation::{sig6, Estimates};
use crate::sensitivity::{tate_point, EffectScale, SensitivityResult, TateFormula};

pub const PLOT_HEADER: &str = "method,line,ev_value,value";

/// Long-format plot data: one row per vertex of each polyline.
pub fn plot_data_csv(results: &[SensitivityResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{PLOT_HEADER}");
    for r in results {
        let m = r.method.label();
        for (line, pick) in LINES {
            for row in &r.rows {
                let _ = writeln!(out, "{m},{line},{},{}", sig6(row.ev), sig6(pick(row)));
            }
        }
    }
    out
}

type Pick = fn(&crate::sensitivity::SensRow) -> f64;

const LINES: [(&str, Pick); 3] = [("estimate", |r| r.point), ("lower", |r| r.lo), ("upper", |r| r.hi)];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 4] = ["#1f4e9c", "#c0392b", "#2e7d32", "#6a1b9a"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Frame {
        let pad = |(lo, hi): (f64, f64), frac: f64| {
            if hi > lo {
                let d = (hi - lo) * frac;
                (lo - d, hi + d)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Frame {
            x: pad(x, 0.0),
            y: pad(y, 0.05),
        }
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

/// About five round tick values spanning `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let start = (lo / step - 1e-9).ceil() as i64;
    let end = (hi / step + 1e-9).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, f: &Frame, title: &str, x_label: &str, y_label: &str) {
    let (x0, x1) = (f.px(f.x.0), f.px(f.x.1));
    let (y0, y1) = (f.py(f.y.0), f.py(f.y.1));
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (x0 + x1) / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r##"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="#333"/>"##
    );
    for t in ticks(f.y.0, f.y.1) {
        let y = f.py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="#333"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"##,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
            sig6(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{0}" text-anchor="middle" font-size="12" transform="rotate(-90 18 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn x_ticks(out: &mut String, f: &Frame, values: &[f64]) {
    let y0 = f.py(f.y.0);
    for &t in values {
        let x = f.px(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="#333"/><text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"##,
            y0 + 5.0,
            y0 + 18.0,
            sig6(t)
        );
    }
}

fn polyline(out: &mut String, f: &Frame, pts: &[(f64, f64)], color: &str, dashed: bool) {
    let coords: Vec<String> = pts
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
        .collect();
    let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
        coords.join(" ")
    );
}

/// Overlaid sensitivity curves: solid estimates, dashed confidence limits.
pub fn sensitivity_svg(results: &[SensitivityResult], title: &str, x_label: &str, y_label: &str) -> String {
    let all = results.iter().flat_map(|r| &r.rows);
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for row in all {
        xmin = xmin.min(row.ev);
        xmax = xmax.max(row.ev);
        for v in [row.lo, row.hi, row.point] {
            if v.is_finite() {
                ymin = ymin.min(v);
                ymax = ymax.max(v);
            }
        }
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    let f = Frame::new((xmin, xmax), (ymin, ymax));
    let mut out = svg_open();
    axes(&mut out, &f, title, x_label, y_label);
    x_ticks(&mut out, &f, &ticks(f.x.0, f.x.1));
    for (k, r) in results.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        for (line, pick) in LINES {
            let pts: Vec<(f64, f64)> = r.rows.iter().map(|row| (row.ev, pick(row))).collect();
            polyline(&mut out, &f, &pts, color, line != "estimate");
        }
        let ly = TOP + 20.0 + 22.0 * k as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-size="12">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            method_name(r)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn method_name(r: &SensitivityResult) -> &'static str {
    match r.method {
        crate::sensitivity::MethodKind::Method1 => "Method 1",
        crate::sensitivity::MethodKind::Method2 => "Method 2",
    }
}

fn svg_open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Treatment effect within one subgroup.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEffect {
    pub label: String,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Evaluates the effect formula at each group's quantity values (for
/// cross-classified cells, 0/1 indicators of that cell).
pub fn group_effects<E: Estimates + ?Sized>(
    model: &E,
    formula: &TateFormula,
    groups: &[(String, BTreeMap<String, f64>)],
    scale: EffectScale,
    level: f64,
) -> Result<Vec<GroupEffect>> {
    groups
        .iter()
        .map(|(label, values)| {
            let r = tate_point(model, formula, values, scale, level)?;
            Ok(GroupEffect {
                label: label.clone(),
                estimate: r.estimate,
                lo: r.ci.0,
                hi: r.ci.1,
            })
        })
        .collect()
}

/// Point estimates with interval bars, one column per group.
pub fn group_effects_svg(groups: &[GroupEffect], title: &str, y_label: &str) -> String {
    let lo = groups.iter().map(|g| g.lo.min(0.0)).fold(f64::INFINITY, f64::min);
    let hi = groups.iter().map(|g| g.hi.max(0.0)).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let n = groups.len().max(1) as f64;
    let f = Frame::new((0.0, n), (lo, hi));
    let mut out = svg_open();
    axes(&mut out, &f, title, "", y_label);
    let zero = f.py(0.0);
    let _ = writeln!(
        out,
        r##"<line x1="{:.1}" y1="{zero:.1}" x2="{:.1}" y2="{zero:.1}" stroke="#999" stroke-dasharray="3 3"/>"##,
        f.px(0.0),
        f.px(n)
    );
    for (k, g) in groups.iter().enumerate() {
        let x = f.px(k as f64 + 0.5);
        let color = COLORS[0];
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/>"#,
            f.py(g.lo),
            f.py(g.hi)
        );
        for v in [g.lo, g.hi] {
            let _ = writeln!(
                out,
                r#"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="{color}" stroke-width="2"/>"#,
                x - 6.0,
                f.py(v),
                x + 6.0
            );
        }
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.1}" cy="{:.1}" r="4" fill="{color}"/><text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
            f.py(g.estimate),
            f.py(f.y.0) + 18.0,
            escape(&g.label)
        );
    }
    out.push_str("</svg>\n");
    out
}
