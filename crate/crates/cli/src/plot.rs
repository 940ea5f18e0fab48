//! Deterministic SVG rendering: covariance block heatmaps on a fixed
//! diverging scale over [−1, 1], and eigenfunction line plots.

use std::fmt::Write as _;

use mixfpca::covfit::LatentCorrelationModel;
use mixfpca::fpca::{EigenSystem, Flavor};

const CELL: f64 = 12.0;
const GAP: f64 = 14.0;
const MARGIN: f64 = 36.0;
const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// Blue (−1) through white (0) to red (+1); values outside are clamped.
pub fn diverging(v: f64) -> String {
    let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    let (r, g, b) = if v < 0.0 {
        let a = -v;
        (255.0 * (1.0 - a) + 33.0 * a, 255.0 * (1.0 - a) + 102.0 * a, 255.0 * (1.0 - a) + 172.0 * a)
    } else {
        (255.0 * (1.0 - v) + 178.0 * v, 255.0 * (1.0 - v) + 24.0 * v, 255.0 * (1.0 - v) + 43.0 * v)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// J × J panels, one per block of the projected covariance.
pub fn heatmap(model: &LatentCorrelationModel, names: &[String]) -> String {
    let m = model.grid.len();
    let jn = model.n_components;
    let panel = m as f64 * CELL;
    let size = 2.0 * MARGIN + jn as f64 * panel + (jn as f64 - 1.0) * GAP;
    let legend_h = 40.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0}" height="{:.0}" viewBox="0 0 {size:.0} {:.0}">"#,
        size + legend_h,
        size + legend_h
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for a in 0..jn {
        for b in 0..jn {
            let x0 = MARGIN + b as f64 * (panel + GAP);
            let y0 = MARGIN + a as f64 * (panel + GAP);
            let _ = writeln!(svg, r#"<g class="panel" data-row="{a}" data-col="{b}">"#);
            let block = model.block(a, b);
            for s in 0..m {
                for t in 0..m {
                    let _ = writeln!(
                        svg,
                        r#"<rect x="{:.1}" y="{:.1}" width="{CELL:.1}" height="{CELL:.1}" fill="{}"/>"#,
                        x0 + t as f64 * CELL,
                        y0 + s as f64 * CELL,
                        diverging(block[(s, t)])
                    );
                }
            }
            let _ = writeln!(
                svg,
                r##"<rect x="{x0:.1}" y="{y0:.1}" width="{panel:.1}" height="{panel:.1}" fill="none" stroke="#444"/>"##
            );
            let _ = writeln!(svg, "</g>");
        }
    }
    for j in 0..jn {
        let label = names.get(j).cloned().unwrap_or_else(|| format!("{}", j + 1));
        let c = MARGIN + j as f64 * (panel + GAP) + panel / 2.0;
        let _ = writeln!(
            svg,
            r#"<text x="{c:.1}" y="{:.1}" font-size="11" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            MARGIN - 8.0,
            escape(&label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{c:.1}" font-size="11" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 {:.1} {c:.1})">{}</text>"#,
            MARGIN - 8.0,
            MARGIN - 8.0,
            escape(&label)
        );
    }
    // colour bar
    let bar_w = size - 2.0 * MARGIN;
    let steps = 40;
    for i in 0..steps {
        let v = -1.0 + 2.0 * (i as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="10" fill="{}"/>"#,
            MARGIN + i as f64 * bar_w / steps as f64,
            size,
            bar_w / steps as f64,
            diverging(v)
        );
    }
    for (v, anchor) in [(-1.0, "start"), (0.0, "middle"), (1.0, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="{anchor}" font-family="sans-serif">{v:+.0}</text>"#,
            MARGIN + (v + 1.0) / 2.0 * bar_w,
            size + 24.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Retained eigenfunctions: one panel per component for the full flavor,
/// a single panel of shared functions for the partially separable one.
pub fn eigenfunctions(system: &EigenSystem, names: &[String]) -> String {
    let (w, h) = (260.0, 180.0);
    let panels = match system.flavor {
        Flavor::Full => system.components.len(),
        Flavor::PartiallySeparable => 1,
    };
    let n_fun = system.retained.min(system.eigenfunctions.ncols()).min(PALETTE.len());
    let m = system.grid.len();
    let width = 2.0 * MARGIN + panels as f64 * w + (panels as f64 - 1.0) * GAP;
    let height = 2.0 * MARGIN + h;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for l in 0..n_fun {
        for v in system.eigenfunctions.column(l).iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for p in 0..panels {
        let x0 = MARGIN + p as f64 * (w + GAP);
        let y0 = MARGIN;
        let _ = writeln!(svg, r#"<g class="panel" data-index="{p}">"#);
        let _ = writeln!(
            svg,
            r##"<rect x="{x0:.1}" y="{y0:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#444"/>"##
        );
        let zero = y0 + h * hi / (hi - lo);
        if zero > y0 && zero < y0 + h {
            let _ = writeln!(
                svg,
                r##"<line x1="{x0:.1}" y1="{zero:.1}" x2="{:.1}" y2="{zero:.1}" stroke="#bbb"/>"##,
                x0 + w
            );
        }
        for l in 0..n_fun {
            let col = system.eigenfunctions.column(l);
            let offset = if system.flavor == Flavor::Full { p * m } else { 0 };
            let points: Vec<String> = (0..m)
                .map(|t| {
                    let x = x0 + system.grid[t] * w;
                    let y = y0 + h * (hi - col[offset + t]) / (hi - lo);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                PALETTE[l],
                points.join(" ")
            );
        }
        let label = match system.flavor {
            Flavor::Full => names
                .get(system.components[p])
                .cloned()
                .unwrap_or_else(|| format!("{}", system.components[p] + 1)),
            Flavor::PartiallySeparable => "shared".to_string(),
        };
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            x0 + w / 2.0,
            y0 - 8.0,
            escape(&label)
        );
        let _ = writeln!(svg, "</g>");
    }
    for l in 0..n_fun {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="{}" font-family="sans-serif">φ{}</text>"#,
            MARGIN + l as f64 * 40.0,
            height - 10.0,
            PALETTE[l],
            l + 1
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
