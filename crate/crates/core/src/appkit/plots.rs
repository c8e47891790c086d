//! Static plot emission: hand-written SVG (no plotting dependency) plus CSV
//! companions. Three kinds: bifurcation diagrams (lambda vs norm or period),
//! space-time heat maps of one orbit component, and multiplier scatter plots
//! against the unit circle.

use crate::c64;
use crate::hopf::HopfOrbit;
use crate::problem::PdeProblem;
use std::fmt::Write as _;

const W: f64 = 560.0;
const H: f64 = 420.0;
const MARGIN: f64 = 50.0;

fn svg_open(out: &mut String) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
}

fn axes(out: &mut String, xlab: &str, ylab: &str) {
    let x0 = MARGIN;
    let y0 = H - MARGIN;
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>",
        W - MARGIN
    );
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{MARGIN}\" stroke=\"black\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"13\">{xlab}</text>",
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        out,
        "<text x=\"14\" y=\"{}\" font-size=\"13\" transform=\"rotate(-90 14 {})\">{ylab}</text>",
        H / 2.0,
        H / 2.0
    );
}

struct Scale {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Scale {
    fn from_data(points: &[(f64, f64)]) -> Self {
        let mut s = Scale { xmin: f64::MAX, xmax: f64::MIN, ymin: f64::MAX, ymax: f64::MIN };
        for &(x, y) in points {
            s.xmin = s.xmin.min(x);
            s.xmax = s.xmax.max(x);
            s.ymin = s.ymin.min(y);
            s.ymax = s.ymax.max(y);
        }
        let padx = (s.xmax - s.xmin).max(1e-12) * 0.05;
        let pady = (s.ymax - s.ymin).max(1e-12) * 0.05;
        s.xmin -= padx;
        s.xmax += padx;
        s.ymin -= pady;
        s.ymax += pady;
        s
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = MARGIN + (x - self.xmin) / (self.xmax - self.xmin) * (W - 2.0 * MARGIN);
        let py = H - MARGIN - (y - self.ymin) / (self.ymax - self.ymin) * (H - 2.0 * MARGIN);
        (px, py)
    }
}

fn tick_labels(out: &mut String, s: &Scale) {
    for frac in [0.0, 0.5, 1.0] {
        let xv = s.xmin + frac * (s.xmax - s.xmin);
        let yv = s.ymin + frac * (s.ymax - s.ymin);
        let (px, _) = s.map(xv, s.ymin);
        let (_, py) = s.map(s.xmin, yv);
        let _ = writeln!(
            out,
            "<text x=\"{px:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{xv:.3}</text>",
            H - MARGIN + 16.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{py:.1}\" font-size=\"11\" text-anchor=\"end\">{yv:.3}</text>",
            MARGIN - 6.0
        );
    }
}

/// Bifurcation-diagram polyline of (lambda, value) samples, one series per
/// call; `marks` draws point markers for special points.
pub fn bd_svg(series: &[(String, Vec<(f64, f64)>)], marks: &[(f64, f64, String)], xlab: &str, ylab: &str) -> String {
    let mut all: Vec<(f64, f64)> = Vec::new();
    for (_, pts) in series {
        all.extend_from_slice(pts);
    }
    for &(x, y, _) in marks {
        all.push((x, y));
    }
    if all.is_empty() {
        all.push((0.0, 0.0));
        all.push((1.0, 1.0));
    }
    let sc = Scale::from_data(&all);
    let colors = ["black", "#c22", "#22c", "#182", "#a0a", "#c80"];
    let mut out = String::new();
    svg_open(&mut out);
    axes(&mut out, xlab, ylab);
    tick_labels(&mut out, &sc);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = colors[k % colors.len()];
        let mut path = String::new();
        for (i, &(x, y)) in pts.iter().enumerate() {
            let (px, py) = sc.map(x, y);
            let _ = write!(path, "{}{px:.2},{py:.2} ", if i == 0 { "M" } else { "L" });
        }
        let _ = writeln!(out, "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>");
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>",
            W - MARGIN - 60.0,
            MARGIN + 16.0 * (k as f64 + 1.0)
        );
    }
    for (x, y, label) in marks {
        let (px, py) = sc.map(*x, *y);
        let _ = writeln!(out, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3.5\" fill=\"#c22\"/>");
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\">{label}</text>",
            px + 5.0,
            py - 5.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn heat_color(v: f64) -> String {
    // diverging blue-white-red on [-1, 1]
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        (255.0, 255.0 * (1.0 - v), 255.0 * (1.0 - v))
    } else {
        (255.0 * (1.0 + v), 255.0 * (1.0 + v), 255.0)
    };
    format!("rgb({},{},{})", r as u8, g as u8, b as u8)
}

/// Space-time heat map of one component of an orbit; returns (svg, csv).
pub fn spacetime(prob: &dyn PdeProblem, orbit: &HopfOrbit, comp: usize) -> (String, String) {
    let nd = prob.mesh().n_dof();
    let m = orbit.m_slices();
    let mut vmax = 1e-300f64;
    for j in 0..m {
        for i in 0..nd {
            vmax = vmax.max(orbit.y[[comp * nd + i, j]].abs());
        }
    }
    let mut svg = String::new();
    svg_open(&mut svg);
    axes(&mut svg, "x index", "t index");
    let cw = (W - 2.0 * MARGIN) / nd as f64;
    let ch = (H - 2.0 * MARGIN) / m as f64;
    let mut csv = String::from("t_index,x_index,t,x,value\n");
    for j in 0..m {
        for i in 0..nd {
            let v = orbit.y[[comp * nd + i, j]];
            let px = MARGIN + i as f64 * cw;
            let py = H - MARGIN - (j as f64 + 1.0) * ch;
            let _ = writeln!(
                svg,
                "<rect x=\"{px:.2}\" y=\"{py:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                cw + 0.3,
                ch + 0.3,
                heat_color(v / vmax)
            );
            let _ = writeln!(
                csv,
                "{j},{i},{:.6e},{:.6e},{:.12e}",
                orbit.t[j],
                prob.mesh().points[i.min(prob.mesh().n_points() - 1)],
                v
            );
        }
    }
    svg.push_str("</svg>\n");
    (svg, csv)
}

/// Multiplier scatter with the unit circle and the trivial multiplier marked.
pub fn multipliers_svg(mults: &[c64]) -> String {
    let mut lim = 1.3f64;
    for g in mults {
        lim = lim.max(g.re.abs()).max(g.im.abs());
    }
    lim *= 1.1;
    let sc = Scale { xmin: -lim, xmax: lim, ymin: -lim, ymax: lim };
    let mut out = String::new();
    svg_open(&mut out);
    axes(&mut out, "Re", "Im");
    // unit circle
    let (cx, cy) = sc.map(0.0, 0.0);
    let (rx, _) = sc.map(1.0, 0.0);
    let _ = writeln!(
        out,
        "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>",
        rx - cx
    );
    // trivial multiplier marker at +1
    let (tx, ty) = sc.map(1.0, 0.0);
    let _ = writeln!(out, "<circle cx=\"{tx:.2}\" cy=\"{ty:.2}\" r=\"5\" fill=\"none\" stroke=\"#c22\"/>");
    for g in mults {
        let (px, py) = sc.map(g.re, g.im);
        let _ = writeln!(out, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"#22c\"/>");
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bd_svg_wellformed() {
        let series = vec![("b1".to_string(), vec![(0.0, 1.0), (0.5, 1.2), (1.0, 0.9)])];
        let marks = vec![(0.5, 1.2, "HP".to_string())];
        let svg = bd_svg(&series, &marks, "lambda", "norm");
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("<path"));
        assert!(svg.contains("HP"));
    }

    #[test]
    fn multiplier_plot_has_circle() {
        let svg = multipliers_svg(&[c64::new(1.0, 0.0), c64::new(-0.3, 0.4)]);
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.matches("<circle").count() >= 4);
    }
}
