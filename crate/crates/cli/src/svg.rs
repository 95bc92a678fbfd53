//! Self-contained SVG charts: per-pattern contour overlays and similarity boxplots.

use std::collections::BTreeMap;
use std::fmt::Write;

use tonecontour::centroid::SimilarityRow;
use tonecontour::stats::quantile_linear;

pub const PANEL_W: f64 = 600.0;
pub const PANEL_H: f64 = 400.0;
const MARGIN_L: f64 = 55.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 45.0;

pub fn method_color(method: &str) -> &'static str {
    match method {
        "I" => "#1f4fd1",
        "II" => "#1a9641",
        "III" => "#d7191c",
        _ => "#000000",
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    y0: f64,
    lo: f64,
    hi: f64,
    xmin: f64,
    xmax: f64,
}

impl Frame {
    fn plot_w(&self) -> f64 {
        PANEL_W - MARGIN_L - MARGIN_R
    }
    fn plot_h(&self) -> f64 {
        PANEL_H - MARGIN_T - MARGIN_B
    }
    fn x(&self, v: f64) -> f64 {
        self.x0 + MARGIN_L + (v - self.xmin) / (self.xmax - self.xmin) * self.plot_w()
    }
    fn y(&self, v: f64) -> f64 {
        self.y0 + MARGIN_T + (self.hi - v) / (self.hi - self.lo) * self.plot_h()
    }

    fn axes(&self, out: &mut String, title: &str, ylabel: &str) {
        let (l, t) = (self.x0 + MARGIN_L, self.y0 + MARGIN_T);
        let _ = writeln!(
            out,
            r##"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444" stroke-width="1"/>"##,
            self.plot_w(),
            self.plot_h()
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="18">{}</text>"##,
            self.x0 + PANEL_W / 2.0,
            self.y0 + 25.0,
            esc(title)
        );
        for i in 0..=4 {
            let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
            let y = self.y(v);
            let _ = writeln!(
                out,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{l:.1}" y2="{y:.1}" stroke="#444"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="12">{v:.2}</text>"##,
                l - 5.0,
                l - 8.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" transform="rotate(-90 {:.1} {:.1})" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"##,
            self.x0 + 14.0,
            t + self.plot_h() / 2.0,
            self.x0 + 14.0,
            t + self.plot_h() / 2.0,
            esc(ylabel)
        );
    }
}

fn polyline(out: &mut String, f: &Frame, xs: &[f64], ys: &[f64], color: &str, width: f64) {
    let pts: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| format!("{:.1},{:.1}", f.x(x), f.y(y)))
        .collect();
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"##,
        pts.join(" ")
    );
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        let c = if lo.is_finite() { lo } else { 0.0 };
        return (c - 1.0, c + 1.0);
    }
    let pad = 0.08 * (hi - lo);
    (lo - pad, hi + pad)
}

/// One panel per pattern (5 across), gold in black and each method's
/// projected prototype in its colour. `curves[pattern][method]`.
pub fn prototype_trellis(
    grid: &[f64],
    gold: &BTreeMap<String, Vec<f64>>,
    curves: &BTreeMap<String, BTreeMap<String, Vec<f64>>>,
) -> String {
    let cols = 5usize;
    let patterns: Vec<&String> = gold.keys().collect();
    let rows = patterns.len().div_ceil(cols).max(1);
    let (w, h) = (PANEL_W * cols as f64, PANEL_H * rows as f64 + 40.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"##
    );
    let _ = writeln!(out, r##"<rect width="{w}" height="{h}" fill="white"/>"##);
    // legend
    let mut lx = 20.0;
    for (name, color) in [("gold", "#000000"), ("I", method_color("I")), ("II", method_color("II")), ("III", method_color("III"))] {
        let _ = writeln!(
            out,
            r##"<line x1="{lx}" y1="20" x2="{}" y2="20" stroke="{color}" stroke-width="3"/><text x="{}" y="25" font-family="sans-serif" font-size="14">{name}</text>"##,
            lx + 30.0,
            lx + 36.0
        );
        lx += 110.0;
    }
    for (i, pat) in patterns.iter().enumerate() {
        let empty = BTreeMap::new();
        let methods = curves.get(*pat).unwrap_or(&empty);
        let (lo, hi) = range(gold[*pat].iter().copied().chain(methods.values().flatten().copied()));
        let f = Frame {
            x0: PANEL_W * (i % cols) as f64,
            y0: 40.0 + PANEL_H * (i / cols) as f64,
            lo,
            hi,
            xmin: 0.0,
            xmax: 1.0,
        };
        f.axes(&mut out, pat, "normalized pitch");
        for (m, ys) in methods {
            polyline(&mut out, &f, grid, ys, method_color(m), 2.0);
        }
        polyline(&mut out, &f, grid, &gold[*pat], "#000000", 2.5);
    }
    out.push_str("</svg>\n");
    out
}

/// Boxplots of cosine, correlation and Euclidean distance per method.
pub fn similarity_boxplots(rows: &[SimilarityRow]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    type Pick = fn(&SimilarityRow) -> f64;
    let measures: [(&str, Pick); 3] = [
        ("cosine similarity", |r| r.cosine),
        ("correlation", |r| r.pearson),
        ("Euclidean distance", |r| r.euclidean),
    ];
    let (w, h) = (PANEL_W * 3.0, PANEL_H);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"##
    );
    let _ = writeln!(out, r##"<rect width="{w}" height="{h}" fill="white"/>"##);
    for (k, (name, pick)) in measures.iter().enumerate() {
        let (lo, hi) = range(rows.iter().map(pick));
        let f = Frame {
            x0: PANEL_W * k as f64,
            y0: 0.0,
            lo,
            hi,
            xmin: 0.0,
            xmax: methods.len().max(1) as f64,
        };
        f.axes(&mut out, name, name);
        for (j, m) in methods.iter().enumerate() {
            let vals: Vec<f64> = rows.iter().filter(|r| r.method == *m).map(pick).filter(|v| v.is_finite()).collect();
            if vals.is_empty() {
                continue;
            }
            let q = |p: f64| quantile_linear(&vals, p);
            let (q1, med, q3) = (q(0.25), q(0.5), q(0.75));
            let iqr = q3 - q1;
            let lo_w = vals.iter().copied().filter(|v| *v >= q1 - 1.5 * iqr).fold(f64::INFINITY, f64::min);
            let hi_w = vals.iter().copied().filter(|v| *v <= q3 + 1.5 * iqr).fold(f64::NEG_INFINITY, f64::max);
            let cx = f.x(j as f64 + 0.5);
            let half = 0.25 * f.plot_w() / methods.len() as f64;
            let color = method_color(m);
            let _ = writeln!(
                out,
                r##"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="{color}"/>"##,
                f.y(lo_w),
                f.y(hi_w)
            );
            let _ = writeln!(
                out,
                r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}" fill-opacity="0.25" stroke="{color}"/>"##,
                cx - half,
                f.y(q3),
                2.0 * half,
                (f.y(q1) - f.y(q3)).max(0.5)
            );
            let _ = writeln!(
                out,
                r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2.5"/>"##,
                cx - half,
                f.y(med),
                cx + half,
                f.y(med)
            );
            for v in vals.iter().filter(|v| **v < lo_w || **v > hi_w) {
                let _ = writeln!(out, r##"<circle cx="{cx:.1}" cy="{:.1}" r="3" fill="none" stroke="{color}"/>"##, f.y(*v));
            }
            let _ = writeln!(
                out,
                r##"<text x="{cx:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"##,
                f.y0 + PANEL_H - 18.0,
                esc(m)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trellis_has_one_panel_per_pattern() {
        let grid: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let mut gold = BTreeMap::new();
        let mut curves = BTreeMap::new();
        for p in ["T1-T1", "T1-T2", "T4-T0"] {
            gold.insert(p.to_string(), vec![0.0, 1.0, 0.5, -0.5, -1.0]);
            curves.insert(p.to_string(), [("II".to_string(), vec![0.1, 0.9, 0.4, -0.4, -1.0])].into());
        }
        let svg = prototype_trellis(&grid, &gold, &curves);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 6);
        assert!(svg.contains(method_color("II")));
        assert!(svg.contains("width=\"3000\""));
    }

    #[test]
    fn boxplots_render_each_method() {
        let rows: Vec<SimilarityRow> = ["I", "II", "III"]
            .iter()
            .flat_map(|m| {
                (0..6).map(move |i| SimilarityRow {
                    method: m.to_string(),
                    tone_pattern: format!("p{i}"),
                    cosine: 0.1 * i as f64,
                    pearson: 0.1 * i as f64,
                    euclidean: 1.0 + 0.1 * i as f64,
                })
            })
            .collect();
        let svg = similarity_boxplots(&rows);
        assert_eq!(svg.matches("fill-opacity").count(), 9);
    }
}
