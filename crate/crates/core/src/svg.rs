//! Minimal deterministic SVG phase portraits (800×800).

use crate::dynsys::SystemDef;
use crate::error::{Error, Result};
use crate::pffield::PfGrid;
use crate::sampling::StateBox;
use nalgebra::DVector;
use std::fmt::Write;

pub const SIZE: f64 = 800.0;
const MARGIN: f64 = 40.0;

pub struct Plot {
    lo: [f64; 2],
    hi: [f64; 2],
    body: String,
}

impl Plot {
    pub fn new(region: &StateBox) -> Result<Plot> {
        if region.dim() != 2 {
            return Err(Error::InvalidInput("phase portraits need a 2-D state space".into()));
        }
        let (lo, hi) = ([region.lo[0], region.lo[1]], [region.hi[0], region.hi[1]]);
        if !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Err(Error::InvalidInput("empty plot region".into()));
        }
        Ok(Plot {
            lo,
            hi,
            body: String::new(),
        })
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let w = SIZE - 2.0 * MARGIN;
        (
            MARGIN + (x - self.lo[0]) / (self.hi[0] - self.lo[0]) * w,
            SIZE - MARGIN - (y - self.lo[1]) / (self.hi[1] - self.lo[1]) * w,
        )
    }

    /// Pixels per state unit along each axis.
    fn scale(&self) -> (f64, f64) {
        let w = SIZE - 2.0 * MARGIN;
        (w / (self.hi[0] - self.lo[0]), w / (self.hi[1] - self.lo[1]))
    }

    /// Polyline through `points`, split wherever consecutive points jump by more
    /// than half the plot width (angle wrap-around).
    pub fn polyline(&mut self, points: &[Vec<f64>], color: &str) {
        let half = [0.5 * (self.hi[0] - self.lo[0]), 0.5 * (self.hi[1] - self.lo[1])];
        let mut runs: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        let mut prev: Option<&Vec<f64>> = None;
        for p in points {
            if let Some(q) = prev {
                if (p[0] - q[0]).abs() > half[0] || (p[1] - q[1]).abs() > half[1] {
                    runs.push(Vec::new());
                }
            }
            runs.last_mut().unwrap().push(self.px(p[0], p[1]));
            prev = Some(p);
        }
        for run in runs.into_iter().filter(|r| r.len() > 1) {
            let pts: Vec<String> = run.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                self.body,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
    }

    fn segment(&mut self, a: (f64, f64), b: (f64, f64), color: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="{width}"/>"#,
            a.0, a.1, b.0, b.1
        );
    }

    /// Arrow of pixel length `len` at state `x` pointing along the state-space direction `d`.
    pub fn arrow(&mut self, x: &[f64], d: &[f64], len: f64, color: &str) {
        let (sx, sy) = self.scale();
        let (dx, dy) = (d[0] * sx, -d[1] * sy);
        let n = dx.hypot(dy);
        if n == 0.0 || !n.is_finite() {
            return;
        }
        let (ux, uy) = (dx / n, dy / n);
        let a = self.px(x[0], x[1]);
        let b = (a.0 + ux * len, a.1 + uy * len);
        self.segment(a, b, color, 1.2);
        let head = 0.3 * len;
        for s in [1.0, -1.0] {
            let (hx, hy) = (-ux * 0.87 - s * uy * 0.5, -uy * 0.87 + s * ux * 0.5);
            self.segment(b, (b.0 + hx * head, b.1 + hy * head), color, 1.2);
        }
    }

    /// Two edge rays of the cone at each state, drawn as a wedge outline.
    pub fn cone_glyphs(&mut self, sys: &SystemDef, states: &[DVector<f64>], len: f64, color: &str) {
        let (sx, sy) = self.scale();
        for x in states {
            let Ok(cone) = sys.cone_field().cone_at(x) else { continue };
            let a = self.px(x[0], x[1]);
            for g in cone.generators() {
                let (dx, dy) = (g[0] * sx, -g[1] * sy);
                let n = dx.hypot(dy);
                if n > 0.0 {
                    self.segment(a, (a.0 + dx / n * len, a.1 + dy / n * len), color, 0.8);
                }
            }
        }
    }

    pub fn pf_arrows(&mut self, grid: &PfGrid, len: f64, color: &str) {
        for v in grid.vectors() {
            self.arrow(v.x.as_slice(), v.w.as_slice(), len, color);
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="800" viewBox="0 0 800 800">"#
        );
        let _ = writeln!(s, r#"<rect x="0" y="0" width="800" height="800" fill="white"/>"#);
        let (a, b) = (self.px(self.lo[0], self.lo[1]), self.px(self.hi[0], self.hi[1]));
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            a.0,
            b.1,
            b.0 - a.0,
            a.1 - b.1
        );
        for (label, x, y, anchor) in [
            (self.lo[0], a.0, a.1 + 16.0, "start"),
            (self.hi[0], b.0, a.1 + 16.0, "end"),
            (self.lo[1], a.0 - 4.0, a.1, "end"),
            (self.hi[1], a.0 - 4.0, b.1 + 10.0, "end"),
        ] {
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{y:.2}" font-size="11" text-anchor="{anchor}">{label:.3}</text>"#
            );
        }
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}
