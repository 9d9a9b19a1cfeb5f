//! Minimal SVG 1.1 output: closed paths and polylines in a fixed viewBox.

use std::fmt::Write as _;

use trackbill::track::{Loop, TrackGeometry};
use trackbill::track3d::{Surface, Track3D};

/// Points per unit of arclength when sampling curved walls.
const DENSITY: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn of<'a>(points: impl IntoIterator<Item = &'a [f64; 2]>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Bounds { min: first, max: first };
        for p in it {
            for k in 0..2 {
                b.min[k] = b.min[k].min(p[k]);
                b.max[k] = b.max[k].max(p[k]);
            }
        }
        Some(b)
    }

    /// Grows each side by 5% of the larger extent.
    pub fn padded(&self) -> Self {
        let span = (self.max[0] - self.min[0]).max(self.max[1] - self.min[1]).max(1e-9);
        let pad = 0.05 * span;
        Bounds { min: [self.min[0] - pad, self.min[1] - pad], max: [self.max[0] + pad, self.max[1] + pad] }
    }
}

fn samples(length: f64) -> usize {
    ((length * DENSITY).ceil() as usize).clamp(1, 4096)
}

/// Both boundary loops of a planar domain, outer first.
pub fn loops(geometry: &TrackGeometry) -> Vec<Vec<[f64; 2]>> {
    [Loop::Outer, Loop::Inner]
        .into_iter()
        .map(|b| {
            let mut walls: Vec<_> = geometry.walls.iter().filter(|w| w.boundary == b).collect();
            walls.sort_by(|a, c| a.s_offset.total_cmp(&c.s_offset));
            let mut pts = Vec::new();
            for w in walls {
                let n = if w.curvature == 0.0 { 1 } else { samples(w.length) };
                for k in 0..n {
                    let p = w.point_at(w.length * k as f64 / n as f64);
                    pts.push([p.x, p.y]);
                }
            }
            pts
        })
        .filter(|p| !p.is_empty())
        .collect()
}

/// Chart-boundary outline of every wall of a spatial track, projected on
/// the `xy` plane.
pub fn outlines3d(track: &Track3D) -> Vec<Vec<[f64; 2]>> {
    track
        .walls
        .iter()
        .map(|w| {
            let (len, half) = match w.surface {
                Surface::Rect { length, half, .. } => (length, half),
                Surface::Cylinder { rho, sweep, half, .. } => (rho * sweep.abs(), half),
                Surface::Sector { radius, sweep, half, .. } => (radius * sweep.abs(), half),
            };
            let n = samples(len);
            let mut pts = Vec::with_capacity(2 * n + 2);
            for k in 0..=n {
                pts.push([len * k as f64 / n as f64, -half]);
            }
            for k in (0..=n).rev() {
                pts.push([len * k as f64 / n as f64, half]);
            }
            pts.into_iter()
                .map(|u| {
                    let p = w.surface.point(u);
                    [p.x, p.y]
                })
                .collect()
        })
        .collect()
}

fn coords(out: &mut String, pts: &[[f64; 2]], flip: f64) {
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{:.6},{:.6}", p[0], flip * p[1]);
    }
}

/// Document with closed `loops` and an open `trace`; `y` points up.
pub fn render(bounds: Bounds, loops: &[Vec<[f64; 2]>], trace: &[[f64; 2]], stroke: f64) -> String {
    let b = bounds.padded();
    let (w, h) = (b.max[0] - b.min[0], b.max[1] - b.min[1]);
    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"{:.6} {:.6} {:.6} {:.6}\">",
        b.min[0], -b.max[1], w, h
    );
    for l in loops {
        out.push_str("<path fill=\"none\" stroke=\"black\" stroke-width=\"");
        let _ = write!(out, "{:.6}\" d=\"M ", stroke);
        coords(&mut out, l, -1.0);
        out.push_str(" Z\"/>\n");
    }
    if !trace.is_empty() {
        let _ = write!(out, "<polyline fill=\"none\" stroke=\"red\" stroke-width=\"{:.6}\" points=\"", stroke * 0.5);
        coords(&mut out, trace, -1.0);
        out.push_str("\"/>\n");
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter of `(s, cos θ)` points as a single path of dots.
pub fn render_section(loop_lengths: [f64; 2], points: &[(usize, f64, f64)]) -> String {
    let width = loop_lengths[0] + loop_lengths[1];
    let b = Bounds { min: [0.0, -1.0], max: [width, 1.0] }.padded();
    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"{:.6} {:.6} {:.6} {:.6}\" preserveAspectRatio=\"none\">",
        b.min[0],
        -b.max[1],
        b.max[0] - b.min[0],
        b.max[1] - b.min[1]
    );
    let r = 0.002 * width.max(1.0);
    let _ = writeln!(
        out,
        "<path fill=\"none\" stroke=\"gray\" stroke-width=\"{r:.6}\" d=\"M {:.6},0 L {:.6},0\"/>",
        loop_lengths[0], loop_lengths[0]
    );
    out.push_str("<path fill=\"none\" stroke=\"black\" stroke-linecap=\"round\" stroke-width=\"");
    let _ = write!(out, "{:.6}\" d=\"", 2.0 * r);
    for (i, &(lp, s, c)) in points.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let x = if lp == 0 { s } else { loop_lengths[0] + s };
        let _ = write!(out, "M {x:.6},{:.6} h 0", -c);
    }
    out.push_str("\"/>\n</svg>\n");
    out
}
