//! Spatial tracks with a rectangular section: straight box guides,
//! cylindrical guides with a roll, and the billiard map inside them.

pub mod lyapunov;

use std::f64::consts::TAU;
use std::io::{self, Write};

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;

use crate::dynamics::DynError;
use crate::geom::{GRAZING_TOL, T_MIN};
use crate::track::{
    check_condition_h, classify_guide, ConditionH, FocalChoice, GuideReport, GuideSpec, Section, TrackError, TrackSpec,
    CLOSURE_TOL, WINDOW_REACH,
};

pub type V3 = Vector3<f64>;

/// Rolls must lie this close to a multiple of 90 degrees.
pub const ROLL_TOL: f64 = 1e-9;

/// Slack on patch boundaries, in length units.
const PATCH_SLACK: f64 = 1e-12;

/// Outgoing velocities closer than this to the wall are singular.
const OUT_TOL: f64 = 1e-10;

/// Quarter turns in a roll, or `None` if it is not a multiple of 90 degrees.
pub fn quarter_turns(roll: f64) -> Option<u8> {
    let q = roll / 90.0;
    let k = q.round();
    ((q - k).abs() <= ROLL_TOL).then(|| k.rem_euclid(4.0) as u8)
}

/// Consecutive circular guides (cyclically) whose bending planes are
/// orthogonal, i.e. relative roll of 90 degrees modulo 180.
pub fn twisted_pairs(spec: &TrackSpec) -> Vec<(usize, usize)> {
    let arcs: Vec<(usize, f64)> = spec
        .guides
        .iter()
        .enumerate()
        .filter_map(|(i, g)| match *g {
            GuideSpec::Circular { roll, .. } => Some((i, roll)),
            GuideSpec::Straight { .. } => None,
        })
        .collect();
    if arcs.len() < 2 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for k in 0..arcs.len() {
        let (i, ri) = arcs[k];
        let (j, rj) = arcs[(k + 1) % arcs.len()];
        if arcs.len() == 2 && k == 1 {
            break;
        }
        let rel = (ri - rj).rem_euclid(180.0);
        if (rel - 90.0).abs() <= ROLL_TOL {
            out.push((i, j));
        }
    }
    out
}

/// Half-widths of the section along `N` and `B`.
fn half_widths(spec: &TrackSpec) -> Result<(f64, f64), TrackError> {
    match spec.section {
        Section::Rect { a, b } if a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0 => Ok((a / 2.0, b / 2.0)),
        Section::Rect { a, b } => Err(TrackError::InvalidSection(format!("section sides must be positive, got {a} x {b}"))),
        Section::HalfWidth(_) => Err(TrackError::WrongDimension { expected: 3 }),
    }
}

/// Half-width of the section along the bending direction of a circular
/// guide with the given roll.
pub fn bending_halfwidth(spec: &TrackSpec, roll: f64) -> Result<f64, TrackError> {
    let (hn, hb) = half_widths(spec)?;
    Ok(if quarter_turns(roll).unwrap_or(0) % 2 == 0 { hn } else { hb })
}

/// Reports of the planar factors of the circular guides.
pub fn guide_reports3d(spec: &TrackSpec) -> Result<Vec<GuideReport>, TrackError> {
    spec.circular()
        .map(|(i, g)| {
            let GuideSpec::Circular { roll, .. } = *g else { unreachable!() };
            classify_guide(i, g, bending_halfwidth(spec, roll)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionH3 {
    pub satisfied: bool,
    pub distance: ConditionH,
    pub twisted: Vec<(usize, usize)>,
    pub reasons: Vec<String>,
}

/// Distance clause on every straight run, plus at least one twisted pair.
pub fn check_condition_h3(spec: &TrackSpec, reports: &[GuideReport], choice: FocalChoice) -> Result<ConditionH3, TrackError> {
    let distance = check_condition_h(spec, reports, choice)?;
    let twisted = twisted_pairs(spec);
    let mut reasons = Vec::new();
    for m in distance.margins.iter().filter(|m| !(m.margin > 0.0)) {
        reasons.push(format!(
            "straight run {} between guides {} and {} has length {} <= {} (margin {})",
            m.guide,
            m.before,
            m.after,
            m.length,
            m.tau_before + m.tau_after,
            m.margin
        ));
    }
    if distance.margins.is_empty() {
        reasons.push("no straight run between circular guides".into());
    }
    if twisted.is_empty() {
        reasons.push("no twisted guide: all bending planes are parallel or a momentum component is conserved".into());
    }
    Ok(ConditionH3 { satisfied: reasons.is_empty(), distance, twisted, reasons })
}

/// Section frame at the start of a guide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: V3,
    pub t: V3,
    pub n: V3,
    pub b: V3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GuideGeom {
    Straight { length: f64 },
    /// Centerline circle about `center` in the plane orthogonal to `axis`;
    /// `r0` points from the center to the entry point.
    Arc { center: V3, axis: V3, r0: V3, t0: V3, radius: f64, sweep: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WallKind {
    Face,
    Outer,
    Inner,
    Side,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    /// Rectangle `origin + u1 e1 + u2 e2`, `u1 ∈ [0, length]`, `|u2| ≤ half`.
    Rect { origin: V3, e1: V3, e2: V3, normal: V3, length: f64, half: f64 },
    /// Cylinder patch about `center + w axis`; chart `(ρφ, w)`, `|w| ≤ half`.
    Cylinder { center: V3, axis: V3, r0: V3, t0: V3, rho: f64, sweep: f64, half: f64, outer: bool },
    /// Annular sector in the plane `center + offset axis`; chart
    /// `(Rφ, ρ - R)` with `|ρ - R| ≤ half`.
    Sector { center: V3, axis: V3, r0: V3, t0: V3, radius: f64, offset: f64, sweep: f64, half: f64 },
}

fn unwrap_angle(raw: f64, sweep: f64) -> f64 {
    if raw < -(TAU - sweep) / 2.0 {
        raw + TAU
    } else {
        raw
    }
}

fn polar(center: &V3, axis: &V3, r0: &V3, t0: &V3, p: &V3) -> (f64, V3, f64) {
    let rel = p - center;
    let w = rel.dot(axis);
    let perp = rel - axis * w;
    let phi = perp.dot(t0).atan2(perp.dot(r0));
    (phi, perp, w)
}

impl Surface {
    pub fn inward_normal(&self, p: &V3) -> V3 {
        match self {
            Surface::Rect { normal, .. } => *normal,
            Surface::Cylinder { center, axis, outer, .. } => {
                let rel = p - center;
                let radial = (rel - axis * rel.dot(axis)).normalize();
                if *outer {
                    -radial
                } else {
                    radial
                }
            }
            Surface::Sector { axis, offset, .. } => -axis * offset.signum(),
        }
    }

    /// First intersection of the ray with the unbounded surface at which the
    /// ray moves against the inward normal.
    fn extended_hit(&self, o: &V3, d: &V3) -> Result<Option<f64>, DynError> {
        match self {
            Surface::Rect { origin, normal, .. } => plane_hit(origin, normal, o, d),
            Surface::Sector { center, axis, offset, .. } => {
                let n = -axis * offset.signum();
                plane_hit(&(center + axis * *offset), &n, o, d)
            }
            Surface::Cylinder { center, axis, rho, outer, .. } => {
                let rel = o - center;
                let op = rel - axis * rel.dot(axis);
                let dp = d - axis * d.dot(axis);
                let a = dp.norm_squared();
                if a < 1e-24 {
                    return Ok(None);
                }
                let b = op.dot(&dp);
                let c = op.norm_squared() - rho * rho;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return Ok(None);
                }
                if !outer && disc <= GRAZING_TOL * a * rho * rho {
                    let t = -b / a;
                    if t > T_MIN {
                        return Err(DynError::Grazing { t });
                    }
                    return Ok(None);
                }
                let sq = disc.sqrt();
                // outer walls are met on the way out, inner ones on the way in
                let t = if *outer { (-b + sq) / a } else { (-b - sq) / a };
                Ok((t > 0.0).then_some(t))
            }
        }
    }

    fn in_patch(&self, p: &V3) -> bool {
        let [u1, u2] = self.chart(p);
        match *self {
            Surface::Rect { length, half, .. } => {
                u1 >= -PATCH_SLACK && u1 <= length + PATCH_SLACK && u2.abs() <= half + PATCH_SLACK
            }
            Surface::Cylinder { rho, sweep, half, .. } => {
                u1 >= -PATCH_SLACK && u1 <= rho * sweep + PATCH_SLACK && u2.abs() <= half + PATCH_SLACK
            }
            Surface::Sector { radius, sweep, half, .. } => {
                u1 >= -PATCH_SLACK && u1 <= radius * sweep + PATCH_SLACK && u2.abs() <= half + PATCH_SLACK
            }
        }
    }

    pub fn chart(&self, p: &V3) -> [f64; 2] {
        match self {
            Surface::Rect { origin, e1, e2, .. } => {
                let rel = p - origin;
                [rel.dot(e1), rel.dot(e2)]
            }
            Surface::Cylinder { center, axis, r0, t0, rho, sweep, .. } => {
                let (phi, _, w) = polar(center, axis, r0, t0, p);
                [rho * unwrap_angle(phi, *sweep), w]
            }
            Surface::Sector { center, axis, r0, t0, radius, sweep, .. } => {
                let (phi, perp, _) = polar(center, axis, r0, t0, p);
                [radius * unwrap_angle(phi, *sweep), perp.norm() - radius]
            }
        }
    }

    pub fn point(&self, u: [f64; 2]) -> V3 {
        match self {
            Surface::Rect { origin, e1, e2, .. } => origin + e1 * u[0] + e2 * u[1],
            Surface::Cylinder { center, axis, r0, t0, rho, .. } => {
                let phi = u[0] / rho;
                center + axis * u[1] + (r0 * phi.cos() + t0 * phi.sin()) * *rho
            }
            Surface::Sector { center, axis, r0, t0, radius, offset, .. } => {
                let phi = u[0] / radius;
                center + axis * *offset + (r0 * phi.cos() + t0 * phi.sin()) * (radius + u[1])
            }
        }
    }

    /// Orthonormal tangent basis following the chart directions.
    pub fn basis(&self, p: &V3) -> (V3, V3) {
        match self {
            Surface::Rect { e1, e2, .. } => (*e1, *e2),
            Surface::Cylinder { center, axis, r0, t0, .. } | Surface::Sector { center, axis, r0, t0, .. } => {
                let (phi, _, _) = polar(center, axis, r0, t0, p);
                let radial = r0 * phi.cos() + t0 * phi.sin();
                let along = t0 * phi.cos() - r0 * phi.sin();
                match self {
                    Surface::Cylinder { .. } => (along, *axis),
                    _ => (along, radial),
                }
            }
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Surface::Rect { length, half, .. } => 2.0 * length * half,
            Surface::Cylinder { rho, sweep, half, .. } => 2.0 * rho * sweep * half,
            Surface::Sector { radius, sweep, half, .. } => 2.0 * sweep * radius * half,
        }
    }

    /// Point sampled uniformly with respect to area.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> V3 {
        match *self {
            Surface::Rect { length, half, .. } => self.point([rng.gen::<f64>() * length, (2.0 * rng.gen::<f64>() - 1.0) * half]),
            Surface::Cylinder { rho, sweep, half, .. } => {
                self.point([rng.gen::<f64>() * rho * sweep, (2.0 * rng.gen::<f64>() - 1.0) * half])
            }
            Surface::Sector { radius, sweep, half, .. } => {
                let (lo, hi) = ((radius - half).powi(2), (radius + half).powi(2));
                let rho = (lo + rng.gen::<f64>() * (hi - lo)).sqrt();
                self.point([rng.gen::<f64>() * radius * sweep, rho - radius])
            }
        }
    }
}

fn plane_hit(point: &V3, inward: &V3, o: &V3, d: &V3) -> Result<Option<f64>, DynError> {
    let dn = d.dot(inward);
    if dn >= 0.0 {
        return Ok(None);
    }
    let t = (point - o).dot(inward) / dn;
    Ok((t > 0.0).then_some(t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wall3 {
    pub surface: Surface,
    pub guide: usize,
    pub kind: WallKind,
}

/// Cross-section at the start of a guide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interface3 {
    pub frame: Frame,
    pub half_n: f64,
    pub half_b: f64,
}

impl Interface3 {
    fn side(&self, p: &V3) -> f64 {
        (p - self.frame.origin).dot(&self.frame.t)
    }

    pub fn crossed_by(&self, p0: &V3, p1: &V3) -> bool {
        let (a, b) = (self.side(p0), self.side(p1));
        if (a > 0.0) == (b > 0.0) {
            return false;
        }
        let x = p0 + (p1 - p0) * (a / (a - b));
        let rel = x - self.frame.origin;
        rel.dot(&self.frame.n).abs() <= self.half_n * (1.0 + 1e-9) && rel.dot(&self.frame.b).abs() <= self.half_b * (1.0 + 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track3D {
    pub spec: TrackSpec,
    pub half_n: f64,
    pub half_b: f64,
    pub frames: Vec<Frame>,
    pub guides: Vec<GuideGeom>,
    pub walls: Vec<Wall3>,
    pub guide_walls: Vec<Vec<usize>>,
    pub interfaces: Vec<Interface3>,
    window: Vec<Vec<usize>>,
}

fn rect(origin: V3, e1: V3, e2: V3, normal: V3, length: f64, half: f64) -> Surface {
    Surface::Rect { origin, e1, e2, normal, length, half }
}

/// Builds the wall list. Each circular guide bends towards `±N` or `±B` of
/// the incoming frame, selected by its roll; the frame is carried along the
/// centerline by the rotation of each arc.
pub fn build_track3d(spec: &TrackSpec) -> Result<Track3D, TrackError> {
    let (hn, hb) = half_widths(spec)?;
    spec.check_guides(0.0)?;
    let mut frame = Frame { origin: V3::zeros(), t: V3::x(), n: V3::y(), b: V3::z() };
    let mut frames = Vec::with_capacity(spec.guides.len());
    let mut guides = Vec::with_capacity(spec.guides.len());
    let mut walls = Vec::new();
    let mut guide_walls = Vec::new();
    let mut interfaces = Vec::new();
    for (i, g) in spec.guides.iter().enumerate() {
        frames.push(frame);
        interfaces.push(Interface3 { frame, half_n: hn, half_b: hb });
        let Frame { origin: p, t, n, b } = frame;
        let first = walls.len();
        match *g {
            GuideSpec::Straight { length } => {
                walls.push(Wall3 { surface: rect(p - n * hn, t, b, n, length, hb), guide: i, kind: WallKind::Face });
                walls.push(Wall3 { surface: rect(p + n * hn, t, b, -n, length, hb), guide: i, kind: WallKind::Face });
                walls.push(Wall3 { surface: rect(p - b * hb, t, n, b, length, hn), guide: i, kind: WallKind::Face });
                walls.push(Wall3 { surface: rect(p + b * hb, t, n, -b, length, hn), guide: i, kind: WallKind::Face });
                guides.push(GuideGeom::Straight { length });
                frame.origin = p + t * length;
            }
            GuideSpec::Circular { radius, angle, turn, roll } => {
                let q = quarter_turns(roll).ok_or_else(|| TrackError::InvalidGuide {
                    index: i,
                    reason: format!("roll {roll} is not a multiple of 90 degrees"),
                })?;
                let (axis_d, hd, he) = match q {
                    0 => (n, hn, hb),
                    1 => (b, hb, hn),
                    2 => (-n, hn, hb),
                    _ => (-b, hb, hn),
                };
                if radius <= hd {
                    return Err(TrackError::InvalidGuide { index: i, reason: "radius must exceed the half-width".into() });
                }
                let d = axis_d * turn.sign();
                let center = p + d * radius;
                let axis = t.cross(&d);
                let (r0, t0) = (-d, t);
                let arc = |rho: f64, outer: bool| Surface::Cylinder { center, axis, r0, t0, rho, sweep: angle, half: he, outer };
                walls.push(Wall3 { surface: arc(radius + hd, true), guide: i, kind: WallKind::Outer });
                walls.push(Wall3 { surface: arc(radius - hd, false), guide: i, kind: WallKind::Inner });
                for offset in [-he, he] {
                    walls.push(Wall3 {
                        surface: Surface::Sector { center, axis, r0, t0, radius, offset, sweep: angle, half: hd },
                        guide: i,
                        kind: WallKind::Side,
                    });
                }
                guides.push(GuideGeom::Arc { center, axis, r0, t0, radius, sweep: angle });
                let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
                frame = Frame { origin: center + rot * r0 * radius, t: rot * t, n: rot * n, b: rot * b };
            }
        }
        guide_walls.push((first..walls.len()).collect::<Vec<_>>());
    }
    let start = frames[0];
    let position = (frame.origin - start.origin).norm();
    let direction = (frame.t - start.t).norm();
    // the section must come back onto itself: N → ±N, or ±B on square sections
    let square = (hn - hb).abs() <= CLOSURE_TOL * hn.max(hb);
    let twist = [(frame.n - start.n).norm(), (frame.n + start.n).norm()]
        .into_iter()
        .chain(if square { vec![(frame.n - start.b).norm(), (frame.n + start.b).norm()] } else { vec![] })
        .fold(f64::INFINITY, f64::min);
    if position >= CLOSURE_TOL || direction >= CLOSURE_TOL || twist >= CLOSURE_TOL {
        return Err(TrackError::ClosureFail { position, direction: direction.max(twist), turning: f64::NAN });
    }
    let count = spec.guides.len();
    let window = (0..count)
        .map(|g| {
            if count <= 2 * WINDOW_REACH + 1 {
                (0..walls.len()).collect()
            } else {
                (0..=2 * WINDOW_REACH).flat_map(|k| guide_walls[(g + count + k - WINDOW_REACH) % count].iter().copied()).collect()
            }
        })
        .collect();
    Ok(Track3D { spec: spec.clone(), half_n: hn, half_b: hb, frames, guides, walls, guide_walls, interfaces, window })
}

/// Post-collision state in 3-D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision3D {
    pub wall: usize,
    pub guide: usize,
    pub q: V3,
    pub v: V3,
    /// Surface coordinates in the wall chart.
    pub u: [f64; 2],
    /// Components of `v` along the chart basis.
    pub w: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step3D {
    pub next: Collision3D,
    pub flight: f64,
}

impl Track3D {
    pub fn guide_count(&self) -> usize {
        self.guides.len()
    }

    fn window_is_global(&self) -> bool {
        self.guide_count() <= 2 * WINDOW_REACH + 1
    }

    /// State on `wall` at chart point `u` with tangential velocity `w`.
    pub fn state(&self, wall: usize, u: [f64; 2], w: [f64; 2]) -> Option<Collision3D> {
        let s = &self.walls[wall].surface;
        let q = s.point(u);
        let v = velocity(s, &q, w)?;
        Some(Collision3D { wall, guide: self.walls[wall].guide, q, v, u, w })
    }

    /// State at a point of `wall` with velocity `v` (pointing inwards).
    pub fn from_cartesian(&self, wall: usize, q: V3, v: V3) -> Collision3D {
        let s = &self.walls[wall].surface;
        let (e1, e2) = s.basis(&q);
        Collision3D { wall, guide: self.walls[wall].guide, q, v, u: s.chart(&q), w: [v.dot(&e1), v.dot(&e2)] }
    }

    /// Centerline tangent at the foot of `q` within `guide`.
    pub fn centerline_tangent(&self, guide: usize, q: &V3) -> V3 {
        match &self.guides[guide] {
            GuideGeom::Straight { .. } => self.frames[guide].t,
            GuideGeom::Arc { center, axis, r0, t0, .. } => {
                let (phi, _, _) = polar(center, axis, r0, t0, q);
                t0 * phi.cos() - r0 * phi.sin()
            }
        }
    }

    /// Velocity component along the centerline.
    pub fn v_star(&self, x: &Collision3D) -> f64 {
        x.v.dot(&self.centerline_tangent(x.guide, &x.q))
    }

    fn first_hit(&self, o: &V3, d: &V3, walls: &[usize]) -> Result<Option<(usize, f64)>, DynError> {
        let mut best: Option<(usize, f64)> = None;
        let mut fault: Option<(f64, DynError)> = None;
        for &k in walls {
            let s = &self.walls[k].surface;
            match s.extended_hit(o, d) {
                Ok(Some(t)) if t > T_MIN => {
                    if best.map_or(true, |(_, bt)| t < bt) && s.in_patch(&(o + d * t)) {
                        best = Some((k, t));
                    }
                }
                Ok(_) => {}
                Err(e) => {
                    let DynError::Grazing { t } = e else { continue };
                    if s.in_patch(&(o + d * t)) && fault.map_or(true, |(ft, _)| t < ft) {
                        fault = Some((t, e));
                    }
                }
            }
        }
        if let Some((ft, e)) = fault {
            if best.map_or(true, |(_, t)| ft <= t + 1e-9) {
                return Err(e);
            }
        }
        Ok(best)
    }

    pub fn step(&self, x: &Collision3D) -> Result<Step3D, DynError> {
        let (o, d) = (x.q, x.v);
        let n = self.guide_count();
        let mut hit = None;
        if self.window_is_global() {
            hit = self.first_hit(&o, &d, &self.window[x.guide])?;
        } else if let Some((k, t)) = self.first_hit(&o, &d, &self.window[x.guide])? {
            let p = o + d * t;
            let back = &self.interfaces[(x.guide + n - WINDOW_REACH) % n];
            let front = &self.interfaces[(x.guide + WINDOW_REACH + 1) % n];
            if !back.crossed_by(&o, &p) && !front.crossed_by(&o, &p) {
                hit = Some((k, t));
            }
        }
        let (k, t) = match hit {
            Some(h) => h,
            None if self.window_is_global() => return Err(DynError::NoHit { wall: x.wall }),
            None => {
                let all: Vec<usize> = (0..self.walls.len()).collect();
                self.first_hit(&o, &d, &all)?.ok_or(DynError::NoHit { wall: x.wall })?
            }
        };
        let p = o + d * t;
        let s = &self.walls[k].surface;
        let normal = s.inward_normal(&p);
        let v = (d - normal * (2.0 * d.dot(&normal))).normalize();
        let out = v.dot(&normal);
        if out < OUT_TOL {
            return Err(DynError::Singular { theta: out.clamp(-1.0, 1.0).asin() });
        }
        Ok(Step3D { next: self.from_cartesian(k, p, v), flight: t })
    }

    /// Collision map from chart coordinates `(u, w)` on `from` to chart
    /// coordinates on the unbounded extension of `to`.
    pub fn chart_map(&self, from: usize, x: [f64; 4], to: usize) -> Option<[f64; 4]> {
        let s = &self.walls[from].surface;
        let q = s.point([x[0], x[1]]);
        let v = velocity(s, &q, [x[2], x[3]])?;
        let target = &self.walls[to].surface;
        let t = target.extended_hit(&q, &v).ok().flatten()?;
        let p = q + v * t;
        let normal = target.inward_normal(&p);
        let r = v - normal * (2.0 * v.dot(&normal));
        let (e1, e2) = target.basis(&p);
        let u = target.chart(&p);
        Some([u[0], u[1], r.dot(&e1), r.dot(&e2)])
    }

    /// Derivative of the collision map at `x` towards `y`, by central
    /// differences with step `h` in chart coordinates.
    pub fn jacobian_fd(&self, x: &Collision3D, y: &Collision3D, h: f64) -> Option<nalgebra::Matrix4<f64>> {
        let base = [x.u[0], x.u[1], x.w[0], x.w[1]];
        let mut m = nalgebra::Matrix4::zeros();
        for k in 0..4 {
            let (mut plus, mut minus) = (base, base);
            plus[k] += h;
            minus[k] -= h;
            let a = self.chart_map(x.wall, plus, y.wall)?;
            let b = self.chart_map(x.wall, minus, y.wall)?;
            for i in 0..4 {
                m[(i, k)] = (a[i] - b[i]) / (2.0 * h);
            }
        }
        Some(m)
    }

    /// Sample from the invariant measure `cos ψ dA dω`: area-uniform point,
    /// tangential velocity uniform in the unit disc.
    pub fn sample_mu<R: Rng + ?Sized>(&self, rng: &mut R, direction: Option<f64>) -> Collision3D {
        let total: f64 = self.walls.iter().map(|w| w.surface.area()).sum();
        loop {
            let mut pick = rng.gen::<f64>() * total;
            let mut wall = self.walls.len() - 1;
            for (k, w) in self.walls.iter().enumerate() {
                if pick < w.surface.area() {
                    wall = k;
                    break;
                }
                pick -= w.surface.area();
            }
            let s = &self.walls[wall].surface;
            let q = s.sample(rng);
            let w = [2.0 * rng.gen::<f64>() - 1.0, 2.0 * rng.gen::<f64>() - 1.0];
            if w[0] * w[0] + w[1] * w[1] >= 1.0 - 1e-12 {
                continue;
            }
            let Some(v) = velocity(s, &q, w) else { continue };
            let x = Collision3D { wall, guide: self.walls[wall].guide, q, v, u: s.chart(&q), w };
            let vs = self.v_star(&x);
            if vs == 0.0 || direction.is_some_and(|sgn| vs * sgn <= 0.0) {
                continue;
            }
            return x;
        }
    }

    /// Roll (degrees) of the guide containing `x`, zero on straights.
    pub fn roll_of(&self, guide: usize) -> f64 {
        match self.spec.guides[guide] {
            GuideSpec::Circular { roll, .. } => roll,
            GuideSpec::Straight { .. } => 0.0,
        }
    }
}

fn velocity(s: &Surface, q: &V3, w: [f64; 2]) -> Option<V3> {
    let nn = 1.0 - w[0] * w[0] - w[1] * w[1];
    if nn <= 0.0 {
        return None;
    }
    let (e1, e2) = s.basis(q);
    Some(e1 * w[0] + e2 * w[1] + s.inward_normal(q) * nn.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord3 {
    pub state: Collision3D,
    pub flight: f64,
    pub v_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitTrace3 {
    pub records: Vec<TraceRecord3>,
    pub termination: Option<DynError>,
}

impl OrbitTrace3 {
    pub fn run(track: &Track3D, x0: &Collision3D, steps: usize) -> Self {
        let mut records = Vec::with_capacity(steps + 1);
        records.push(TraceRecord3 { state: *x0, flight: 0.0, v_star: track.v_star(x0) });
        let mut termination = None;
        let mut cur = *x0;
        for _ in 0..steps {
            match track.step(&cur) {
                Ok(Step3D { next, flight }) => {
                    records.push(TraceRecord3 { state: next, flight, v_star: track.v_star(&next) });
                    cur = next;
                }
                Err(e) => {
                    termination = Some(e);
                    break;
                }
            }
        }
        Self { records, termination }
    }

    /// Planar columns (with `s = u₁` and `theta` the angle between `v` and
    /// the first chart direction), followed by `z,vz,roll_frame`.
    pub fn write_csv<W: Write>(&self, track: &Track3D, mut out: W) -> io::Result<()> {
        writeln!(out, "step,wall,s,theta,x,y,t_flight,vstar,z,vz,roll_frame")?;
        for (i, r) in self.records.iter().enumerate() {
            let x = &r.state;
            let theta = x.w[0].clamp(-1.0, 1.0).acos();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                i,
                x.wall,
                x.u[0],
                theta,
                x.q.x,
                x.q.y,
                r.flight,
                r.v_star,
                x.q.z,
                x.v.z,
                track.roll_of(x.guide)
            )?;
        }
        match &self.termination {
            Some(e) => writeln!(out, "# termination: {}", e.reason()),
            None => writeln!(out, "# termination: none"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::Turn;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn hexagon(rolls: [f64; 2], length: f64) -> TrackSpec {
        let mut guides = Vec::new();
        for k in 0..6 {
            guides.push(GuideSpec::arc(0.7, FRAC_PI_2, Turn::Left).with_roll(rolls[k % 2]));
            guides.push(GuideSpec::straight(length));
        }
        TrackSpec::spatial(0.6, 0.6, guides)
    }

    #[test]
    fn quarter_turn_rounding() {
        assert_eq!(quarter_turns(90.0), Some(1));
        assert_eq!(quarter_turns(-90.0), Some(3));
        assert_eq!(quarter_turns(360.0 + 1e-12), Some(0));
        assert_eq!(quarter_turns(45.0), None);
    }

    #[test]
    fn hexagon_closes_with_six_twisted_pairs() {
        let spec = hexagon([0.0, 90.0], 7.0);
        let t = build_track3d(&spec).unwrap();
        assert_eq!(t.walls.len(), 48);
        assert_eq!(twisted_pairs(&spec).len(), 6);
    }

    #[test]
    fn unrolled_hexagon_does_not_close() {
        assert!(matches!(build_track3d(&hexagon([0.0, 0.0], 7.0)), Err(TrackError::ClosureFail { .. })));
    }

    #[test]
    fn forty_five_degrees_is_not_twisted() {
        let spec = TrackSpec::spatial(
            0.6,
            0.6,
            vec![
                GuideSpec::straight(7.0),
                GuideSpec::arc(1.0, PI, Turn::Left),
                GuideSpec::straight(7.0),
                GuideSpec::arc(1.0, PI, Turn::Left).with_roll(45.0),
            ],
        );
        assert!(twisted_pairs(&spec).is_empty());
        assert!(matches!(build_track3d(&spec), Err(TrackError::InvalidGuide { index: 3, .. })));
    }

    #[test]
    fn chart_round_trip() {
        let t = build_track3d(&hexagon([0.0, 90.0], 7.0)).unwrap();
        for (k, w) in t.walls.iter().enumerate() {
            let u = [0.3, 0.05];
            let p = w.surface.point(u);
            let back = w.surface.chart(&p);
            assert!((back[0] - u[0]).abs() < 1e-12 && (back[1] - u[1]).abs() < 1e-12, "wall {k}");
            let (e1, e2) = w.surface.basis(&p);
            let n = w.surface.inward_normal(&p);
            assert!(e1.dot(&e2).abs() < 1e-12 && e1.dot(&n).abs() < 1e-12 && e2.dot(&n).abs() < 1e-12);
        }
    }
}
