//! The billiard map on a planar track: collision states, orbit iteration,
//! time reversal, `v*`, and first returns to entering collisions.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{self, Write};

use rand::Rng;
use thiserror::Error;

use crate::geom::{reflect, GeomError, Ray, T_MIN};
use crate::tangent::{collision_jacobian, Mat2};
use crate::track::{Loop, TrackGeometry};

type Vec2 = crate::geom::Vec2<f64>;

/// Collision angles closer than this to `0` or `π` are tangential.
pub const TANGENT_TOL: f64 = 1e-10;

/// Half-width of the band around `π/2` classified as `N`.
pub const N_BAND: f64 = 1e-12;

/// Default cap on the length of a first-return excursion.
pub const FIRST_RETURN_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DynError {
    #[error("SINGULAR: tangential collision (θ = {theta})")]
    Singular { theta: f64 },
    #[error("GRAZING: tangential hit of a circular wall at t = {t}")]
    Grazing { t: f64 },
    #[error("ENDPOINT: hit at a segment endpoint at t = {t}")]
    Endpoint { t: f64 },
    #[error("NO_HIT: ray left the domain from wall {wall}")]
    NoHit { wall: usize },
    #[error("STEP_LIMIT: no return within {steps} collisions")]
    StepLimit { steps: usize },
    #[error("state is not an entering collision of a circular guide")]
    NotEntering,
}

impl DynError {
    pub fn reason(&self) -> &'static str {
        match self {
            DynError::Singular { .. } => "singular",
            DynError::Grazing { .. } => "grazing",
            DynError::Endpoint { .. } => "endpoint",
            DynError::NoHit { .. } => "no-hit",
            DynError::StepLimit { .. } => "step-limit",
            DynError::NotEntering => "not-entering",
        }
    }
}

impl From<GeomError> for DynError {
    fn from(e: GeomError) -> Self {
        match e {
            GeomError::Grazing { t } => DynError::Grazing { t },
            GeomError::Endpoint { t } => DynError::Endpoint { t },
            // rays are built from unit velocities and validated walls
            _ => DynError::NoHit { wall: usize::MAX },
        }
    }
}

/// Post-collision phase point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionState {
    pub wall: usize,
    pub guide: usize,
    /// Arclength on the wall's loop.
    pub s: f64,
    /// Angle between `v` and the oriented tangent, in `[0, π]`.
    pub theta: f64,
    pub q: Vec2,
    pub v: Vec2,
}

impl CollisionState {
    /// Collision on `wall` at local arclength `u` with angle `theta`.
    pub fn on_wall(geometry: &TrackGeometry, wall: usize, u: f64, theta: f64) -> Self {
        let w = &geometry.walls[wall];
        let q = w.point_at(u);
        let t = w.tangent_at(q);
        let n = w.inward_normal(q);
        Self { wall, guide: w.guide, s: w.s_offset + u, theta, q, v: t * theta.cos() + n * theta.sin() }
    }

    /// Collision at global arclength `s` of `boundary`.
    pub fn at_arclength(geometry: &TrackGeometry, boundary: Loop, s: f64, theta: f64) -> Self {
        let (wall, u) = geometry.locate(boundary, s).expect("loop has walls");
        Self::on_wall(geometry, wall, u, theta)
    }

    /// Rebuilds `(s, θ)` from a Cartesian point on `wall` and an outgoing
    /// velocity.
    pub fn from_cartesian(geometry: &TrackGeometry, wall: usize, q: Vec2, v: Vec2) -> Self {
        let w = &geometry.walls[wall];
        let t = w.tangent_at(q);
        let n = w.inward_normal(q);
        let theta = v.dot(n).atan2(v.dot(t)).clamp(0.0, PI);
        let u = w.local_u(q).clamp(0.0, w.length);
        Self { wall, guide: w.guide, s: w.s_offset + u, theta, q, v }
    }

    pub fn boundary(&self, geometry: &TrackGeometry) -> Loop {
        geometry.walls[self.wall].boundary
    }
}

/// One application of the billiard map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next: CollisionState,
    pub flight: f64,
}

/// Invariant sets by direction of motion along the centerline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// `θ > π/2`: motion against the centerline.
    L,
    /// `θ < π/2`: motion along the centerline.
    R,
    N,
}

pub fn classify(theta: f64) -> Side {
    if (theta - FRAC_PI_2).abs() <= N_BAND {
        Side::N
    } else if theta > FRAC_PI_2 {
        Side::L
    } else {
        Side::R
    }
}

fn first_hit(geometry: &TrackGeometry, ray: &Ray<f64>, walls: &[usize]) -> Result<Option<(usize, f64, Vec2)>, DynError> {
    let mut best: Option<(usize, f64, Vec2)> = None;
    let mut fault: Option<(f64, DynError)> = None;
    for &k in walls {
        match geometry.walls[k].intersect(ray, T_MIN) {
            Ok(Some(hit)) => {
                if best.map_or(true, |(_, t, _)| hit.t < t) {
                    best = Some((k, hit.t, hit.point));
                }
            }
            Ok(None) => {}
            Err(e) => {
                let t = match e {
                    GeomError::Grazing { t } | GeomError::Endpoint { t } => t,
                    _ => 0.0,
                };
                if fault.map_or(true, |(ft, _)| t < ft) {
                    fault = Some((t, e.into()));
                }
            }
        }
    }
    if let Some((ft, e)) = fault {
        if best.map_or(true, |(_, t, _)| ft <= t + 1e-9) {
            return Err(e);
        }
    }
    Ok(best)
}

/// Applies the billiard map to `x`.
pub fn step(geometry: &TrackGeometry, x: &CollisionState) -> Result<Step, DynError> {
    if x.theta < TANGENT_TOL || x.theta > PI - TANGENT_TOL {
        return Err(DynError::Singular { theta: x.theta });
    }
    let ray = Ray { origin: x.q, direction: x.v };
    let n = geometry.guide_count();
    let mut hit = None;
    if geometry.window_is_global(x.guide) {
        hit = first_hit(geometry, &ray, &geometry.window[x.guide])?;
    } else {
        if let Some(h @ (_, _, p)) = first_hit(geometry, &ray, &geometry.window[x.guide])? {
            // leaving the window means a farther wall may come first
            let reach = crate::track::WINDOW_REACH;
            let back = &geometry.interfaces[(x.guide + n - reach) % n];
            let front = &geometry.interfaces[(x.guide + reach + 1) % n];
            if !back.crossed_by(x.q, p) && !front.crossed_by(x.q, p) {
                hit = Some(h);
            }
        }
    }
    let (k, t, p) = match hit {
        Some(h) => h,
        None if geometry.window_is_global(x.guide) => return Err(DynError::NoHit { wall: x.wall }),
        None => {
            let all: Vec<usize> = (0..geometry.walls.len()).collect();
            first_hit(geometry, &ray, &all)?.ok_or(DynError::NoHit { wall: x.wall })?
        }
    };
    let w = &geometry.walls[k];
    let normal = w.inward_normal(p);
    let v = reflect(x.v, normal).normalized();
    let next = CollisionState::from_cartesian(geometry, k, p, v);
    if next.theta < TANGENT_TOL || next.theta > PI - TANGENT_TOL {
        return Err(DynError::Singular { theta: next.theta });
    }
    Ok(Step { next, flight: t })
}

/// Time reversal `J`: the same point with the reversed incoming velocity.
pub fn reverse(geometry: &TrackGeometry, x: &CollisionState) -> CollisionState {
    let n = geometry.walls[x.wall].inward_normal(x.q);
    let v = n * (2.0 * x.v.dot(n)) - x.v;
    CollisionState { theta: PI - x.theta, v, ..*x }
}

/// Derivative of the billiard map from `x` to `y = T x` in `(s, θ)`.
pub fn jacobian(geometry: &TrackGeometry, x: &CollisionState, y: &CollisionState, flight: f64) -> Mat2<f64> {
    let (wx, wy) = (&geometry.walls[x.wall], &geometry.walls[y.wall]);
    collision_jacobian(wx.curvature, x.theta.sin(), wy.curvature, y.theta.sin(), flight).scale(wx.sigma * wy.sigma)
}

/// Velocity component along the oriented centerline at the foot of the
/// transverse section through `x`.
pub fn v_star(geometry: &TrackGeometry, x: &CollisionState) -> f64 {
    geometry.v_star(x.guide, x.q, x.v)
}

/// Draws a collision from `μ`, uniform in arclength over both loops and in
/// `cos θ`. `side` restricts to `R` or `L`.
pub fn sample_mu<R: Rng + ?Sized>(geometry: &TrackGeometry, rng: &mut R, side: Option<Side>) -> CollisionState {
    loop {
        let s = rng.gen::<f64>() * geometry.total_length();
        let (boundary, s) = if s < geometry.loop_lengths[0] { (Loop::Outer, s) } else { (Loop::Inner, s - geometry.loop_lengths[0]) };
        let c: f64 = match side {
            Some(Side::R) => rng.gen::<f64>(),
            Some(Side::L) => -rng.gen::<f64>(),
            _ => 2.0 * rng.gen::<f64>() - 1.0,
        };
        let theta = c.clamp(-1.0, 1.0).acos();
        if theta < TANGENT_TOL || theta > PI - TANGENT_TOL || classify(theta) == Side::N {
            continue;
        }
        if geometry.loop_lengths[boundary.index()] <= 0.0 {
            continue;
        }
        return CollisionState::at_arclength(geometry, boundary, s, theta);
    }
}

/// Whether `x`, reached from a collision in guide `previous`, is an
/// entering collision of a circular guide.
pub fn is_entering(geometry: &TrackGeometry, previous: usize, x: &CollisionState) -> bool {
    geometry.is_circular_guide(x.guide) && x.guide != previous
}

/// The excursion from an entering collision to the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstReturn {
    pub entry: CollisionState,
    /// Last collision with the entry's guide, `T^{n(x)} x`.
    pub exit: CollisionState,
    /// Next entering collision of a circular guide.
    pub next: CollisionState,
    /// `n(x)`: collisions in the guide after the entering one.
    pub passage_steps: usize,
    /// Collisions from `entry` to `next`.
    pub steps: usize,
    /// Path length from `exit` to `next`.
    pub transit: f64,
    /// Derivative from `entry` to `exit`.
    pub passage: Mat2<f64>,
    /// Derivative from `entry` to `next`.
    pub total: Mat2<f64>,
    /// Every collision after `entry` with the preceding flight.
    pub trace: Vec<(CollisionState, f64)>,
}

/// Follows an entering collision `x` to the next entering collision.
pub fn first_return_to_e(geometry: &TrackGeometry, x: &CollisionState, limit: usize) -> Result<FirstReturn, DynError> {
    if !geometry.is_circular_guide(x.guide) {
        return Err(DynError::NotEntering);
    }
    let mut cur = *x;
    let mut exit = *x;
    let mut passage = Mat2::identity();
    let mut total = Mat2::identity();
    let mut passage_steps = 0;
    let mut inside = true;
    let mut transit = 0.0;
    let mut trace = Vec::new();
    for steps in 1..=limit {
        let Step { next, flight } = step(geometry, &cur)?;
        let j = jacobian(geometry, &cur, &next, flight);
        total = j * total;
        trace.push((next, flight));
        if inside && next.guide == x.guide {
            passage = j * passage;
            passage_steps += 1;
            exit = next;
        } else {
            inside = false;
            transit += flight;
            if is_entering(geometry, cur.guide, &next) {
                return Ok(FirstReturn { entry: *x, exit, next, passage_steps, steps, transit, passage, total, trace });
            }
        }
        cur = next;
    }
    Err(DynError::StepLimit { steps: limit })
}

/// Runs `x` forward until its first entering collision.
pub fn advance_to_entering(geometry: &TrackGeometry, x: &CollisionState, limit: usize) -> Result<CollisionState, DynError> {
    let mut cur = *x;
    for _ in 0..limit {
        let next = step(geometry, &cur)?.next;
        if is_entering(geometry, cur.guide, &next) {
            return Ok(next);
        }
        cur = next;
    }
    Err(DynError::StepLimit { steps: limit })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub state: CollisionState,
    /// Flight leading to this collision; zero for the initial state.
    pub flight: f64,
    pub v_star: f64,
}

/// Recorded orbit with its termination reason, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitTrace {
    pub records: Vec<TraceRecord>,
    pub termination: Option<DynError>,
}

impl OrbitTrace {
    /// Iterates `steps` collisions from `x0`, stopping early on a singular
    /// collision.
    pub fn run(geometry: &TrackGeometry, x0: &CollisionState, steps: usize) -> Self {
        let mut records = Vec::with_capacity(steps + 1);
        records.push(TraceRecord { state: *x0, flight: 0.0, v_star: v_star(geometry, x0) });
        let mut cur = *x0;
        let mut termination = None;
        for _ in 0..steps {
            match step(geometry, &cur) {
                Ok(Step { next, flight }) => {
                    records.push(TraceRecord { state: next, flight, v_star: v_star(geometry, &next) });
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

    /// CSV with header `step,wall,s,theta,x,y,t_flight,vstar`; a trailing
    /// comment records the termination reason.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,wall,s,theta,x,y,t_flight,vstar")?;
        for (i, r) in self.records.iter().enumerate() {
            let x = &r.state;
            writeln!(out, "{},{},{},{},{},{},{},{}", i, x.wall, x.s, x.theta, x.q.x, x.q.y, r.flight, r.v_star)?;
        }
        match &self.termination {
            Some(e) => writeln!(out, "# termination: {}", e.reason()),
            None => writeln!(out, "# termination: none"),
        }
    }
}

/// Sequential Kahan-compensated sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{build_track, GuideSpec, TrackSpec, Turn};

    fn stadium() -> TrackGeometry {
        build_track(&TrackSpec::planar(
            0.25,
            vec![
                GuideSpec::straight(6.0),
                GuideSpec::arc(2.0, PI, Turn::Left),
                GuideSpec::straight(6.0),
                GuideSpec::arc(2.0, PI, Turn::Left),
            ],
        ))
        .unwrap()
    }

    #[test]
    fn perpendicular_bounce_in_straight() {
        let g = stadium();
        let x = CollisionState::on_wall(&g, 0, 3.0, FRAC_PI_2);
        let a = step(&g, &x).unwrap();
        assert!((a.flight - 0.5).abs() < 1e-12);
        let b = step(&g, &a.next).unwrap();
        assert!((b.flight - 0.5).abs() < 1e-12);
        assert_eq!(b.next.wall, 0);
        assert!((b.next.q - x.q).norm() < 1e-12);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(3.0 * PI / 4.0), Side::L);
        assert_eq!(classify(PI / 4.0), Side::R);
        assert_eq!(classify(FRAC_PI_2), Side::N);
    }

    #[test]
    fn v_star_in_straight() {
        let g = stadium();
        let mut x = CollisionState::on_wall(&g, 0, 3.0, 0.3);
        x.v = Vec2::new(1.0, 0.0);
        assert_eq!(v_star(&g, &x), 1.0);
        x.v = Vec2::new(0.0, 1.0);
        assert_eq!(v_star(&g, &x), 0.0);
    }

    #[test]
    fn reversal_is_an_involution() {
        let g = stadium();
        let x = CollisionState::on_wall(&g, 3, 1.0, 0.7);
        let y = reverse(&g, &reverse(&g, &x));
        assert!((y.v - x.v).norm() < 1e-15);
        assert!((y.theta - x.theta).abs() < 1e-15);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut k = KahanSum::default();
        k.add(1.0);
        for _ in 0..10_000 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn csv_of_empty_run() {
        let g = stadium();
        let x = CollisionState::on_wall(&g, 0, 1.0, 1.0);
        let trace = OrbitTrace::run(&g, &x, 0);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("step,wall,s,theta,x,y,t_flight,vstar\n0,0,"));
    }
}
