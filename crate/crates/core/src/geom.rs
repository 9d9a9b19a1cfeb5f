//! Planar geometric kernel: rays, circular arcs, segments, reflection.
//!
//! All intersection routines return the *first* admissible hit strictly beyond
//! `t_min` and report tangential (grazing) and endpoint hits as errors, since
//! both correspond to states on which the billiard map is not defined.

use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

use crate::scalar::Scalar;

/// Default lower bound on accepted ray parameters; keeps a ray from re-hitting
/// the wall it departs from.
pub const T_MIN: f64 = 1e-10;

/// Relative threshold on the reduced discriminant `(d·oc)² - (|oc|² - r²)`,
/// measured in units of `r²`, below which an arc hit is reported as grazing.
pub const GRAZING_TOL: f64 = 1e-11;

/// Distance from a segment endpoint below which a hit is reported as an
/// endpoint hit.
pub const ENDPOINT_TOL: f64 = 1e-12;

/// Slack on the angular span test of arcs, in radians.
pub const ANGLE_TOL: f64 = 1e-12;

/// Tolerance on unit-length and orthogonality invariants.
pub const UNIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeomError {
    /// The ray touches the circle tangentially at parameter `t`.
    #[error("grazing hit at t = {t}")]
    Grazing { t: f64 },
    /// The ray hits a segment within tolerance of one of its endpoints.
    #[error("segment endpoint hit at t = {t}")]
    Endpoint { t: f64 },
    #[error("direction is not a unit vector (|d| = {norm})")]
    NotUnit { norm: f64 },
    #[error("invalid wall: {0}")]
    InvalidWall(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Vec2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    /// Unit vector at polar angle `phi`.
    pub fn from_angle(phi: T) -> Self {
        Self::new(phi.cos(), phi.sin())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    pub fn normalized(self) -> Self {
        self * self.norm().recip()
    }

    /// Counterclockwise rotation by a right angle (left normal).
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn rotated(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> T {
        self.y.atan2(self.x)
    }

    pub fn cast<U: Scalar>(self) -> Vec2<U> {
        Vec2::new(
            U::from_f64(self.x.to_f64().unwrap()).unwrap(),
            U::from_f64(self.y.to_f64().unwrap()).unwrap(),
        )
    }
}

impl<T: Scalar> Add for Vec2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> Sub for Vec2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> Mul<T> for Vec2<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

impl<T: Scalar> Neg for Vec2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Half-line `origin + t * direction`, `t >= 0`, with a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec2<T>,
    pub direction: Vec2<T>,
}

impl<T: Scalar> Ray<T> {
    pub fn new(origin: Vec2<T>, direction: Vec2<T>) -> Result<Self, GeomError> {
        let norm = direction.norm();
        if (norm - T::one()).abs() > unit_tol::<T>() {
            return Err(GeomError::NotUnit {
                norm: norm.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self { origin, direction })
    }

    pub fn at(&self, t: T) -> Vec2<T> {
        self.origin + self.direction * t
    }
}

/// Which side of a circle the billiard domain lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArcSide {
    /// Domain inside the circle: a focusing wall (outer circle of a guide).
    Outer,
    /// Domain outside the circle: a dispersing wall (inner circle of a guide).
    Inner,
}

/// Circular arc `center + radius * (cos ψ, sin ψ)`, `ψ ∈ [start, start + span]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcWall<T> {
    pub center: Vec2<T>,
    pub radius: T,
    pub start: T,
    pub span: T,
    pub side: ArcSide,
}

impl<T: Scalar> ArcWall<T> {
    pub fn new(center: Vec2<T>, radius: T, start: T, span: T, side: ArcSide) -> Result<Self, GeomError> {
        if !(radius > T::zero()) {
            return Err(GeomError::InvalidWall("arc radius must be positive"));
        }
        if !(span > T::zero()) || span > T::TAU() + T::lit(ANGLE_TOL) {
            return Err(GeomError::InvalidWall("arc span must lie in (0, 2π]"));
        }
        Ok(Self { center, radius, start, span, side })
    }

    pub fn full_circle(center: Vec2<T>, radius: T, side: ArcSide) -> Result<Self, GeomError> {
        Self::new(center, radius, T::zero(), T::TAU(), side)
    }

    pub fn length(&self) -> T {
        self.radius * self.span
    }

    /// Signed curvature: positive when focusing.
    pub fn curvature(&self) -> T {
        match self.side {
            ArcSide::Outer => self.radius.recip(),
            ArcSide::Inner => -self.radius.recip(),
        }
    }

    /// Angular offset of `p` from `start`, in `[0, 2π)`.
    pub fn angular_offset(&self, p: Vec2<T>) -> T {
        let phi = (p - self.center).angle();
        rem_tau(phi - self.start)
    }

    pub fn contains_angle(&self, p: Vec2<T>) -> bool {
        if self.span >= T::TAU() {
            return true;
        }
        let rel = self.angular_offset(p);
        let tol = T::lit(ANGLE_TOL);
        rel <= self.span + tol || rel >= T::TAU() - tol
    }

    /// Unit normal at `p` pointing into the billiard domain.
    pub fn inward_normal(&self, p: Vec2<T>) -> Vec2<T> {
        let radial = (p - self.center) * self.radius.recip();
        match self.side {
            ArcSide::Outer => -radial,
            ArcSide::Inner => radial,
        }
    }

    pub fn point_at_angle(&self, psi: T) -> Vec2<T> {
        self.center + Vec2::from_angle(psi) * self.radius
    }
}

/// Straight wall between two distinct endpoints with a unit inward normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentWall<T> {
    pub a: Vec2<T>,
    pub b: Vec2<T>,
    pub normal: Vec2<T>,
}

impl<T: Scalar> SegmentWall<T> {
    pub fn new(a: Vec2<T>, b: Vec2<T>, normal: Vec2<T>) -> Result<Self, GeomError> {
        let e = b - a;
        let len = e.norm();
        if !(len > T::zero()) {
            return Err(GeomError::InvalidWall("segment endpoints coincide"));
        }
        if (normal.norm() - T::one()).abs() > unit_tol::<T>() {
            return Err(GeomError::InvalidWall("segment normal is not a unit vector"));
        }
        if (e.dot(normal) / len).abs() > unit_tol::<T>() {
            return Err(GeomError::InvalidWall("segment normal is not perpendicular"));
        }
        Ok(Self { a, b, normal })
    }

    /// Segment whose inward normal is the left normal of `b - a`.
    pub fn with_left_normal(a: Vec2<T>, b: Vec2<T>) -> Result<Self, GeomError> {
        let n = (b - a).normalized().perp();
        Self::new(a, b, n)
    }

    pub fn length(&self) -> T {
        (self.b - self.a).norm()
    }
}

/// An accepted ray/wall intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<T> {
    pub t: T,
    pub point: Vec2<T>,
    /// Inward (domain-facing) wall normal at `point`.
    pub normal: Vec2<T>,
}

fn unit_tol<T: Scalar>() -> T {
    // f32 cannot resolve 1e-12; fall back to a few ulps of one.
    T::lit(UNIT_TOL).max(T::epsilon() * T::lit(8.0))
}

pub(crate) fn rem_tau<T: Scalar>(x: T) -> T {
    let tau = T::TAU();
    let r = x % tau;
    if r < T::zero() {
        r + tau
    } else {
        r
    }
}

fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// First intersection of `ray` with `wall` beyond `t_min`.
///
/// Roots of `|o + t d - c|² = r²` are taken in the cancellation-free form
/// `q = -(b + sign(b)√disc)`, `t ∈ {q, c/q}`.
pub fn intersect_ray_arc<T: Scalar>(ray: &Ray<T>, wall: &ArcWall<T>, t_min: T) -> Result<Option<Hit<T>>, GeomError> {
    let oc = ray.origin - wall.center;
    let b = ray.direction.dot(oc);
    let r2 = wall.radius * wall.radius;
    let c = oc.norm_sq() - r2;
    let disc = b * b - c;

    if disc.abs() <= T::lit(GRAZING_TOL) * r2 {
        let half = disc.max(T::zero()).sqrt();
        for t in [-b - half, -b + half] {
            if t > t_min && wall.contains_angle(ray.at(t)) {
                return Err(GeomError::Grazing { t: to_f64(t) });
            }
        }
        return Ok(None);
    }
    if disc < T::zero() {
        return Ok(None);
    }

    let sq = disc.sqrt();
    let q = if b >= T::zero() { -(b + sq) } else { -(b - sq) };
    let (mut t0, mut t1) = (q, c / q);
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    for t in [t0, t1] {
        if t > t_min {
            let p = ray.at(t);
            if wall.contains_angle(p) {
                return Ok(Some(Hit { t, point: p, normal: wall.inward_normal(p) }));
            }
        }
    }
    Ok(None)
}

/// First intersection of `ray` with the interior of `wall` beyond `t_min`.
pub fn intersect_ray_segment<T: Scalar>(
    ray: &Ray<T>,
    wall: &SegmentWall<T>,
    t_min: T,
) -> Result<Option<Hit<T>>, GeomError> {
    let e = wall.b - wall.a;
    let len = e.norm();
    let denom = ray.direction.cross(e);
    if denom.abs() <= T::epsilon() * len {
        return Ok(None);
    }
    let ao = wall.a - ray.origin;
    let t = ao.cross(e) / denom;
    if !(t > t_min) {
        return Ok(None);
    }
    let u = ao.cross(ray.direction) / denom;
    let tol = T::lit(ENDPOINT_TOL) / len;
    if (u.abs() <= tol) || ((u - T::one()).abs() <= tol) {
        return Err(GeomError::Endpoint { t: to_f64(t) });
    }
    if u < T::zero() || u > T::one() {
        return Ok(None);
    }
    Ok(Some(Hit { t, point: ray.at(t), normal: wall.normal }))
}

/// Specular reflection of `v` about the line with unit normal `n`.
pub fn reflect<T: Scalar>(v: Vec2<T>, n: Vec2<T>) -> Vec2<T> {
    v - n * (T::two() * v.dot(n))
}
