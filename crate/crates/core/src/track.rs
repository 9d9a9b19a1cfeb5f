//! Track construction: guide specifications, the centerline, the two
//! boundary loops, guide interfaces and Condition H.
//!
//! The centerline starts at the origin heading along `+x`. Both boundary
//! loops are oriented along the centerline; walls on its right have the
//! domain on their left (`sigma = +1`), walls on its left have it on their
//! right (`sigma = -1`). Collision angles are measured from this oriented
//! tangent, so `θ < π/2` always means motion along the centerline.

use std::f64::consts::{PI, TAU};

use thiserror::Error;

use crate::geom::{intersect_ray_arc, intersect_ray_segment, ArcSide, ArcWall, GeomError, Hit, Ray, SegmentWall};
use crate::guide::{FocalGrid, GuideError, GuideType, NormalizedGuide};

type Vec2 = crate::geom::Vec2<f64>;

/// Position and direction error allowed when closing the centerline.
pub const CLOSURE_TOL: f64 = 1e-9;

/// Walls of different guides closer than this are considered touching.
pub const CONTACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackError {
    #[error("guide {index}: {reason}")]
    InvalidGuide { index: usize, reason: String },
    #[error("invalid section: {0}")]
    InvalidSection(String),
    #[error("track has no guides")]
    Empty,
    #[error("CLOSURE_FAIL: centerline does not close (position error {position}, direction error {direction}, turning {turning})")]
    ClosureFail { position: f64, direction: f64, turning: f64 },
    #[error("ADJACENCY_FAIL: circular guides {first} and {second} are adjacent")]
    AdjacencyFail { first: usize, second: usize },
    #[error("SELF_INTERSECT: walls of guides {first} and {second} are {distance} apart")]
    SelfIntersect { first: usize, second: usize, distance: f64 },
    #[error("expected a {expected}-dimensional track")]
    WrongDimension { expected: u8 },
    #[error("UNCLASSIFIED: guide {guide} is neither of type A nor of type B")]
    Unclassified { guide: usize },
    #[error("guide {guide} has no numeric focal length")]
    MissingFocalLength { guide: usize },
    #[error(transparent)]
    Guide(#[from] GuideError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Turn {
    Left,
    Right,
}

impl Turn {
    /// `+1` for left (counterclockwise) turns.
    pub fn sign(self) -> f64 {
        match self {
            Turn::Left => 1.0,
            Turn::Right => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GuideSpec {
    /// Centerline radius `radius`, central angle `angle`; `roll` (degrees)
    /// rotates the bending plane of 3-D tracks about the incoming axis.
    Circular { radius: f64, angle: f64, turn: Turn, roll: f64 },
    Straight { length: f64 },
}

impl GuideSpec {
    pub fn arc(radius: f64, angle: f64, turn: Turn) -> Self {
        GuideSpec::Circular { radius, angle, turn, roll: 0.0 }
    }

    pub fn straight(length: f64) -> Self {
        GuideSpec::Straight { length }
    }

    pub fn with_roll(self, degrees: f64) -> Self {
        match self {
            GuideSpec::Circular { radius, angle, turn, .. } => GuideSpec::Circular { radius, angle, turn, roll: degrees },
            s => s,
        }
    }

    pub fn is_circular(&self) -> bool {
        matches!(self, GuideSpec::Circular { .. })
    }

    /// Length of the centerline piece.
    pub fn length(&self) -> f64 {
        match *self {
            GuideSpec::Circular { radius, angle, .. } => radius * angle,
            GuideSpec::Straight { length } => length,
        }
    }
}

/// Cross-section of the tube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Section {
    /// Planar tube of half-width `ε`.
    HalfWidth(f64),
    /// Spatial tube with an `a × b` rectangular section; `a` lies in the
    /// initial plane of the track, `b` along its normal.
    Rect { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSpec {
    pub section: Section,
    pub guides: Vec<GuideSpec>,
}

impl TrackSpec {
    pub fn planar(halfwidth: f64, guides: Vec<GuideSpec>) -> Self {
        Self { section: Section::HalfWidth(halfwidth), guides }
    }

    pub fn spatial(a: f64, b: f64, guides: Vec<GuideSpec>) -> Self {
        Self { section: Section::Rect { a, b }, guides }
    }

    pub fn dim(&self) -> u8 {
        match self.section {
            Section::HalfWidth(_) => 2,
            Section::Rect { .. } => 3,
        }
    }

    pub fn halfwidth(&self) -> Option<f64> {
        match self.section {
            Section::HalfWidth(e) => Some(e),
            Section::Rect { .. } => None,
        }
    }

    /// Circular guides sorted by index.
    pub fn circular(&self) -> impl Iterator<Item = (usize, &GuideSpec)> {
        self.guides.iter().enumerate().filter(|(_, g)| g.is_circular())
    }

    /// Checks the per-guide invariants and the alternation rule. `margin` is
    /// the smallest admissible distance from the centerline to an inner wall
    /// (the half-width in 2-D).
    pub(crate) fn check_guides(&self, margin: f64) -> Result<(), TrackError> {
        if self.guides.is_empty() {
            return Err(TrackError::Empty);
        }
        for (index, g) in self.guides.iter().enumerate() {
            let bad = |reason: &str| TrackError::InvalidGuide { index, reason: reason.to_string() };
            match *g {
                GuideSpec::Circular { radius, angle, roll, .. } => {
                    if !(radius.is_finite() && radius > margin) {
                        return Err(bad("radius must exceed the half-width"));
                    }
                    if !(angle > 0.0 && angle < TAU) {
                        return Err(bad("angle must lie in (0, 2π)"));
                    }
                    if !roll.is_finite() {
                        return Err(bad("roll must be finite"));
                    }
                }
                GuideSpec::Straight { length } => {
                    if !(length.is_finite() && length > 0.0) {
                        return Err(bad("length must be positive"));
                    }
                }
            }
        }
        let n = self.guides.len();
        for i in 0..n {
            let j = (i + 1) % n;
            if self.guides[i].is_circular() && self.guides[j].is_circular() {
                return Err(TrackError::AdjacencyFail { first: i, second: j });
            }
        }
        Ok(())
    }
}

/// Which boundary loop a wall belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loop {
    Outer,
    Inner,
}

impl Loop {
    pub fn index(self) -> usize {
        match self {
            Loop::Outer => 0,
            Loop::Inner => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PieceShape {
    Straight { length: f64 },
    /// `sweep` is signed: positive for counterclockwise travel.
    Arc { center: Vec2, radius: f64, start_angle: f64, sweep: f64 },
}

/// One guide's share of the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterPiece {
    pub guide: usize,
    pub start: Vec2,
    pub heading: Vec2,
    pub shape: PieceShape,
}

impl CenterPiece {
    fn new(guide: usize, start: Vec2, heading: Vec2, spec: &GuideSpec) -> Self {
        let shape = match *spec {
            GuideSpec::Straight { length } => PieceShape::Straight { length },
            GuideSpec::Circular { radius, angle, turn, .. } => {
                let sgn = turn.sign();
                let center = start + heading.perp() * (sgn * radius);
                PieceShape::Arc { center, radius, start_angle: (start - center).angle(), sweep: sgn * angle }
            }
        };
        Self { guide, start, heading, shape }
    }

    pub fn length(&self) -> f64 {
        match self.shape {
            PieceShape::Straight { length } => length,
            PieceShape::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    pub fn point_at(&self, u: f64) -> Vec2 {
        match self.shape {
            PieceShape::Straight { .. } => self.start + self.heading * u,
            PieceShape::Arc { center, radius, start_angle, sweep } => {
                center + Vec2::from_angle(start_angle + sweep.signum() * u / radius) * radius
            }
        }
    }

    pub fn tangent_at(&self, u: f64) -> Vec2 {
        match self.shape {
            PieceShape::Straight { .. } => self.heading,
            PieceShape::Arc { radius, start_angle, sweep, .. } => {
                Vec2::from_angle(start_angle + sweep.signum() * u / radius).perp() * sweep.signum()
            }
        }
    }

    pub fn end(&self) -> Vec2 {
        self.point_at(self.length())
    }

    pub fn end_heading(&self) -> Vec2 {
        self.tangent_at(self.length())
    }

    /// Turning angle of the piece (signed).
    pub fn turning(&self) -> f64 {
        match self.shape {
            PieceShape::Straight { .. } => 0.0,
            PieceShape::Arc { sweep, .. } => sweep,
        }
    }

    /// Centerline parameter of the transverse section through `q`, not
    /// clamped to the piece.
    pub fn foot(&self, q: Vec2) -> f64 {
        match self.shape {
            PieceShape::Straight { .. } => (q - self.start).dot(self.heading),
            PieceShape::Arc { center, radius, start_angle, sweep } => {
                let rel = crate::geom::rem_tau(sweep.signum() * ((q - center).angle() - start_angle) + PI) - PI;
                rel * radius
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WallShape {
    Arc(ArcWall<f64>),
    Segment(SegmentWall<f64>),
}

/// A boundary wall with its arclength chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wall {
    pub shape: WallShape,
    pub boundary: Loop,
    pub guide: usize,
    /// Arclength of the wall's start on its loop.
    pub s_offset: f64,
    pub length: f64,
    /// Positive on focusing walls.
    pub curvature: f64,
    /// `+1` when the domain lies on the left of the oriented tangent.
    pub sigma: f64,
    start: Vec2,
    /// Travel direction at the start for segments; for arcs `x` holds the
    /// polar angle of the start and `y` the travel sign.
    chart: Vec2,
}

impl Wall {
    fn segment(a: Vec2, b: Vec2, boundary: Loop, guide: usize, sigma: f64) -> Result<Self, GeomError> {
        let dir = (b - a).normalized();
        let shape = SegmentWall::new(a, b, dir.perp() * sigma)?;
        Ok(Self {
            shape: WallShape::Segment(shape),
            boundary,
            guide,
            s_offset: 0.0,
            length: (b - a).norm(),
            curvature: 0.0,
            sigma,
            start: a,
            chart: dir,
        })
    }

    fn arc(center: Vec2, radius: f64, start_angle: f64, sweep: f64, boundary: Loop, guide: usize, sigma: f64) -> Result<Self, GeomError> {
        let travel = sweep.signum();
        // the domain is inside the circle iff it lies to the left of CCW travel
        let side = if sigma * travel > 0.0 { ArcSide::Outer } else { ArcSide::Inner };
        let span = sweep.abs();
        let ccw_start = if travel > 0.0 { start_angle } else { start_angle - span };
        let shape = ArcWall::new(center, radius, crate::geom::rem_tau(ccw_start), span, side)?;
        Ok(Self {
            shape: WallShape::Arc(shape),
            boundary,
            guide,
            s_offset: 0.0,
            length: radius * span,
            curvature: shape.curvature(),
            sigma,
            start: center + Vec2::from_angle(start_angle) * radius,
            chart: Vec2::new(start_angle, travel),
        })
    }

    pub fn intersect(&self, ray: &Ray<f64>, t_min: f64) -> Result<Option<Hit<f64>>, GeomError> {
        match &self.shape {
            WallShape::Arc(a) => intersect_ray_arc(ray, a, t_min),
            WallShape::Segment(s) => intersect_ray_segment(ray, s, t_min),
        }
    }

    /// Local arclength of `p` measured from the wall's start.
    pub fn local_u(&self, p: Vec2) -> f64 {
        match &self.shape {
            WallShape::Segment(_) => (p - self.start).dot(self.chart),
            WallShape::Arc(a) => {
                let rel = crate::geom::rem_tau(self.chart.y * ((p - a.center).angle() - self.chart.x));
                // points just before the start wrap around
                let rel = if rel > a.span + 0.5 * (TAU - a.span) { rel - TAU } else { rel };
                rel * a.radius
            }
        }
    }

    pub fn point_at(&self, u: f64) -> Vec2 {
        match &self.shape {
            WallShape::Segment(_) => self.start + self.chart * u,
            WallShape::Arc(a) => a.center + Vec2::from_angle(self.chart.x + self.chart.y * u / a.radius) * a.radius,
        }
    }

    /// Unit tangent at `p`, oriented along the centerline.
    pub fn tangent_at(&self, p: Vec2) -> Vec2 {
        match &self.shape {
            WallShape::Segment(_) => self.chart,
            WallShape::Arc(a) => ((p - a.center).normalized()).perp() * self.chart.y,
        }
    }

    /// Unit normal at `p` pointing into the domain.
    pub fn inward_normal(&self, p: Vec2) -> Vec2 {
        self.tangent_at(p).perp() * self.sigma
    }

    pub fn end(&self) -> Vec2 {
        self.point_at(self.length)
    }

    /// Distance from `p` to the wall.
    pub fn distance_to(&self, p: Vec2) -> f64 {
        match &self.shape {
            WallShape::Segment(s) => point_segment_distance(p, s.a, s.b),
            WallShape::Arc(a) => {
                if (p - a.center).norm() > 0.0 && a.contains_angle(p) {
                    ((p - a.center).norm() - a.radius).abs()
                } else {
                    (p - self.start).norm().min((p - self.end()).norm())
                }
            }
        }
    }
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let e = b - a;
    let u = ((p - a).dot(e) / e.norm_sq()).clamp(0.0, 1.0);
    (a + e * u - p).norm()
}

/// Transverse section between two consecutive guides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interface {
    /// Centerline point.
    pub point: Vec2,
    /// Centerline tangent; the section is crossed forwards along it.
    pub normal: Vec2,
    /// Half-length of the section.
    pub half: f64,
}

impl Interface {
    /// Signed distance of `p` ahead of the section.
    pub fn side(&self, p: Vec2) -> f64 {
        (p - self.point).dot(self.normal)
    }

    /// Whether the segment `p0 → p1` crosses the section (either way).
    pub fn crossed_by(&self, p0: Vec2, p1: Vec2) -> bool {
        let (a, b) = (self.side(p0), self.side(p1));
        if (a > 0.0) == (b > 0.0) {
            return false;
        }
        let w = a / (a - b);
        let x = p0 + (p1 - p0) * w;
        (x - self.point).norm() <= self.half * (1.0 + 1e-9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    Track,
    /// Two concentric circles; the integrable baseline.
    Annulus,
    /// Axis-parallel rectangle; a polygonal test harness.
    Rectangle,
}

/// Immutable wall list and centerline of a planar domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackGeometry {
    pub kind: DomainKind,
    pub spec: Option<TrackSpec>,
    pub halfwidth: f64,
    pub walls: Vec<Wall>,
    pub pieces: Vec<CenterPiece>,
    /// `interfaces[i]` is the section at the start of guide `i`.
    pub interfaces: Vec<Interface>,
    /// Walls of each guide, right wall first.
    pub guide_walls: Vec<Vec<usize>>,
    pub loop_lengths: [f64; 2],
    /// Total signed turning of the centerline.
    pub turning: f64,
    /// Walls of guides within two places of each guide, for the broad phase.
    pub(crate) window: Vec<Vec<usize>>,
}

/// Walks the centerline of `guides` from the origin heading along `+x`.
pub(crate) fn centerline(guides: &[GuideSpec]) -> Vec<CenterPiece> {
    let mut p = Vec2::zero();
    let mut h = Vec2::new(1.0, 0.0);
    let mut out = Vec::with_capacity(guides.len());
    for (i, g) in guides.iter().enumerate() {
        let piece = CenterPiece::new(i, p, h, g);
        p = piece.end();
        h = piece.end_heading();
        out.push(piece);
    }
    out
}

/// Builds the planar wall list of `spec`.
pub fn build_track(spec: &TrackSpec) -> Result<TrackGeometry, TrackError> {
    let eps = match spec.section {
        Section::HalfWidth(e) if e.is_finite() && e > 0.0 => e,
        Section::HalfWidth(e) => return Err(TrackError::InvalidSection(format!("half-width must be positive, got {e}"))),
        Section::Rect { .. } => return Err(TrackError::WrongDimension { expected: 2 }),
    };
    spec.check_guides(eps)?;

    let pieces = centerline(&spec.guides);
    let last = pieces.last().expect("nonempty");
    let position = last.end().norm();
    let direction = (last.end_heading() - Vec2::new(1.0, 0.0)).norm();
    let turning: f64 = pieces.iter().map(CenterPiece::turning).sum();
    if position >= CLOSURE_TOL || direction >= CLOSURE_TOL || (turning.abs() - TAU).abs() >= CLOSURE_TOL {
        return Err(TrackError::ClosureFail { position, direction, turning });
    }
    let ccw = turning > 0.0;
    let (right_loop, left_loop) = if ccw { (Loop::Outer, Loop::Inner) } else { (Loop::Inner, Loop::Outer) };

    let mut walls = Vec::with_capacity(2 * pieces.len());
    let mut guide_walls = Vec::with_capacity(pieces.len());
    let mut interfaces = Vec::with_capacity(pieces.len());
    for piece in &pieces {
        interfaces.push(Interface { point: piece.start, normal: piece.heading, half: eps });
        let i = piece.guide;
        let (right, left) = match piece.shape {
            PieceShape::Straight { length } => {
                let off = piece.heading.perp() * eps;
                let a = piece.start;
                let b = piece.start + piece.heading * length;
                (
                    Wall::segment(a - off, b - off, right_loop, i, 1.0)?,
                    Wall::segment(a + off, b + off, left_loop, i, -1.0)?,
                )
            }
            PieceShape::Arc { center, radius, start_angle, sweep } => {
                // the right wall is farther from the center on left turns
                let rr = radius + sweep.signum() * eps;
                let rl = radius - sweep.signum() * eps;
                (
                    Wall::arc(center, rr, start_angle, sweep, right_loop, i, 1.0)?,
                    Wall::arc(center, rl, start_angle, sweep, left_loop, i, -1.0)?,
                )
            }
        };
        guide_walls.push(vec![walls.len(), walls.len() + 1]);
        walls.push(right);
        walls.push(left);
    }
    let loop_lengths = assign_offsets(&mut walls);

    let geometry = TrackGeometry {
        kind: DomainKind::Track,
        spec: Some(spec.clone()),
        halfwidth: eps,
        walls,
        pieces,
        interfaces,
        guide_walls,
        loop_lengths,
        turning,
        window: Vec::new(),
    };
    geometry.check_embedding()?;
    Ok(geometry.with_window())
}

fn assign_offsets(walls: &mut [Wall]) -> [f64; 2] {
    let mut acc = [0.0f64; 2];
    for w in walls.iter_mut() {
        let k = w.boundary.index();
        w.s_offset = acc[k];
        acc[k] += w.length;
    }
    acc
}

/// Guides on either side of the current one searched before falling back
/// to every wall.
pub const WINDOW_REACH: usize = 2;

impl TrackGeometry {
    fn with_window(mut self) -> Self {
        let n = self.guide_walls.len();
        self.window = (0..n)
            .map(|g| {
                if n <= 2 * WINDOW_REACH + 1 {
                    return (0..self.walls.len()).collect();
                }
                let mut ws = Vec::new();
                for k in 0..=2 * WINDOW_REACH {
                    ws.extend_from_slice(&self.guide_walls[(g + n + k - WINDOW_REACH) % n]);
                }
                ws
            })
            .collect();
        self
    }

    /// Whether the broad-phase window of `guide` is the whole wall list.
    pub(crate) fn window_is_global(&self, guide: usize) -> bool {
        self.window[guide].len() == self.walls.len()
    }

    /// Two concentric circles of radii `outer > inner` centered at the origin.
    pub fn annulus(outer: f64, inner: f64) -> Result<Self, TrackError> {
        if !(inner > 0.0 && outer > inner && outer.is_finite()) {
            return Err(TrackError::InvalidSection(format!("annulus needs 0 < inner < outer, got {inner}, {outer}")));
        }
        let radius = 0.5 * (outer + inner);
        let eps = 0.5 * (outer - inner);
        let piece = CenterPiece {
            guide: 0,
            start: Vec2::new(0.0, -radius),
            heading: Vec2::new(1.0, 0.0),
            shape: PieceShape::Arc { center: Vec2::zero(), radius, start_angle: -PI / 2.0, sweep: TAU },
        };
        let mut walls = vec![
            Wall::arc(Vec2::zero(), outer, -PI / 2.0, TAU, Loop::Outer, 0, 1.0)?,
            Wall::arc(Vec2::zero(), inner, -PI / 2.0, TAU, Loop::Inner, 0, -1.0)?,
        ];
        let loop_lengths = assign_offsets(&mut walls);
        Ok(Self {
            kind: DomainKind::Annulus,
            spec: None,
            halfwidth: eps,
            walls,
            pieces: vec![piece],
            interfaces: Vec::new(),
            guide_walls: vec![vec![0, 1]],
            loop_lengths,
            turning: TAU,
            window: Vec::new(),
        }
        .with_window())
    }

    /// Rectangle `[0, width] × [0, height]`, walls traversed counterclockwise.
    pub fn rectangle(width: f64, height: f64) -> Result<Self, TrackError> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(TrackError::InvalidSection(format!("rectangle needs positive sides, got {width} × {height}")));
        }
        let c = [Vec2::new(0.0, 0.0), Vec2::new(width, 0.0), Vec2::new(width, height), Vec2::new(0.0, height)];
        let mut walls = (0..4)
            .map(|k| Wall::segment(c[k], c[(k + 1) % 4], Loop::Outer, 0, 1.0))
            .collect::<Result<Vec<_>, _>>()?;
        let loop_lengths = assign_offsets(&mut walls);
        Ok(Self {
            kind: DomainKind::Rectangle,
            spec: None,
            halfwidth: 0.5 * width.min(height),
            walls,
            pieces: Vec::new(),
            interfaces: Vec::new(),
            guide_walls: vec![vec![0, 1, 2, 3]],
            loop_lengths,
            turning: TAU,
            window: Vec::new(),
        }
        .with_window())
    }

    pub fn guide_count(&self) -> usize {
        self.guide_walls.len()
    }

    pub fn total_length(&self) -> f64 {
        self.loop_lengths[0] + self.loop_lengths[1]
    }

    pub fn is_circular_guide(&self, guide: usize) -> bool {
        matches!(self.pieces.get(guide), Some(CenterPiece { shape: PieceShape::Arc { .. }, .. }))
    }

    /// Wall containing global arclength `s` of `boundary`, with the local
    /// arclength on that wall.
    pub fn locate(&self, boundary: Loop, s: f64) -> Option<(usize, f64)> {
        let total = self.loop_lengths[boundary.index()];
        let s = s.rem_euclid(total);
        let mut best = None;
        for (i, w) in self.walls.iter().enumerate() {
            if w.boundary != boundary {
                continue;
            }
            if s >= w.s_offset && s < w.s_offset + w.length {
                return Some((i, s - w.s_offset));
            }
            best = Some((i, w.length));
        }
        best
    }

    /// Centerline foot of `q` within `guide` and the tangent there.
    pub fn centerline_frame(&self, guide: usize, q: Vec2) -> Option<(f64, Vec2)> {
        let piece = self.pieces.get(guide)?;
        let u = piece.foot(q);
        Some((u, piece.tangent_at(u)))
    }

    /// Velocity component along the oriented centerline tangent at the foot
    /// of the transverse section through `q`; `NaN` without a centerline.
    pub fn v_star(&self, guide: usize, q: Vec2, v: Vec2) -> f64 {
        match self.centerline_frame(guide, q) {
            Some((_, t)) => v.dot(t),
            None => f64::NAN,
        }
    }

    /// Rejects tubes whose walls touch away from shared endpoints.
    fn check_embedding(&self) -> Result<(), TrackError> {
        let n = self.walls.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (&self.walls[i], &self.walls[j]);
                if a.boundary == b.boundary && self.loop_neighbours(i, j) {
                    continue;
                }
                let d = wall_distance(a, b);
                if d <= CONTACT_TOL {
                    return Err(TrackError::SelfIntersect { first: a.guide, second: b.guide, distance: d });
                }
            }
        }
        Ok(())
    }

    fn loop_neighbours(&self, i: usize, j: usize) -> bool {
        let b = self.walls[i].boundary;
        let members: Vec<usize> = (0..self.walls.len()).filter(|&k| self.walls[k].boundary == b).collect();
        let pi = members.iter().position(|&k| k == i).expect("member");
        let pj = members.iter().position(|&k| k == j).expect("member");
        let m = members.len();
        (pi + 1) % m == pj || (pj + 1) % m == pi
    }
}

fn segments_cross(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> bool {
    let d1 = (a1 - a0).cross(b0 - a0);
    let d2 = (a1 - a0).cross(b1 - a0);
    let d3 = (b1 - b0).cross(a0 - b0);
    let d4 = (b1 - b0).cross(a1 - b0);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Points of the circle of `arc` hit by the line through `p0`, `p1`, within
/// the segment.
fn segment_circle_points(arc: &ArcWall<f64>, p0: Vec2, p1: Vec2) -> Vec<Vec2> {
    let e = p1 - p0;
    let a = e.norm_sq();
    let oc = p0 - arc.center;
    let b = e.dot(oc);
    let c = oc.norm_sq() - arc.radius * arc.radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    [(-b - sq) / a, (-b + sq) / a]
        .into_iter()
        .filter(|t| (0.0..=1.0).contains(t))
        .map(|t| p0 + e * t)
        .collect()
}

/// Minimum distance between two walls (zero when they cross).
fn wall_distance(a: &Wall, b: &Wall) -> f64 {
    let mut best = f64::INFINITY;
    for (p, other) in [(a.start, b), (a.end(), b), (b.start, a), (b.end(), a)] {
        best = best.min(other.distance_to(p));
    }
    match (&a.shape, &b.shape) {
        (WallShape::Segment(s), WallShape::Segment(t)) => {
            if segments_cross(s.a, s.b, t.a, t.b) {
                return 0.0;
            }
        }
        (WallShape::Segment(s), WallShape::Arc(c)) | (WallShape::Arc(c), WallShape::Segment(s)) => {
            if segment_circle_points(c, s.a, s.b).into_iter().any(|p| c.contains_angle(p)) {
                return 0.0;
            }
            // closest point of the segment's line to the center, if interior
            let e = s.b - s.a;
            let u = (c.center - s.a).dot(e) / e.norm_sq();
            if (0.0..=1.0).contains(&u) {
                let foot = s.a + e * u;
                let dir = foot - c.center;
                if dir.norm() > 0.0 {
                    let on_circle = c.center + dir.normalized() * c.radius;
                    if c.contains_angle(on_circle) {
                        best = best.min((dir.norm() - c.radius).abs());
                    }
                }
            }
        }
        (WallShape::Arc(c1), WallShape::Arc(c2)) => {
            let d = c2.center - c1.center;
            let dn = d.norm();
            if dn <= 1e-12 * (c1.radius + c2.radius) {
                // concentric: the gap is the radius difference where spans overlap
                for k in 0..64 {
                    let p = c1.point_at_angle(c1.start + c1.span * (k as f64 + 0.5) / 64.0);
                    if c2.contains_angle(p) {
                        best = best.min((c1.radius - c2.radius).abs());
                        break;
                    }
                }
            } else {
                // circle-circle intersection points
                let a = (dn * dn + c1.radius * c1.radius - c2.radius * c2.radius) / (2.0 * dn);
                let h2 = c1.radius * c1.radius - a * a;
                if h2 >= 0.0 {
                    let base = c1.center + d * (a / dn);
                    let off = d.perp() * (h2.sqrt() / dn);
                    for p in [base + off, base - off] {
                        if c1.contains_angle(p) && c2.contains_angle(p) {
                            return 0.0;
                        }
                    }
                }
                let u = d * (1.0 / dn);
                for s1 in [1.0, -1.0] {
                    for s2 in [1.0, -1.0] {
                        let p = c1.center + u * (s1 * c1.radius);
                        let q = c2.center + u * (s2 * c2.radius);
                        if c1.contains_angle(p) && c2.contains_angle(q) {
                            best = best.min((p - q).norm());
                        }
                    }
                }
            }
        }
    }
    best
}

/// Which focal length Condition H is evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FocalChoice {
    Bound,
    Numeric,
}

/// Type and focal-length data of one circular guide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuideReport {
    pub guide: usize,
    pub radius: f64,
    pub angle: f64,
    /// Outer radius `R + ε`.
    pub r1: f64,
    /// Ratio `(R - ε) / (R + ε)`.
    pub r: f64,
    pub beta_bar: f64,
    pub guide_type: GuideType,
    pub c_tilde: Option<f64>,
    /// `r₁ c̃ / (c̃ - 2)`.
    pub tau_bound: Option<f64>,
    /// Grid supremum of `τ₁` over all entering collisions, scaled by `r₁`.
    pub tau_numeric: Option<f64>,
    /// Same, restricted to `E₁`.
    pub tau_numeric_e1: Option<f64>,
}

impl GuideReport {
    pub fn normalized(&self) -> NormalizedGuide<f64> {
        NormalizedGuide::new(self.r, self.angle).expect("validated guide")
    }

    /// Fills the numeric focal lengths from a grid sweep.
    pub fn compute_numeric(&mut self, grid: &FocalGrid) -> Result<(), GuideError> {
        let fl = self.normalized().focal_length(grid)?;
        self.tau_numeric = Some(fl.numeric * self.r1);
        self.tau_numeric_e1 = Some(fl.numeric_e1 * self.r1);
        Ok(())
    }

    pub fn tau(&self, choice: FocalChoice) -> Option<f64> {
        match choice {
            FocalChoice::Bound => self.tau_bound,
            FocalChoice::Numeric => self.tau_numeric,
        }
    }
}

/// Type, `β̄`, `c̃` and the focal-length bound of a circular guide of a
/// tube of half-width `halfwidth`.
pub fn classify_guide(guide: usize, spec: &GuideSpec, halfwidth: f64) -> Result<GuideReport, TrackError> {
    let GuideSpec::Circular { radius, angle, .. } = *spec else {
        return Err(TrackError::InvalidGuide { index: guide, reason: "not a circular guide".into() });
    };
    let r1 = radius + halfwidth;
    let r = (radius - halfwidth) / r1;
    let g = NormalizedGuide::new(r, angle)?;
    let guide_type = g.guide_type();
    let c_tilde = match guide_type {
        GuideType::Neither => None,
        _ => Some(g.c_tilde()?),
    };
    Ok(GuideReport {
        guide,
        radius,
        angle,
        r1,
        r,
        beta_bar: g.beta_bar(),
        guide_type,
        c_tilde,
        tau_bound: c_tilde.map(|c| r1 * c / (c - 2.0)),
        tau_numeric: None,
        tau_numeric_e1: None,
    })
}

/// Reports for every circular guide of `spec`, in guide order.
pub fn guide_reports(spec: &TrackSpec, halfwidth: f64) -> Result<Vec<GuideReport>, TrackError> {
    spec.circular().map(|(i, g)| classify_guide(i, g, halfwidth)).collect()
}

/// Condition H on one straight guide.
#[derive(Debug, Clone, PartialEq)]
pub struct StraightMargin {
    pub guide: usize,
    /// Circular guides bounding the run of straights containing `guide`.
    pub before: usize,
    pub after: usize,
    /// Total length of the run.
    pub length: f64,
    pub tau_before: f64,
    pub tau_after: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionH {
    pub satisfied: bool,
    pub margins: Vec<StraightMargin>,
}

/// Evaluates `l > τ̃_before + τ̃_after` on every run of straight guides,
/// with focal lengths taken from `reports`.
pub fn check_condition_h(spec: &TrackSpec, reports: &[GuideReport], choice: FocalChoice) -> Result<ConditionH, TrackError> {
    let n = spec.guides.len();
    let tau_of = |g: usize| -> Result<f64, TrackError> {
        let rep = reports
            .iter()
            .find(|r| r.guide == g)
            .ok_or(TrackError::MissingFocalLength { guide: g })?;
        if rep.guide_type == GuideType::Neither {
            return Err(TrackError::Unclassified { guide: g });
        }
        rep.tau(choice).ok_or(TrackError::MissingFocalLength { guide: g })
    };
    for (i, _) in spec.circular() {
        tau_of(i)?;
    }
    let mut margins = Vec::new();
    for i in 0..n {
        if spec.guides[i].is_circular() {
            continue;
        }
        let mut before = (i + n - 1) % n;
        while !spec.guides[before].is_circular() && before != i {
            before = (before + n - 1) % n;
        }
        let mut after = (i + 1) % n;
        while !spec.guides[after].is_circular() && after != i {
            after = (after + 1) % n;
        }
        if before == i {
            // no circular guide at all
            continue;
        }
        let mut length = 0.0;
        let mut k = (before + 1) % n;
        while k != after {
            length += spec.guides[k].length();
            k = (k + 1) % n;
        }
        let (tb, ta) = (tau_of(before)?, tau_of(after)?);
        margins.push(StraightMargin { guide: i, before, after, length, tau_before: tb, tau_after: ta, margin: length - (tb + ta) });
    }
    let satisfied = !margins.is_empty() && margins.iter().all(|m| m.margin > 0.0);
    Ok(ConditionH { satisfied, margins })
}
