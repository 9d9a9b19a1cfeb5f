//! Brute-force Cartesian tracer for a single normalized guide: outer circle
//! of radius 1, inner circle of radius `r`, sector `0 ≤ arg ≤ α`.
#![allow(dead_code)]

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Circle {
    Outer,
    Inner,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounce {
    pub circle: Circle,
    pub psi: f64,
    /// Angle between the outgoing velocity and the counterclockwise tangent.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Traced {
    /// Collisions after the first one, in order.
    pub bounces: Vec<Bounce>,
}

impl Traced {
    pub fn n1(&self) -> usize {
        self.bounces.iter().filter(|b| b.circle == Circle::Outer).count()
    }

    pub fn inner_hits(&self) -> usize {
        self.bounces.iter().filter(|b| b.circle == Circle::Inner).count()
    }

    pub fn last_outer(&self) -> Option<Bounce> {
        self.bounces.iter().rev().find(|b| b.circle == Circle::Outer).copied()
    }

    pub fn last(&self) -> Option<Bounce> {
        self.bounces.last().copied()
    }
}

fn angle_from_ccw_tangent(p: (f64, f64), v: (f64, f64), circle: Circle) -> f64 {
    let rad = (p.0 * p.0 + p.1 * p.1).sqrt();
    let tangent = (-p.1 / rad, p.0 / rad);
    let inward = match circle {
        Circle::Outer => (-p.0 / rad, -p.1 / rad),
        Circle::Inner => (p.0 / rad, p.1 / rad),
    };
    (v.0 * inward.0 + v.1 * inward.1).atan2(v.0 * tangent.0 + v.1 * tangent.1)
}

/// Follows the chord from a collision on `circle` at angular position `psi`
/// with angle `theta` until the next hit falls outside the sector.
pub fn trace(r: f64, alpha: f64, circle: Circle, psi: f64, theta: f64, limit: usize) -> Traced {
    let rad = match circle {
        Circle::Outer => 1.0,
        Circle::Inner => r,
    };
    let mut p = (rad * psi.cos(), rad * psi.sin());
    let tangent = (-psi.sin(), psi.cos());
    let inward = match circle {
        Circle::Outer => (-psi.cos(), -psi.sin()),
        Circle::Inner => (psi.cos(), psi.sin()),
    };
    let mut v = (
        theta.cos() * tangent.0 + theta.sin() * inward.0,
        theta.cos() * tangent.1 + theta.sin() * inward.1,
    );
    let mut bounces = Vec::new();
    let mut angle = psi;
    for _ in 0..limit {
        let b = p.0 * v.0 + p.1 * v.1;
        let pp = p.0 * p.0 + p.1 * p.1;
        let mut hit = None;
        let disc_in = b * b - (pp - r * r);
        if disc_in > 0.0 {
            let t = -b - disc_in.sqrt();
            if t > 1e-12 {
                hit = Some((t, Circle::Inner));
            }
        }
        if hit.is_none() {
            let t = -b + (b * b - (pp - 1.0)).max(0.0).sqrt();
            hit = Some((t, Circle::Outer));
        }
        let (t, c) = hit.unwrap();
        let q = (p.0 + t * v.0, p.1 + t * v.1);
        // unwrapped angle: chords subtend less than π
        let turn = (p.0 * q.1 - p.1 * q.0).atan2(p.0 * q.0 + p.1 * q.1);
        let a = angle + turn;
        if !(0.0..=alpha).contains(&a) {
            break;
        }
        angle = a;
        let rq = (q.0 * q.0 + q.1 * q.1).sqrt();
        let n = (q.0 / rq, q.1 / rq);
        let vn = v.0 * n.0 + v.1 * n.1;
        v = (v.0 - 2.0 * vn * n.0, v.1 - 2.0 * vn * n.1);
        p = q;
        bounces.push(Bounce { circle: c, psi: a, theta: angle_from_ccw_tangent(q, v, c) });
    }
    Traced { bounces }
}
