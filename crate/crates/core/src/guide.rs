//! Closed-form analysis of a single circular guide.
//!
//! The guide is normalized to outer radius `1` and inner radius `r ∈ (0, 1)`,
//! occupying the angular sector `ψ ∈ [0, α]`. Both circles are oriented
//! counterclockwise, so a collision with angle `θ < π/2` moves towards
//! increasing `ψ`. Inside the annulus the billiard is integrable: the angular
//! momentum `cos θ` is conserved and consecutive outer collisions are
//! separated by the central angle `2δ(θ)`.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tangent::algebra::{collision_jacobian, Mat2, TransferError, TransferMap};

/// Distance from `β̄` or `π - β̄` below which `δ'` and `δ''` are singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Smallest admissible half step between outer collisions.
pub const MIN_ADVANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GuideError {
    #[error("inner radius ratio must lie in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("central angle must lie in (0, 2π], got {0}")]
    BadAngle(f64),
    #[error("θ = {theta} is within tolerance of a singular angle")]
    Singular { theta: f64 },
    #[error("half advance δ(θ) = {delta} is too small for the orbit to leave the guide")]
    NonpositiveAdvance { delta: f64 },
    #[error("guide is not of type A (α = {alpha} < π)")]
    NotTypeA { alpha: f64 },
    #[error("guide is neither of type A nor of type B")]
    Unclassified,
    #[error("δ' never reaches -3/2 on (β̄, π/2)")]
    NoRoot,
    #[error("computed constant c = {c} is not larger than 2")]
    ConstantTooSmall { c: f64 },
    #[error("entry state lies outside the guide")]
    OutsideGuide,
    #[error(transparent)]
    Transfer(#[from] TransferError),
}

/// Type of a circular guide: A when `α ≥ π`, B when `r < 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GuideType {
    A,
    B,
    AB,
    Neither,
}

impl GuideType {
    pub fn classify<T: Scalar>(r: T, alpha: T) -> Self {
        let a = alpha >= T::PI();
        let b = r < T::lit(0.5);
        match (a, b) {
            (true, true) => GuideType::AB,
            (true, false) => GuideType::A,
            (false, true) => GuideType::B,
            (false, false) => GuideType::Neither,
        }
    }

    pub fn is_a(self) -> bool {
        matches!(self, GuideType::A | GuideType::AB)
    }

    pub fn is_b(self) -> bool {
        matches!(self, GuideType::B | GuideType::AB)
    }

    pub fn label(self) -> &'static str {
        match self {
            GuideType::A => "A",
            GuideType::B => "B",
            GuideType::AB => "AB",
            GuideType::Neither => "neither",
        }
    }
}

/// Which circle of the guide a collision lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GuideWall {
    Outer,
    Inner,
}

/// A collision inside a normalized guide: angular position `psi` and the
/// collision angle `theta` measured from the counterclockwise tangent of
/// the circle it lies on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuideEntryState<T> {
    pub wall: GuideWall,
    pub psi: T,
    pub theta: T,
}

impl<T: Scalar> GuideEntryState<T> {
    pub fn outer(psi: T, theta: T) -> Self {
        Self { wall: GuideWall::Outer, psi, theta }
    }

    pub fn inner(psi: T, theta: T) -> Self {
        Self { wall: GuideWall::Inner, psi, theta }
    }
}

/// Result of iterating the outer-circle return map through the guide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Advance<T> {
    /// Last outer-circle collision before the orbit leaves the guide.
    pub exit: GuideEntryState<T>,
    /// Outer-circle collisions after the entering one.
    pub n1: u64,
    /// Inner-circle collisions after the entering one, including a trailing
    /// inner collision after the last outer one.
    pub inner_hits: u64,
}

/// Summary of a complete guide passage from an entering collision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Passage<T> {
    pub entry: GuideEntryState<T>,
    /// Last collision with the guide boundary.
    pub exit: GuideEntryState<T>,
    /// Collision angle on the outer circle (conserved along the passage).
    pub outer_theta: T,
    /// Collisions after the entering one, on either circle (`n(x)`).
    pub collisions: u64,
    /// Outer-circle collisions after the entering one.
    pub outer_collisions: u64,
    /// Derivative of the billiard map from entry to exit, in arclength units.
    pub derivative: Mat2<T>,
}

/// Circular guide with outer radius 1, inner radius `r` and central angle `α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedGuide<T> {
    r: T,
    alpha: T,
}

impl<T: Scalar> NormalizedGuide<T> {
    pub fn new(r: T, alpha: T) -> Result<Self, GuideError> {
        if !(r > T::zero() && r < T::one()) {
            return Err(GuideError::BadRatio(r.to_f64().unwrap_or(f64::NAN)));
        }
        if !(alpha > T::zero() && alpha <= T::TAU()) {
            return Err(GuideError::BadAngle(alpha.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self { r, alpha })
    }

    pub fn r(&self) -> T {
        self.r
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Critical angle `β̄ = arccos r` separating chords that miss the inner
    /// circle from chords that hit it.
    pub fn beta_bar(&self) -> T {
        self.r.acos()
    }

    pub fn guide_type(&self) -> GuideType {
        GuideType::classify(self.r, self.alpha)
    }

    /// Whether a chord with outer collision angle `theta` hits the inner circle.
    pub fn hits_inner(&self, theta: T) -> bool {
        let bb = self.beta_bar();
        theta >= bb && theta <= T::PI() - bb
    }

    fn check_singular(&self, theta: T) -> Result<(), GuideError> {
        let bb = self.beta_bar();
        let tol = T::lit(SINGULAR_TOL);
        if (theta - bb).abs() < tol || (theta - (T::PI() - bb)).abs() < tol {
            return Err(GuideError::Singular { theta: theta.to_f64().unwrap_or(f64::NAN) });
        }
        Ok(())
    }

    /// Angle `φ` of the inner-circle collision, from `cos θ = r cos φ`.
    pub fn inner_angle(&self, theta: T) -> T {
        (theta.cos() / self.r).max(-T::one()).min(T::one()).acos()
    }

    /// Half the central angle between consecutive outer collisions, taken in
    /// `[0, π]` as in the classical formula: `θ - φ(θ)` on `[β̄, π - β̄]` and
    /// `θ` elsewhere.
    pub fn delta(&self, theta: T) -> T {
        if self.hits_inner(theta) {
            theta - self.inner_angle(theta)
        } else {
            theta
        }
    }

    /// Signed half step in `ψ`: equal to `δ(θ)` for forward motion and
    /// reduced modulo `π` into `(-π/2, 0)` for backward motion.
    pub fn half_step(&self, theta: T) -> T {
        if theta > T::PI() - self.beta_bar() {
            theta - T::PI()
        } else {
            self.delta(theta)
        }
    }

    pub fn delta_prime(&self, theta: T) -> Result<T, GuideError> {
        self.check_singular(theta)?;
        if self.hits_inner(theta) {
            let c = theta.cos();
            Ok(T::one() - theta.sin() / (self.r * self.r - c * c).sqrt())
        } else {
            Ok(T::one())
        }
    }

    pub fn delta_second(&self, theta: T) -> Result<T, GuideError> {
        self.check_singular(theta)?;
        if self.hits_inner(theta) {
            let c = theta.cos();
            let q = self.r * self.r - c * c;
            Ok(c * (T::one() - self.r * self.r) / (q * q * q).sqrt())
        } else {
            Ok(T::zero())
        }
    }

    /// Iterates `ψ ↦ ψ + 2δ(θ)` from an outer-circle collision until the
    /// orbit leaves `[0, α]`.
    pub fn advance(&self, state: &GuideEntryState<T>) -> Result<Advance<T>, GuideError> {
        if state.wall != GuideWall::Outer {
            return Err(GuideError::OutsideGuide);
        }
        let h = self.half_step(state.theta);
        if h.abs() <= T::lit(MIN_ADVANCE) {
            return Err(GuideError::NonpositiveAdvance { delta: h.to_f64().unwrap_or(f64::NAN) });
        }
        let room = if h > T::zero() { self.alpha - state.psi } else { state.psi };
        if room < T::zero() || state.psi > self.alpha {
            return Err(GuideError::OutsideGuide);
        }
        let step = T::two() * h.abs();
        let n1 = (room / step).floor().to_u64().unwrap_or(0);
        let last = state.psi + T::two() * h * T::count(n1);
        let inner_hits = if self.hits_inner(state.theta) {
            n1 + u64::from(room - step * T::count(n1) >= h.abs())
        } else {
            0
        };
        Ok(Advance { exit: GuideEntryState::outer(last, state.theta), n1, inner_hits })
    }

    /// `χ = 2 n₁ δ'(θ)`.
    pub fn chi(&self, state: &GuideEntryState<T>) -> Result<T, GuideError> {
        let adv = self.advance(state)?;
        Ok(T::two() * T::count(adv.n1) * self.delta_prime(state.theta)?)
    }

    /// `ω = α - 2 n₁ |δ|`, the angular remainder after the last outer collision
    /// counted from the entering one.
    pub fn omega(&self, state: &GuideEntryState<T>) -> Result<T, GuideError> {
        let adv = self.advance(state)?;
        Ok(self.alpha - T::two() * T::count(adv.n1) * self.half_step(state.theta).abs())
    }

    /// Constant `c(α, r) > 2` bounding `χ ≤ -c` on inner-hitting entries of a
    /// type A guide, returned with the split angle `θ̂`.
    pub fn compute_c(&self) -> Result<(T, T), GuideError> {
        if self.alpha < T::PI() {
            return Err(GuideError::NotTypeA { alpha: self.alpha.to_f64().unwrap_or(f64::NAN) });
        }
        let three = T::lit(3.0);
        let target = T::lit(-1.5);
        let half_pi = T::FRAC_PI_2();
        let theta_hat = if T::one() - self.r.recip() <= target {
            // δ' < -3/2 on the whole inner-hitting range
            half_pi
        } else {
            let mut lo = self.beta_bar();
            let mut hi = half_pi;
            let tol = T::lit(1e-12).max(T::epsilon() * T::lit(4.0));
            while hi - lo > tol {
                let mid = (lo + hi) / T::two();
                let d = match self.delta_prime(mid) {
                    Ok(d) => d,
                    Err(_) => {
                        lo = mid;
                        continue;
                    }
                };
                if d < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if !(lo > self.beta_bar()) {
                return Err(GuideError::NoRoot);
            }
            lo
        };
        let c = if theta_hat >= half_pi {
            three
        } else {
            let ratio = T::two() * (self.alpha - T::two() * self.delta(theta_hat)) / (T::PI() - T::two() * theta_hat);
            ratio.min(three)
        };
        if !(c > T::two()) {
            return Err(GuideError::ConstantTooSmall { c: c.to_f64().unwrap_or(f64::NAN) });
        }
        Ok((c, theta_hat))
    }

    /// `c̃` of the focal-length bound: `c(α, r)` for type A, `2(1/r - 1)` for
    /// type B; the larger of the two when both apply.
    pub fn c_tilde(&self) -> Result<T, GuideError> {
        let ty = self.guide_type();
        let a = if ty.is_a() { Some(self.compute_c()?.0) } else { None };
        let b = if ty.is_b() { Some(T::two() * (self.r.recip() - T::one())) } else { None };
        match (a, b) {
            (Some(a), Some(b)) => Ok(a.max(b)),
            (Some(c), None) | (None, Some(c)) => Ok(c),
            (None, None) => Err(GuideError::Unclassified),
        }
    }

    /// Upper bound `c̃ / (c̃ - 2)` on the focal length (unit outer radius).
    pub fn focal_bound(&self) -> Result<T, GuideError> {
        let c = self.c_tilde()?;
        Ok(c / (c - T::two()))
    }

    fn curvature(&self, wall: GuideWall) -> T {
        match wall {
            GuideWall::Outer => T::one(),
            GuideWall::Inner => -self.r.recip(),
        }
    }

    fn sin_at(&self, wall: GuideWall, outer_theta: T) -> T {
        match wall {
            GuideWall::Outer => outer_theta.sin(),
            GuideWall::Inner => self.inner_angle(outer_theta).sin(),
        }
    }

    /// Outer-circle angle of the orbit through `state`.
    pub fn outer_theta(&self, state: &GuideEntryState<T>) -> T {
        match state.wall {
            GuideWall::Outer => state.theta,
            GuideWall::Inner => (self.r * state.theta.cos()).acos(),
        }
    }

    /// Follows an entering collision through the guide and composes the
    /// per-collision derivatives along the way.
    pub fn passage(&self, entry: &GuideEntryState<T>) -> Result<Passage<T>, GuideError> {
        if entry.psi < T::zero() || entry.psi > self.alpha {
            return Err(GuideError::OutsideGuide);
        }
        let theta_o = self.outer_theta(entry);
        let h = self.half_step(theta_o);
        if h.abs() <= T::lit(MIN_ADVANCE) {
            return Err(GuideError::NonpositiveAdvance { delta: h.to_f64().unwrap_or(f64::NAN) });
        }
        let room = if h > T::zero() { self.alpha - entry.psi } else { entry.psi };
        let sign = if h > T::zero() { T::one() } else { -T::one() };
        let s_out = theta_o.sin();

        if !self.hits_inner(theta_o) {
            if entry.wall == GuideWall::Inner {
                return Err(GuideError::OutsideGuide);
            }
            let step = T::two() * h.abs();
            let n = (room / step).floor().to_u64().unwrap_or(0);
            let leg = collision_jacobian(T::one(), s_out, T::one(), s_out, T::two() * s_out);
            return Ok(Passage {
                entry: *entry,
                exit: GuideEntryState::outer(entry.psi + sign * step * T::count(n), theta_o),
                outer_theta: theta_o,
                collisions: n,
                outer_collisions: n,
                derivative: leg.pow(n),
            });
        }

        // alternate outer/inner collisions separated by |h|
        let s_in = self.sin_at(GuideWall::Inner, theta_o);
        let kin = self.curvature(GuideWall::Inner);
        let c = theta_o.cos();
        let chord = s_out - (self.r * self.r - c * c).max(T::zero()).sqrt();
        // the inner circle is traversed with the domain on its right
        let out_in = collision_jacobian(T::one(), s_out, kin, s_in, chord).scale(-T::one());
        let in_out = collision_jacobian(kin, s_in, T::one(), s_out, chord).scale(-T::one());
        let n = (room / h.abs()).floor().to_u64().unwrap_or(0);
        let pairs = n / 2;
        let (first, second) = match entry.wall {
            GuideWall::Outer => (out_in, in_out),
            GuideWall::Inner => (in_out, out_in),
        };
        let mut derivative = (second * first).pow(pairs);
        if n % 2 == 1 {
            derivative = first * derivative;
        }
        let exit_wall = match (entry.wall, n % 2) {
            (w, 0) => w,
            (GuideWall::Outer, _) => GuideWall::Inner,
            (GuideWall::Inner, _) => GuideWall::Outer,
        };
        let exit_psi = entry.psi + sign * h.abs() * T::count(n);
        let exit_theta = match exit_wall {
            GuideWall::Outer => theta_o,
            GuideWall::Inner => self.inner_angle(theta_o),
        };
        let outer_collisions = match entry.wall {
            GuideWall::Outer => n / 2,
            GuideWall::Inner => (n + 1) / 2,
        };
        Ok(Passage {
            entry: *entry,
            exit: GuideEntryState { wall: exit_wall, psi: exit_psi, theta: exit_theta },
            outer_theta: theta_o,
            collisions: n,
            outer_collisions,
            derivative,
        })
    }

    /// Linear fractional map sending the backward focusing time at the entry
    /// collision to the forward focusing time at the exit collision.
    pub fn transfer_map(&self, entry: &GuideEntryState<T>) -> Result<(TransferMap<T>, Passage<T>), GuideError> {
        let p = self.passage(entry)?;
        let map = TransferMap::from_passage(
            &p.derivative,
            self.curvature(p.entry.wall),
            self.sin_at(p.entry.wall, p.outer_theta),
            self.curvature(p.exit.wall),
            self.sin_at(p.exit.wall, p.outer_theta),
        );
        Ok((map, p))
    }

    /// Largest fixed point `τ₁` of the transfer map at `entry`.
    pub fn tau1(&self, entry: &GuideEntryState<T>) -> Result<T, GuideError> {
        let (map, _) = self.transfer_map(entry)?;
        Ok(map.fixed_points()?.0)
    }

    /// Entering collision of the orbit with outer angle `theta` whose first
    /// outer collision sits at phase `phase ∈ [0, 1)` of the outer period,
    /// or `None` when that orbit crosses the guide without a collision.
    pub fn entry_at_phase(&self, theta: T, phase: T) -> Option<GuideEntryState<T>> {
        let h = self.half_step(theta);
        if h.abs() <= T::lit(MIN_ADVANCE) {
            return None;
        }
        let period = T::two() * h.abs();
        let offset = phase * period;
        let (wall, dist) = if self.hits_inner(theta) && offset >= h.abs() {
            (GuideWall::Inner, offset - h.abs())
        } else {
            (GuideWall::Outer, offset)
        };
        if dist > self.alpha {
            return None;
        }
        let psi = if h > T::zero() { dist } else { self.alpha - dist };
        let theta_wall = match wall {
            GuideWall::Outer => theta,
            GuideWall::Inner => self.inner_angle(theta),
        };
        Some(GuideEntryState { wall, psi, theta: theta_wall })
    }

    /// Draws an entering outer-circle collision whose last collision in the
    /// guide is again on the outer circle, with `θ` uniform on `(0, π)`.
    pub fn sample_e1<R: Rng + ?Sized>(&self, rng: &mut R) -> GuideEntryState<T> {
        loop {
            let theta = T::lit(rng.gen::<f64>()) * T::PI();
            if self.check_singular(theta).is_err() || theta <= T::zero() {
                continue;
            }
            let phase = T::lit(rng.gen::<f64>());
            let Some(entry) = self.entry_at_phase(theta, phase) else { continue };
            if entry.wall != GuideWall::Outer {
                continue;
            }
            match self.passage(&entry) {
                Ok(p) if p.exit.wall == GuideWall::Outer => return entry,
                _ => continue,
            }
        }
    }

    /// Whether `entry` is in `E₁`: entering and leaving the guide through
    /// outer-circle collisions.
    pub fn is_e1(&self, entry: &GuideEntryState<T>) -> bool {
        entry.wall == GuideWall::Outer
            && matches!(self.passage(entry), Ok(p) if p.exit.wall == GuideWall::Outer)
    }
}

/// Resolution of the entering-state grid used for the numeric focal length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FocalGrid {
    /// Collision angles spread over `(0, π)`.
    pub angles: usize,
    /// Phases of the first collision per angle.
    pub positions: usize,
    /// Density multiplier of the extra angles placed around `β̄` and `π - β̄`.
    pub refine: usize,
    /// Half-width of each refined window, in coarse angle spacings.
    pub refine_halfwidth: usize,
}

impl Default for FocalGrid {
    fn default() -> Self {
        Self { angles: 2000, positions: 2000, refine: 10, refine_halfwidth: 50 }
    }
}

impl FocalGrid {
    pub fn coarse(angles: usize, positions: usize) -> Self {
        Self { angles, positions, ..Self::default() }
    }

    fn angles<T: Scalar>(&self, guide: &NormalizedGuide<T>) -> Vec<T> {
        let n = self.angles.max(2);
        let spacing = T::PI() / T::count(n as u64);
        let mut out: Vec<T> = (0..n).map(|j| (T::count(j as u64) + T::lit(0.5)) * spacing).collect();
        if self.refine > 1 {
            let fine = spacing / T::count(self.refine as u64);
            let count = self.refine * self.refine_halfwidth;
            for centre in [guide.beta_bar(), T::PI() - guide.beta_bar()] {
                for k in 0..(2 * count) {
                    let off = (T::count(k as u64) - T::count(count as u64) + T::lit(0.5)) * fine;
                    let th = centre + off;
                    if th > T::zero() && th < T::PI() {
                        out.push(th);
                    }
                }
            }
        }
        out
    }
}

/// Numeric focal length of a guide together with its analytic bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalLength<T> {
    /// Supremum of `τ₁` over all sampled entering collisions.
    pub numeric: T,
    /// Supremum of `τ₁` over sampled entries in `E₁`.
    pub numeric_e1: T,
    /// `c̃ / (c̃ - 2)`, or `None` for guides outside types A and B.
    pub bound: Option<T>,
    /// Entering collision attaining `numeric`.
    pub argmax: Option<GuideEntryState<T>>,
    pub samples: usize,
}

impl<T: Scalar> NormalizedGuide<T> {
    /// Grid estimate of `τ̃ = sup τ₁` over entering collisions.
    pub fn focal_length(&self, grid: &FocalGrid) -> Result<FocalLength<T>, GuideError> {
        let bound = self.focal_bound().ok();
        let angles = grid.angles(self);
        let positions = grid.positions.max(1);

        #[derive(Clone, Copy)]
        struct Acc<T> {
            all: T,
            e1: T,
            arg: Option<GuideEntryState<T>>,
            n: usize,
            err: Option<GuideError>,
        }
        let empty = Acc { all: T::neg_infinity(), e1: T::neg_infinity(), arg: None, n: 0, err: None };
        let merge = |a: Acc<T>, b: Acc<T>| Acc {
            all: a.all.max(b.all),
            e1: a.e1.max(b.e1),
            arg: if b.all > a.all { b.arg } else { a.arg },
            n: a.n + b.n,
            err: a.err.or(b.err),
        };

        let acc = angles
            .par_iter()
            .map(|&theta| {
                let mut acc = empty;
                if self.check_singular(theta).is_err() {
                    return acc;
                }
                for k in 0..positions {
                    let phase = (T::count(k as u64) + T::lit(0.5)) / T::count(positions as u64);
                    let Some(entry) = self.entry_at_phase(theta, phase) else { continue };
                    let (map, passage) = match self.transfer_map(&entry) {
                        Ok(v) => v,
                        Err(GuideError::NonpositiveAdvance { .. }) => continue,
                        Err(e) => {
                            acc.err = Some(e);
                            continue;
                        }
                    };
                    let tau1 = match map.fixed_points() {
                        Ok((t1, _)) => t1,
                        Err(e) => {
                            acc.err = Some(e.into());
                            continue;
                        }
                    };
                    acc.n += 1;
                    if tau1 > acc.all {
                        acc.all = tau1;
                        acc.arg = Some(entry);
                    }
                    if entry.wall == GuideWall::Outer && passage.exit.wall == GuideWall::Outer {
                        acc.e1 = acc.e1.max(tau1);
                    }
                }
                acc
            })
            .reduce(|| empty, merge);

        if let Some(e) = acc.err {
            return Err(e);
        }
        Ok(FocalLength { numeric: acc.all, numeric_e1: acc.e1, bound, argmax: acc.arg, samples: acc.n })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, PI};

    fn guide(r: f64, alpha: f64) -> NormalizedGuide<f64> {
        NormalizedGuide::new(r, alpha).unwrap()
    }

    #[test]
    fn delta_branches() {
        let g = guide(0.5, PI);
        assert!((g.beta_bar() - FRAC_PI_3).abs() < 1e-15);
        assert_eq!(g.delta(FRAC_PI_4), FRAC_PI_4);
        assert!(g.delta(FRAC_PI_2).abs() < 1e-15);
        assert!((g.delta(FRAC_PI_3) - FRAC_PI_3).abs() < 1e-7);
        // arccos near 1 loses half the digits
        assert!((g.delta(g.beta_bar()) - g.beta_bar()).abs() < 1e-7);
    }

    #[test]
    fn delta_prime_at_right_angle() {
        for r in [0.2, 0.4, 0.75, 0.95] {
            let g = guide(r, PI);
            assert!((g.delta_prime(FRAC_PI_2).unwrap() - (1.0 - 1.0 / r)).abs() < 1e-12);
        }
        assert!((guide(0.4, PI).delta_prime(FRAC_PI_2).unwrap() + 1.5).abs() < 1e-12);
    }

    #[test]
    fn singular_angles_rejected() {
        let g = guide(0.5, PI);
        assert!(matches!(g.delta_prime(g.beta_bar()), Err(GuideError::Singular { .. })));
        assert!(matches!(g.delta_second(PI - g.beta_bar()), Err(GuideError::Singular { .. })));
        assert_eq!(g.delta_prime(0.2).unwrap(), 1.0);
        assert_eq!(g.delta_second(0.2).unwrap(), 0.0);
    }

    #[test]
    fn delta_is_convex_on_inner_band() {
        let g = guide(0.6, PI);
        let bb = g.beta_bar();
        for k in 1..100 {
            let th = bb + (FRAC_PI_2 - bb) * k as f64 / 100.0;
            assert!(g.delta_second(th).unwrap() > 0.0);
        }
    }

    #[test]
    fn advance_example() {
        let g = guide(0.5, PI);
        let adv = g.advance(&GuideEntryState::outer(0.1, FRAC_PI_4)).unwrap();
        assert_eq!(adv.n1, 1);
        assert_eq!(adv.inner_hits, 0);
        assert!((adv.exit.psi - (0.1 + FRAC_PI_2)).abs() < 1e-15);
        assert_eq!(adv.exit.theta, FRAC_PI_4);
    }

    #[test]
    fn advance_at_right_angle_does_not_move() {
        let g = guide(0.5, PI);
        let err = g.advance(&GuideEntryState::outer(0.1, FRAC_PI_2)).unwrap_err();
        assert!(matches!(err, GuideError::NonpositiveAdvance { .. }));
    }

    #[test]
    fn backward_motion_advances_towards_zero() {
        let g = guide(0.5, PI);
        let th = PI - FRAC_PI_4;
        let adv = g.advance(&GuideEntryState::outer(PI - 0.1, th)).unwrap();
        assert_eq!(adv.n1, 1);
        assert!((adv.exit.psi - (PI - 0.1 - FRAC_PI_2)).abs() < 1e-12);
    }

    #[test]
    fn chi_examples() {
        // δ' = 1 below β̄
        let g = guide(0.5, PI);
        let s = GuideEntryState::outer(0.05, 0.3);
        let n1 = g.advance(&s).unwrap().n1;
        assert_eq!(g.chi(&s).unwrap(), 2.0 * n1 as f64);

        let g = guide(0.4, PI);
        let th = FRAC_PI_2 - 0.05;
        let expected = 1.0 - th.sin() / (0.16 - th.cos().powi(2)).sqrt();
        assert!((g.delta_prime(th).unwrap() - expected).abs() < 1e-15);
        assert!((2.0 * expected + 3.033_194_934_051_342).abs() < 1e-12);
    }

    #[test]
    fn omega_without_returns_is_alpha() {
        let g = guide(0.5, 1.0);
        let s = GuideEntryState::outer(0.9, 0.4);
        assert_eq!(g.advance(&s).unwrap().n1, 0);
        assert_eq!(g.omega(&s).unwrap(), 1.0);
    }

    #[test]
    fn compute_c_requires_type_a() {
        assert!(matches!(guide(0.4, 2.0).compute_c(), Err(GuideError::NotTypeA { .. })));
        let (c, th) = guide(0.7777777777777778, PI).compute_c().unwrap();
        assert!(c > 2.0 && c <= 3.0);
        let g = guide(0.7777777777777778, PI);
        assert!((g.delta_prime(th).unwrap() + 1.5).abs() < 1e-9);
    }

    #[test]
    fn compute_c_is_nondecreasing_in_alpha() {
        for r in [0.5, 0.7, 0.8, 0.9, 0.95] {
            let mut prev = 0.0;
            for k in 0..=20 {
                let alpha = PI + PI * k as f64 / 20.0;
                let (c, _) = guide(r, alpha).compute_c().unwrap();
                assert!(c >= prev - 1e-15, "r = {r}, α = {alpha}");
                prev = c;
            }
        }
    }

    #[test]
    fn small_ratio_saturates_c() {
        // 1 - 1/r <= -3/2 for r <= 0.4
        let (c, th) = guide(0.3, PI).compute_c().unwrap();
        assert_eq!(c, 3.0);
        assert_eq!(th, FRAC_PI_2);
    }

    #[test]
    fn type_b_bound() {
        let g = guide(0.4, 1.0);
        assert_eq!(g.guide_type(), GuideType::B);
        assert!((g.c_tilde().unwrap() - 3.0).abs() < 1e-15);
        assert!((g.focal_bound().unwrap() - 3.0).abs() < 1e-14);
        assert!(matches!(guide(0.9, 1.0).c_tilde(), Err(GuideError::Unclassified)));
    }

    #[test]
    fn classification_rules() {
        assert_eq!(GuideType::classify(0.7778, PI), GuideType::A);
        assert_eq!(GuideType::classify(0.4286, 1.0), GuideType::B);
        assert_eq!(GuideType::classify(0.9, FRAC_PI_2), GuideType::Neither);
        assert_eq!(GuideType::classify(0.3, PI), GuideType::AB);
    }

    #[test]
    fn e1_fixed_points_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (r, alpha) in [(0.4, 2.0), (0.7, PI), (0.6, 1.5 * PI)] {
            let g = guide(r, alpha);
            for _ in 0..500 {
                let x = g.sample_e1(&mut rng);
                let adv = g.advance(&x).unwrap();
                let (map, passage) = g.transfer_map(&x).unwrap();
                assert_eq!(passage.outer_collisions, adv.n1);
                let chi = g.chi(&x).unwrap();
                let s = x.theta.sin();
                let (t1, t2) = map.fixed_points().unwrap();
                let m_shear = Mat2::new(1.0, chi, 0.0, 1.0);
                assert!(passage.derivative.max_abs_diff(&m_shear) < 1e-9 * (1.0 + chi.abs()));
                if adv.n1 == 0 {
                    assert!((t1 - s).abs() < 1e-9);
                    continue;
                }
                let other = s / (1.0 + 2.0 / chi);
                let (e1, e2) = if g.hits_inner(x.theta) { (other, s) } else { (s, other) };
                assert!((t1 - e1).abs() < 1e-8 * (1.0 + e1.abs()), "{t1} vs {e1}");
                assert!((t2 - e2).abs() < 1e-8 * (1.0 + e2.abs()), "{t2} vs {e2}");
                assert!(map.det() < 0.0);
            }
        }
    }

    #[test]
    fn transfer_map_example_value() {
        // r = 0.4, θ = π/2 - 0.05, χ = -3
        let th: f64 = FRAC_PI_2 - 0.05;
        let tau1 = th.sin() / (1.0 - 2.0 / 3.0);
        assert!((tau1 - 2.996).abs() < 1e-3);
    }

    #[test]
    fn phase_grid_covers_inner_entries() {
        let g = guide(0.5, PI);
        let th = 1.3;
        let a = g.entry_at_phase(th, 0.25).unwrap();
        let b = g.entry_at_phase(th, 0.75).unwrap();
        assert_eq!(a.wall, GuideWall::Outer);
        assert_eq!(b.wall, GuideWall::Inner);
        assert!((g.outer_theta(&b) - th).abs() < 1e-12);
    }

    #[test]
    fn coarse_focal_length_within_bound() {
        let g = guide(0.4, 2.0);
        let fl = g.focal_length(&FocalGrid::coarse(200, 200)).unwrap();
        assert!(fl.numeric_e1 <= fl.numeric);
        assert!(fl.numeric <= fl.bound.unwrap() + 1e-9, "{} > {:?}", fl.numeric, fl.bound);
    }

    #[test]
    fn f32_formulas() {
        let g = NormalizedGuide::<f32>::new(0.4, std::f32::consts::PI).unwrap();
        let d = g.delta_prime(std::f32::consts::FRAC_PI_2).unwrap();
        assert!((d + 1.5).abs() < 1e-5);
        assert!((g.c_tilde().unwrap() - 3.0).abs() < 1e-5);
    }
}
