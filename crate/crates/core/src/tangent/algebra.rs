//! Scalar-generic tangent algebra in `(s, θ)` coordinates.
//!
//! Conventions: `θ ∈ [0, π]` is measured from the oriented boundary tangent,
//! the curvature `κ` is positive on focusing walls, and a tangent vector
//! `(ds, dθ)` has slope `m = dθ/ds`. Focusing times are stored as plain
//! scalars with `+∞` standing for the point at infinity of the projective
//! line.

use std::ops::Mul;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum TransferError {
    /// The fixed-point quadratic of a transfer map has no real roots.
    #[error("transfer map has no real fixed points (discriminant {discriminant})")]
    Degenerate { discriminant: f64 },
}

/// Row-major 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2<T> {
    pub m: [[T; 2]; 2],
}

impl<T: Scalar> Mat2<T> {
    pub fn new(a: T, b: T, c: T, d: T) -> Self {
        Self { m: [[a, b], [c, d]] }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::one())
    }

    pub fn det(&self) -> T {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply(&self, v: [T; 2]) -> [T; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    pub fn scale(&self, k: T) -> Self {
        Self::new(self.m[0][0] * k, self.m[0][1] * k, self.m[1][0] * k, self.m[1][1] * k)
    }

    /// `self^n` by repeated squaring.
    pub fn pow(&self, mut n: u64) -> Self {
        let mut base = *self;
        let mut acc = Self::identity();
        while n > 0 {
            if n & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            n >>= 1;
        }
        acc
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut worst = T::zero();
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.m[i][j] - o.m[i][j]).abs());
            }
        }
        worst
    }
}

impl<T: Scalar> Mul for Mat2<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let a = &self.m;
        let b = &o.m;
        Self::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

fn proj_div<T: Scalar>(num: T, den: T) -> T {
    if den == T::zero() {
        T::infinity()
    } else {
        let q = num / den;
        if q.is_infinite() {
            T::infinity()
        } else {
            q
        }
    }
}

/// Forward focusing time `sin θ / (κ + m)` of the tangent vector `(ds, dθ)`.
pub fn forward_focusing_time<T: Scalar>(sin_theta: T, kappa: T, ds: T, dtheta: T) -> T {
    proj_div(sin_theta * ds, kappa * ds + dtheta)
}

/// Backward focusing time `sin θ / (κ - m)` of the tangent vector `(ds, dθ)`.
pub fn backward_focusing_time<T: Scalar>(sin_theta: T, kappa: T, ds: T, dtheta: T) -> T {
    proj_div(sin_theta * ds, kappa * ds - dtheta)
}

/// `(f⁺, f⁻)` for a tangent vector with slope `m`.
pub fn focusing_times<T: Scalar>(sin_theta: T, kappa: T, slope: T) -> (T, T) {
    (
        forward_focusing_time(sin_theta, kappa, T::one(), slope),
        backward_focusing_time(sin_theta, kappa, T::one(), slope),
    )
}

/// Residual of `1/f⁺ + 1/f⁻ = 2κ / sin θ`.
pub fn mirror_residual<T: Scalar>(sin_theta: T, kappa: T, slope: T) -> T {
    let (fp, fm) = focusing_times(sin_theta, kappa, slope);
    (fp.recip() + fm.recip() - T::two() * kappa / sin_theta).abs()
}

/// Slope of the tangent vectors whose backward focusing time equals `f`.
pub fn slope_from_backward<T: Scalar>(sin_theta: T, kappa: T, f: T) -> T {
    if f.is_infinite() {
        kappa
    } else {
        kappa - sin_theta / f
    }
}

/// Derivative of the billiard map between two consecutive collisions.
///
/// `kappa0, sin0` describe the departure collision, `kappa1, sin1` the arrival
/// collision and `flight` the free path between them. Both ends are expressed
/// in the orientation that keeps the domain on the left of the tangent;
/// callers flip the sign of the result for every end oriented the other way.
pub fn collision_jacobian<T: Scalar>(kappa0: T, sin0: T, kappa1: T, sin1: T, flight: T) -> Mat2<T> {
    let inv = sin1.recip();
    Mat2::new(
        (flight * kappa0 - sin0) * inv,
        flight * inv,
        (flight * kappa0 * kappa1 - kappa0 * sin1 - kappa1 * sin0) * inv,
        (flight * kappa1 - sin1) * inv,
    )
}

/// Linear fractional map `f ↦ (a f + b) / (c f + d)` on focusing times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMap<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
}

impl<T: Scalar> TransferMap<T> {
    /// Map sending the backward focusing time at the first collision of a
    /// passage to the forward focusing time at its last collision, given the
    /// passage derivative `m`.
    pub fn from_passage(m: &Mat2<T>, kappa_in: T, sin_in: T, kappa_out: T, sin_out: T) -> Self {
        // u = (f, κ_in f - sin_in) has backward focusing time f
        let [[p, q], [r, s]] = m.m;
        let lead = p + q * kappa_in;
        let lead_theta = r + s * kappa_in;
        Self {
            a: sin_out * lead,
            b: -sin_out * q * sin_in,
            c: kappa_out * lead + lead_theta,
            d: -(kappa_out * q + s) * sin_in,
        }
    }

    /// Map from the forward focusing time at a collision to the backward
    /// focusing time at a later collision, given the derivative `m` between
    /// them.
    pub fn forward_to_backward(m: &Mat2<T>, kappa_in: T, sin_in: T, kappa_out: T, sin_out: T) -> Self {
        // u = (f, sin_in - κ_in f) has forward focusing time f
        let [[p, q], [r, s]] = m.m;
        let lead = p - q * kappa_in;
        let lead_theta = r - s * kappa_in;
        Self {
            a: sin_out * lead,
            b: sin_out * q * sin_in,
            c: kappa_out * lead - lead_theta,
            d: (kappa_out * q - s) * sin_in,
        }
    }

    /// Map from the backward focusing time at a collision to the backward
    /// focusing time at a later collision.
    pub fn backward_to_backward(m: &Mat2<T>, kappa_in: T, sin_in: T, kappa_out: T, sin_out: T) -> Self {
        let [[p, q], [r, s]] = m.m;
        let lead = p + q * kappa_in;
        let lead_theta = r + s * kappa_in;
        Self {
            a: sin_out * lead,
            b: -sin_out * q * sin_in,
            c: kappa_out * lead - lead_theta,
            d: (s - kappa_out * q) * sin_in,
        }
    }

    pub fn det(&self) -> T {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(&self, f: T) -> T {
        if f.is_infinite() {
            proj_div(self.a, self.c)
        } else {
            proj_div(self.a * f + self.b, self.c * f + self.d)
        }
    }

    /// Pole of the map (the input sent to infinity).
    pub fn pole(&self) -> T {
        if self.c == T::zero() {
            T::infinity()
        } else {
            -self.d / self.c
        }
    }

    /// Fixed points `(τ₁, τ₂)` with `τ₁ ≥ τ₂`; `+∞` is the largest value.
    pub fn fixed_points(&self) -> Result<(T, T), TransferError> {
        // c f² + (d - a) f - b = 0
        let lin = self.d - self.a;
        let scale = self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs());
        if self.c.abs() <= T::epsilon() * scale {
            if lin == T::zero() {
                return Ok((T::infinity(), T::infinity()));
            }
            return Ok((T::infinity(), self.b / lin));
        }
        let disc = lin * lin + T::lit(4.0) * self.b * self.c;
        let tol = T::epsilon() * T::lit(64.0) * (lin * lin + (T::lit(4.0) * self.b * self.c).abs());
        if disc < -tol {
            return Err(TransferError::Degenerate {
                discriminant: disc.to_f64().unwrap_or(f64::NAN),
            });
        }
        let sq = disc.max(T::zero()).sqrt();
        let q = if lin >= T::zero() { -(lin + sq) / T::two() } else { -(lin - sq) / T::two() };
        let (f1, f2) = if q == T::zero() {
            (T::zero(), T::zero())
        } else {
            (q / self.c, -self.b / q)
        };
        Ok(if f1 >= f2 { (f1, f2) } else { (f2, f1) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_case_of_focusing_times() {
        let (fp, fm) = focusing_times(0.6f64, 2.0, 0.0);
        assert_eq!(fp, 0.3);
        assert_eq!(fm, 0.3);
    }

    #[test]
    fn flat_wall_parallel_beam() {
        let (fp, fm) = focusing_times(0.6f64, 0.0, 0.0);
        assert!(fp.is_infinite() && fm.is_infinite());
    }

    #[test]
    fn vertical_tangent_has_zero_focusing_times() {
        assert_eq!(forward_focusing_time(0.5f64, 1.0, 0.0, 1.0), 0.0);
        assert_eq!(backward_focusing_time(0.5f64, 1.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn jacobian_on_circle_is_shear() {
        // chord of the unit circle: flight 2 sin θ, T(s, θ) = (s + 2θ, θ)
        let th = 0.7f64;
        let j = collision_jacobian(1.0, th.sin(), 1.0, th.sin(), 2.0 * th.sin());
        assert!(j.max_abs_diff(&Mat2::new(1.0, 2.0, 0.0, 1.0)) < 1e-15);
    }

    #[test]
    fn jacobian_determinant() {
        let j = collision_jacobian(0.4f64, 0.3, -1.5, 0.8, 1.7);
        assert!((j.det() - 0.3 / 0.8).abs() < 1e-14);
    }

    #[test]
    fn matrix_power_matches_repeated_product() {
        let m = Mat2::new(1.1f64, 0.3, -0.2, 0.9);
        let mut acc = Mat2::identity();
        for _ in 0..13 {
            acc = acc * m;
        }
        assert!(m.pow(13).max_abs_diff(&acc) < 1e-12);
    }

    #[test]
    fn shear_transfer_map_fixed_points() {
        // unit outer circle, passage [[1, χ], [0, 1]]
        let th = 1.2f64;
        let chi = -3.0;
        let map = TransferMap::from_passage(&Mat2::new(1.0, chi, 0.0, 1.0), 1.0, th.sin(), 1.0, th.sin());
        let (t1, t2) = map.fixed_points().unwrap();
        assert!((t1 - th.sin() / (1.0 + 2.0 / chi)).abs() < 1e-12);
        assert!((t2 - th.sin()).abs() < 1e-12);
        assert!(map.det() < 0.0);
    }

    #[test]
    fn constructors_agree_with_direct_evaluation() {
        let m = Mat2::new(0.7f64, 1.3, -0.4, 0.9);
        let (k0, s0, k1, s1) = (0.5, 0.8, -1.2, 0.6);
        for slope in [-2.0, -0.3, 0.1, 0.45, 3.0] {
            let [ds, dt] = m.apply([1.0, slope]);
            let (fp0, fm0) = focusing_times(s0, k0, slope);
            let fp1 = forward_focusing_time(s1, k1, ds, dt);
            let fm1 = backward_focusing_time(s1, k1, ds, dt);
            let close = |a: f64, b: f64| (a - b).abs() < 1e-12 * (1.0 + a.abs());
            assert!(close(TransferMap::from_passage(&m, k0, s0, k1, s1).apply(fm0), fp1));
            assert!(close(TransferMap::forward_to_backward(&m, k0, s0, k1, s1).apply(fp0), fm1));
            assert!(close(TransferMap::backward_to_backward(&m, k0, s0, k1, s1).apply(fm0), fm1));
        }
    }

    #[test]
    fn complex_fixed_points_are_degenerate() {
        // rotation-like map f -> -1/f has no real fixed points
        let map = TransferMap { a: 0.0f64, b: -1.0, c: 1.0, d: 0.0 };
        assert!(map.fixed_points().is_err());
    }
}
