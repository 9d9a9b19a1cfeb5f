//! Tangent dynamics: focusing times, transfer maps, invariant cones and
//! Lyapunov exponents.

pub mod algebra;
pub mod cone;
pub mod lyapunov;

pub use algebra::{
    backward_focusing_time, collision_jacobian, focusing_times, forward_focusing_time, mirror_residual,
    slope_from_backward, Mat2, TransferError, TransferMap,
};

use crate::dynamics::{jacobian, step, CollisionState, DynError};
use crate::track::TrackGeometry;

/// Tangent vector `(ds, dθ)` at a collision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    pub base: CollisionState,
    pub ds: f64,
    pub dtheta: f64,
}

impl TangentVector {
    pub fn new(base: CollisionState, ds: f64, dtheta: f64) -> Self {
        debug_assert!(ds != 0.0 || dtheta != 0.0);
        Self { base, ds, dtheta }
    }

    /// `dθ/ds`, infinite when `ds = 0`.
    pub fn slope(&self) -> f64 {
        if self.ds == 0.0 {
            f64::INFINITY
        } else {
            self.dtheta / self.ds
        }
    }

    /// `(f⁺, f⁻)` at the base collision.
    pub fn focusing_times(&self, geometry: &TrackGeometry) -> (f64, f64) {
        let k = geometry.walls[self.base.wall].curvature;
        let s = self.base.theta.sin();
        (
            forward_focusing_time(s, k, self.ds, self.dtheta),
            backward_focusing_time(s, k, self.ds, self.dtheta),
        )
    }
}

/// Pushes `u` forward by one collision; also returns the flight length.
pub fn tangent_step(geometry: &TrackGeometry, u: &TangentVector) -> Result<(TangentVector, f64), DynError> {
    let st = step(geometry, &u.base)?;
    let [ds, dtheta] = jacobian(geometry, &u.base, &st.next, st.flight).apply([u.ds, u.dtheta]);
    Ok((TangentVector { base: st.next, ds, dtheta }, st.flight))
}
