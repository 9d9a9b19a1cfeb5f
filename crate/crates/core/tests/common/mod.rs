#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};

use trackbill::track::{build_track, GuideSpec, TrackGeometry, TrackSpec, Turn};

/// Type A stadium ring: R = 2, ε = 0.25, half-turn arcs, straights of 16.
pub fn h_track_spec() -> TrackSpec {
    stadium_spec(2.0, 0.25, 16.0)
}

/// Type B stadium ring: r₁ = 1, r = 0.4.
pub fn type_b_spec(length: f64) -> TrackSpec {
    stadium_spec(0.7, 0.3, length)
}

pub fn stadium_spec(radius: f64, eps: f64, length: f64) -> TrackSpec {
    TrackSpec::planar(
        eps,
        vec![
            GuideSpec::straight(length),
            GuideSpec::arc(radius, PI, Turn::Left),
            GuideSpec::straight(length),
            GuideSpec::arc(radius, PI, Turn::Left),
        ],
    )
}

/// Non-convex track with a notch and two right turns.
pub fn notched_spec() -> TrackSpec {
    let (r, t) = (0.6, FRAC_PI_2);
    TrackSpec::planar(
        0.25,
        vec![
            GuideSpec::straight(6.0),
            GuideSpec::arc(r, t, Turn::Left),
            GuideSpec::straight(4.0),
            GuideSpec::arc(r, t, Turn::Left),
            GuideSpec::straight(1.0),
            GuideSpec::arc(r, t, Turn::Left),
            GuideSpec::straight(2.0),
            GuideSpec::arc(r, t, Turn::Right),
            GuideSpec::straight(1.0),
            GuideSpec::arc(r, t, Turn::Right),
            GuideSpec::straight(2.0),
            GuideSpec::arc(r, t, Turn::Left),
            // 6 - 1 - 4r - 1
            GuideSpec::straight(6.0 - 2.0 - 4.0 * r),
            GuideSpec::arc(r, t, Turn::Left),
            GuideSpec::straight(4.0),
            GuideSpec::arc(r, t, Turn::Left),
        ],
    )
}

pub fn h_track() -> TrackGeometry {
    build_track(&h_track_spec()).unwrap()
}

pub fn type_b_track() -> TrackGeometry {
    build_track(&type_b_spec(7.0)).unwrap()
}

pub fn notched_track() -> TrackGeometry {
    build_track(&notched_spec()).unwrap()
}
