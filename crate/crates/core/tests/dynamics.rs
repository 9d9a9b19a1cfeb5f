mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trackbill::dynamics::{jacobian, reverse, sample_mu, step, CollisionState};
use trackbill::track::TrackGeometry;

fn all_tracks() -> Vec<TrackGeometry> {
    vec![common::h_track(), common::type_b_track(), common::notched_track()]
}

fn local_u(g: &TrackGeometry, x: &CollisionState) -> f64 {
    x.s - g.walls[x.wall].s_offset
}

/// Central differences of the collision map in `(s, θ)`, or `None` when a
/// perturbed orbit lands on another wall.
fn fd_jacobian(g: &TrackGeometry, x: &CollisionState, h: f64) -> Option<[[f64; 2]; 2]> {
    let y = step(g, x).ok()?.next;
    let u = local_u(g, x);
    let w = &g.walls[x.wall];
    if u - h < 0.0 || u + h > w.length {
        return None;
    }
    let probe = |du: f64, dt: f64| -> Option<(f64, f64)> {
        let p = CollisionState::on_wall(g, x.wall, u + du, x.theta + dt);
        let z = step(g, &p).ok()?.next;
        (z.wall == y.wall).then(|| (local_u(g, &z), z.theta))
    };
    let (a, b) = (probe(h, 0.0)?, probe(-h, 0.0)?);
    let (c, d) = (probe(0.0, h)?, probe(0.0, -h)?);
    Some([
        [(a.0 - b.0) / (2.0 * h), (c.0 - d.0) / (2.0 * h)],
        [(a.1 - b.1) / (2.0 * h), (c.1 - d.1) / (2.0 * h)],
    ])
}

#[test]
fn tangent_map_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for g in all_tracks() {
        let mut checked = 0;
        while checked < 1000 {
            let x = sample_mu(&g, &mut rng, None);
            if x.theta.sin() < 0.05 {
                continue;
            }
            let Ok(st) = step(&g, &x) else { continue };
            if st.next.theta.sin() < 0.05 {
                continue;
            }
            let Some(fd) = fd_jacobian(&g, &x, 1e-6) else { continue };
            let j = jacobian(&g, &x, &st.next, st.flight);
            let scale = j.m.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
            let mut err = 0.0f64;
            for i in 0..2 {
                for k in 0..2 {
                    err = err.max((fd[i][k] - j.m[i][k]).abs());
                }
            }
            assert!(err / scale < 1e-5, "fd {fd:?} vs {:?} at {x:?}", j.m);
            checked += 1;
        }
    }
}

#[test]
fn determinant_is_ratio_of_sines() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for g in all_tracks() {
        for _ in 0..10_000 {
            let x = sample_mu(&g, &mut rng, None);
            let Ok(st) = step(&g, &x) else { continue };
            let j = jacobian(&g, &x, &st.next, st.flight);
            assert!((j.det() - x.theta.sin() / st.next.theta.sin()).abs() < 1e-9 * (1.0 + j.det().abs()));
        }
    }
}

#[test]
fn time_reversal() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for g in all_tracks() {
        for _ in 0..10_000 {
            let x = sample_mu(&g, &mut rng, None);
            let Ok(a) = step(&g, &x) else { continue };
            let Ok(b) = step(&g, &reverse(&g, &a.next)) else { continue };
            let back = reverse(&g, &b.next);
            assert_eq!(back.wall, x.wall);
            assert!((back.q - x.q).norm() < 1e-8);
            assert!((back.v - x.v).norm() < 1e-8);
            assert!((back.theta - x.theta).abs() < 1e-8);
        }
    }
}

#[test]
fn speed_stays_unit() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let g = common::h_track();
    let mut x = sample_mu(&g, &mut rng, None);
    for _ in 0..100_000 {
        x = step(&g, &x).unwrap().next;
        assert!((x.v.norm() - 1.0).abs() < 1e-12);
    }
}
