mod common;

use std::f64::consts::PI;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trackbill::dynamics::{jacobian, reverse, sample_mu, step, v_star};
use trackbill::track::TrackGeometry;
use trackbill::geom::{reflect, Vec2};
use trackbill::guide::{GuideEntryState, NormalizedGuide};
use trackbill::tangent::{backward_focusing_time, focusing_times, mirror_residual, slope_from_backward, Mat2, TransferMap};

fn tracks() -> &'static [TrackGeometry; 3] {
    static TRACKS: OnceLock<[TrackGeometry; 3]> = OnceLock::new();
    TRACKS.get_or_init(|| [common::h_track(), common::type_b_track(), common::notched_track()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn mirror_formula(theta in 0.05f64..(PI - 0.05), m in -10.0f64..10.0, kappa in -5.0f64..5.0) {
        let s = theta.sin();
        let scale = 1.0 + (kappa.abs() + m.abs()) / s;
        prop_assert!(mirror_residual(s, kappa, m) < 1e-12 * scale);
    }

    #[test]
    fn zero_slope_focuses_symmetrically(theta in 0.05f64..(PI - 0.05), kappa in 0.1f64..5.0) {
        let (fp, fm) = focusing_times(theta.sin(), kappa, 0.0);
        prop_assert!((fp - fm).abs() < 1e-15 * fp);
        prop_assert!((fp - theta.sin() / kappa).abs() < 1e-15 * fp);
    }

    #[test]
    fn backward_time_inverts(theta in 0.05f64..(PI - 0.05), kappa in -3.0f64..3.0, f in 0.01f64..100.0) {
        let s = theta.sin();
        let m = slope_from_backward(s, kappa, f);
        prop_assert!((backward_focusing_time(s, kappa, 1.0, m) - f).abs() < 1e-9 * f);
    }

    #[test]
    fn reflection_is_an_isometric_involution(a in 0.0f64..6.3, b in 0.0f64..6.3) {
        let v = Vec2::from_angle(a);
        let n = Vec2::from_angle(b);
        let w = reflect(v, n);
        prop_assert!((w.norm() - 1.0).abs() < 1e-15);
        prop_assert!((reflect(w, n) - v).norm() < 1e-15);
    }

    #[test]
    fn delta_derivative_matches_differences(r in 0.1f64..0.95, t in 0.0f64..1.0) {
        let g = NormalizedGuide::new(r, PI).unwrap();
        let bb = g.beta_bar();
        let theta = bb + 1e-3 + t * (PI - 2.0 * bb - 2e-3);
        let h = 1e-6;
        let fd = (g.delta(theta + h) - g.delta(theta - h)) / (2.0 * h);
        let d1 = g.delta_prime(theta).unwrap();
        prop_assert!((fd - d1).abs() < 1e-6 * (1.0 + d1.abs()));
        let fd2 = (g.delta_prime(theta + h).unwrap() - g.delta_prime(theta - h).unwrap()) / (2.0 * h);
        let d2 = g.delta_second(theta).unwrap();
        prop_assert!((fd2 - d2).abs() < 1e-6 * (1.0 + d2.abs()));
    }

    #[test]
    fn advance_keeps_the_angle_and_stays_inside(r in 0.1f64..0.95, alpha in 0.5f64..6.2, psi in 0.0f64..1.0, theta in 0.01f64..(PI - 0.01)) {
        let g = NormalizedGuide::new(r, alpha).unwrap();
        let e = GuideEntryState::outer(psi * alpha, theta);
        if let Ok(a) = g.advance(&e) {
            prop_assert_eq!(a.exit.theta, theta);
            prop_assert!(a.exit.psi >= -1e-12 && a.exit.psi <= alpha + 1e-12);
        }
    }

    #[test]
    fn fractional_maps_compose_like_matrices(
        p in prop::array::uniform4(-3.0f64..3.0),
        q in prop::array::uniform4(-3.0f64..3.0),
        k in prop::array::uniform3(-2.0f64..2.0),
        s in prop::array::uniform3(0.1f64..1.0),
        f in 0.1f64..20.0,
    ) {
        let a = Mat2::new(p[0], p[1], p[2], p[3]);
        let b = Mat2::new(q[0], q[1], q[2], q[3]);
        let first = TransferMap::backward_to_backward(&a, k[0], s[0], k[1], s[1]);
        let second = TransferMap::backward_to_backward(&b, k[1], s[1], k[2], s[2]);
        let both = TransferMap::backward_to_backward(&(b * a), k[0], s[0], k[2], s[2]);
        let direct = both.apply(f);
        let chained = second.apply(first.apply(f));
        prop_assume!(direct.is_finite() && direct.abs() < 1e6);
        prop_assert!((direct - chained).abs() < 1e-6 * (1.0 + direct.abs()));
    }

    #[test]
    fn fixed_points_of_negative_maps_are_real(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, d in -5.0f64..5.0) {
        let mut m = TransferMap { a, b, c, d };
        prop_assume!(m.det().abs() > 1e-6);
        if m.det() > 0.0 {
            // swapping the rows flips the sign of the determinant
            m = TransferMap { a: c, b: d, c: a, d: b };
        }
        let (t1, t2) = m.fixed_points().unwrap();
        prop_assert!(t1 >= t2);
    }

    #[test]
    fn collision_map_invariants(seed in 0u64..1_000_000, track in 0usize..3) {
        let g = &tracks()[track];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_mu(g, &mut rng, None);
        if let Ok(st) = step(g, &x) {
            let y = st.next;
            prop_assert!((y.v.norm() - 1.0).abs() < 1e-12);
            let det = jacobian(g, &x, &y, st.flight).det();
            prop_assert!((det - x.theta.sin() / y.theta.sin()).abs() < 1e-9 * (1.0 + det.abs()));
            // J T J = T^{-1}
            let back = step(g, &reverse(g, &y)).unwrap().next;
            let home = reverse(g, &back);
            prop_assert!((home.q - x.q).norm() < 1e-8 && (home.v - x.v).norm() < 1e-8);
            prop_assert_eq!(v_star(g, &x).signum(), v_star(g, &y).signum());
        }
    }
}
