mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trackbill::dynamics::{advance_to_entering, first_return_to_e, jacobian, sample_mu, step, CollisionState, Side};
use trackbill::guide::NormalizedGuide;
use trackbill::tangent::cone::{cone_at, focal_lengths, verify_canonical_cone, verify_strict_invariance};
use trackbill::tangent::lyapunov::{lyapunov, spread};
use trackbill::tangent::{tangent_step, Mat2, TangentVector};
use trackbill::track::{build_track, guide_reports, FocalChoice, GuideSpec, TrackGeometry, TrackSpec};

fn all_tracks() -> Vec<TrackGeometry> {
    vec![common::h_track(), common::type_b_track(), common::notched_track()]
}

#[test]
fn free_flight_shifts_forward_focusing_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for g in all_tracks() {
        for _ in 0..1000 {
            let x = sample_mu(&g, &mut rng, None);
            let a: f64 = rng.gen_range(0.0..PI);
            let u = TangentVector::new(x, a.cos(), a.sin());
            let Ok((v, flight)) = tangent_step(&g, &u) else { continue };
            let (fp, _) = u.focusing_times(&g);
            let (_, fm) = v.focusing_times(&g);
            if fp.abs() > 1e6 || fm.abs() > 1e6 {
                continue;
            }
            assert!((fm - (flight - fp)).abs() < 1e-7 * (1.0 + fp.abs() + flight), "f⁻ {fm}, t {flight}, f⁺ {fp}");
        }
    }
}

#[test]
fn perpendicular_bounces_across_a_straight() {
    let g = build_track(&common::stadium_spec(2.0, 0.25, 6.0)).unwrap();
    let eps = 0.25;
    let x = CollisionState::on_wall(&g, 0, 3.0, FRAC_PI_2);
    let a = step(&g, &x).unwrap();
    let b = step(&g, &a.next).unwrap();
    let m = jacobian(&g, &a.next, &b.next, b.flight) * jacobian(&g, &x, &a.next, a.flight);
    // the orientation signs of the two walls make the shear negative in (s, θ)
    assert!(m.max_abs_diff(&Mat2::new(1.0, -4.0 * eps, 0.0, 1.0)) < 1e-12, "{m:?}");
    let h = 1e-6;
    let two = |du: f64, dt: f64| {
        let p = CollisionState::on_wall(&g, 0, 3.0 + du, FRAC_PI_2 + dt);
        let z = step(&g, &step(&g, &p).unwrap().next).unwrap().next;
        (z.s, z.theta)
    };
    let (p, q) = (two(h, 0.0), two(-h, 0.0));
    let (r, s) = (two(0.0, h), two(0.0, -h));
    let fd = Mat2::new((p.0 - q.0) / (2.0 * h), (r.0 - s.0) / (2.0 * h), (p.1 - q.1) / (2.0 * h), (r.1 - s.1) / (2.0 * h));
    assert!(fd.max_abs_diff(&m) < 1e-6, "{fd:?}");
}

/// Track passages entering and leaving on the outer circle compose to
/// `[[1, 2 n₁ δ' r₁], [0, 1]]` in `(s, θ)`.
#[test]
fn track_passages_reproduce_the_guide_shear() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for g in all_tracks() {
        let spec = g.spec.clone().unwrap();
        let eps = spec.halfwidth().unwrap();
        let mut checked = 0;
        let mut tries = 0;
        while checked < 1000 {
            tries += 1;
            assert!(tries < 200_000);
            let x0 = sample_mu(&g, &mut rng, None);
            let Ok(x) = advance_to_entering(&g, &x0, 100_000) else { continue };
            let Ok(fr) = first_return_to_e(&g, &x, 100_000) else { continue };
            let outer = |s: &CollisionState| g.walls[s.wall].curvature > 0.0;
            if !outer(&x) || !outer(&fr.exit) {
                continue;
            }
            let GuideSpec::Circular { radius, angle, .. } = spec.guides[x.guide] else { unreachable!() };
            let guide = NormalizedGuide::new((radius - eps) / (radius + eps), angle).unwrap();
            let theta = if g.walls[x.wall].sigma > 0.0 { x.theta } else { PI - x.theta };
            let Ok(dp) = guide.delta_prime(theta) else { continue };
            let n1 = fr.trace[..fr.passage_steps].iter().filter(|(s, _)| outer(s)).count() as f64;
            let shear = Mat2::new(1.0, 2.0 * n1 * dp * (radius + eps), 0.0, 1.0);
            let scale = 1.0 + shear.m[0][1].abs();
            assert!(fr.passage.max_abs_diff(&shear) < 1e-9 * scale, "{:?} vs {shear:?}", fr.passage);
            checked += 1;
        }
    }
}

#[test]
fn cone_on_unit_circle() {
    let g = TrackGeometry::annulus(1.0, 0.5).unwrap();
    let outer = (0..g.walls.len()).find(|&k| g.walls[k].curvature > 0.0).unwrap();
    let x = CollisionState::on_wall(&g, outer, 0.2, FRAC_PI_2);
    let c = cone_at(&g, &x, 3.0);
    assert!((c.lo - 2.0 / 3.0).abs() < 1e-15 && c.hi == 1.0);
    for k in 0..=10 {
        let m = c.lo + (c.hi - c.lo) * k as f64 / 10.0;
        let u = TangentVector::new(x, 1.0, m);
        let (_, fm) = u.focusing_times(&g);
        assert!(fm >= 3.0 - 1e-12, "m = {m}: f⁻ = {fm}");
    }
    let edge = TangentVector::new(x, 1.0, c.hi);
    assert!(edge.focusing_times(&g).1.is_infinite());
}

fn certify(spec: &TrackSpec, n: usize) -> trackbill::tangent::cone::ConeCertificate {
    let g = build_track(spec).unwrap();
    let reports = guide_reports(spec, spec.halfwidth().unwrap()).unwrap();
    let taus = focal_lengths(spec.guides.len(), &reports, FocalChoice::Bound);
    verify_strict_invariance(&g, &taus, n, 5).unwrap()
}

#[test]
fn cones_are_strictly_invariant_on_h_tracks() {
    for spec in [common::h_track_spec(), common::type_b_spec(7.0)] {
        let c = certify(&spec, 2000);
        assert!(c.samples.len() + c.terminated == 2000);
        assert!(c.certify().unwrap() > 0.0);
        assert_eq!(c.lemma_failures(), 0);
    }
}

#[test]
fn short_straights_break_the_cone_margin() {
    let c = certify(&common::type_b_spec(2.0), 1000);
    assert!(c.violations().count() > 0);
    assert!(c.certify().is_err());
    // the guide-level equivalence does not depend on the straights
    assert_eq!(c.lemma_failures(), 0);
}

#[test]
fn canonical_cone_is_invariant_on_guides() {
    for (r, a) in [(0.7778, PI), (0.4, PI / 2.0), (0.3, 1.5 * PI), (0.8, PI)] {
        let g = NormalizedGuide::new(r, a).unwrap();
        let rep = verify_canonical_cone(&g, 2000, 9);
        assert!(rep.passed(), "r={r} α={a}: {rep:?}");
        assert!(rep.twist_positive > 0 && rep.twist_positive < rep.samples);
    }
}

#[test]
fn rectangle_has_vanishing_exponent() {
    let g = TrackGeometry::rectangle(2.0, 1.0).unwrap();
    for run in lyapunov(&g, &[1, 2, 3], 100_000, None) {
        assert!(run.exponent.abs() < 1e-3, "{}", run.exponent);
    }
}

#[test]
fn annulus_exponent_is_small_and_h_track_positive() {
    let a = TrackGeometry::annulus(1.0, 0.5).unwrap();
    let base = lyapunov(&a, &[1, 2], 200_000, None);
    let (m, _) = spread(&base);
    assert!(m.abs() < 5e-3);
    let runs = lyapunov(&common::type_b_track(), &[1, 2, 3, 4], 200_000, Some(Side::R));
    for r in &runs {
        assert!(r.termination.is_none());
        assert!(r.exponent > 10.0 * m.abs(), "{} vs {m}", r.exponent);
        assert_eq!(r.series.len(), 200);
    }
    // same seeds, same answers
    let again = lyapunov(&common::type_b_track(), &[1, 2, 3, 4], 200_000, Some(Side::R));
    assert_eq!(runs, again);
}
