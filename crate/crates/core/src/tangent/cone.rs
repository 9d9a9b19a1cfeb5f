//! Cone fields on entering collisions and their invariance certificates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::algebra::{Mat2, TransferMap};
use crate::dynamics::{advance_to_entering, first_return_to_e, sample_mu, CollisionState, DynError, FIRST_RETURN_LIMIT};
use crate::guide::NormalizedGuide;
use crate::track::{FocalChoice, GuideReport, TrackGeometry};

/// Closed slope interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cone {
    pub base: CollisionState,
    pub lo: f64,
    pub hi: f64,
}

impl Cone {
    pub fn contains_slope(&self, m: f64) -> bool {
        m >= self.lo && m <= self.hi
    }
}

/// Tangent vectors at `x` with backward focusing time at least `tau`.
pub fn cone_at(geometry: &TrackGeometry, x: &CollisionState, tau: f64) -> Cone {
    let k = geometry.walls[x.wall].curvature;
    Cone { base: *x, lo: k - x.theta.sin() / tau, hi: k }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConeError {
    #[error("MARGIN_FAIL: margin {margin} at entering collision {entry:?}")]
    MarginFail { margin: f64, entry: CollisionState },
    #[error("guide {guide} has no focal length")]
    MissingFocalLength { guide: usize },
    #[error("no samples completed")]
    NoSamples,
}

/// One certified excursion between entering collisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeSample {
    pub entry: CollisionState,
    pub next: CollisionState,
    pub passage_steps: usize,
    pub transit: f64,
    /// `min f⁻(image of the cone) - τ̃(next)`; `-∞` when the image wraps
    /// through infinity.
    pub margin: f64,
    /// Whether the focusing-time equivalence held on the probe values.
    pub lemma_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeCertificate {
    pub samples: Vec<ConeSample>,
    /// Orbits that ended on a singular collision before returning.
    pub terminated: usize,
}

impl ConeCertificate {
    pub fn min_margin(&self) -> f64 {
        self.samples.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn argmin(&self) -> Option<&ConeSample> {
        self.samples.iter().min_by(|a, b| a.margin.total_cmp(&b.margin))
    }

    pub fn violations(&self) -> impl Iterator<Item = &ConeSample> {
        self.samples.iter().filter(|s| !(s.margin > 0.0))
    }

    pub fn lemma_failures(&self) -> usize {
        self.samples.iter().filter(|s| !s.lemma_ok).count()
    }

    /// The minimum margin, or the worst sample when it is not positive.
    pub fn certify(&self) -> Result<f64, ConeError> {
        let worst = self.argmin().ok_or(ConeError::NoSamples)?;
        if worst.margin > 0.0 {
            Ok(worst.margin)
        } else {
            Err(ConeError::MarginFail { margin: worst.margin, entry: worst.entry })
        }
    }
}

fn between(lo: f64, x: f64, hi: f64) -> bool {
    let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    x > lo - tol && x < hi + tol
}

/// Probes `f⁻ ∉ [τ₂, τ₁] ⇔ τ₂ < Φ(f⁻) < τ₁` on a few values of `f⁻`.
fn lemma_holds(map: &TransferMap<f64>) -> bool {
    let Ok((t1, t2)) = map.fixed_points() else { return false };
    if !t1.is_finite() || !t2.is_finite() {
        return true;
    }
    let gap = t1 - t2;
    let outside = [t1 + 0.1 * gap, t1 + 10.0 * gap + 1.0, f64::INFINITY, t2 - 0.1 * gap, t2 - 10.0 * gap - 1.0];
    let inside = [t2 + 0.25 * gap, t2 + 0.5 * gap, t2 + 0.75 * gap];
    outside.iter().all(|&f| between(t2, map.apply(f), t1))
        && inside.iter().all(|&f| {
            let g = map.apply(f);
            let tol = 1e-9 * (1.0 + t1.abs());
            !(g > t2 + tol && g < t1 - tol)
        })
}

/// Margin of the image of `{f⁻ ≥ tau_x}` under `total` over `tau_y`.
fn image_margin(map: &TransferMap<f64>, tau_x: f64, tau_y: f64) -> f64 {
    let pole = map.pole();
    if pole.is_finite() && pole >= tau_x {
        // the image passes through ∞ and wraps onto negative times
        return f64::NEG_INFINITY;
    }
    map.apply(tau_x).min(map.apply(f64::INFINITY)) - tau_y
}

fn certify_one(
    geometry: &TrackGeometry,
    taus: &[Option<f64>],
    seed: u64,
    index: u64,
) -> Result<Result<ConeSample, DynError>, ConeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let x0 = sample_mu(geometry, &mut rng, None);
    let x = match advance_to_entering(geometry, &x0, FIRST_RETURN_LIMIT) {
        Ok(x) => x,
        Err(e) => return Ok(Err(e)),
    };
    let fr = match first_return_to_e(geometry, &x, FIRST_RETURN_LIMIT) {
        Ok(fr) => fr,
        Err(e) => return Ok(Err(e)),
    };
    let tau = |g: usize| taus.get(g).copied().flatten().ok_or(ConeError::MissingFocalLength { guide: g });
    let (tx, ty) = (tau(x.guide)?, tau(fr.next.guide)?);
    let wall = |s: &CollisionState| &geometry.walls[s.wall];
    let total = TransferMap::backward_to_backward(
        &fr.total,
        wall(&x).curvature,
        x.theta.sin(),
        wall(&fr.next).curvature,
        fr.next.theta.sin(),
    );
    let phi = TransferMap::from_passage(
        &fr.passage,
        wall(&x).curvature,
        x.theta.sin(),
        wall(&fr.exit).curvature,
        fr.exit.theta.sin(),
    );
    Ok(Ok(ConeSample {
        entry: x,
        next: fr.next,
        passage_steps: fr.passage_steps,
        transit: fr.transit,
        margin: image_margin(&total, tx, ty),
        lemma_ok: lemma_holds(&phi),
    }))
}

/// Samples `n` entering collisions from `μ` and checks that the cone field
/// `f⁻ ≥ τ̃` is mapped strictly inside itself by the first return.
/// `taus[g]` is the focal length used for circular guide `g`.
pub fn verify_strict_invariance(
    geometry: &TrackGeometry,
    taus: &[Option<f64>],
    n: usize,
    seed: u64,
) -> Result<ConeCertificate, ConeError> {
    let results = (0..n as u64)
        .into_par_iter()
        .map(|i| certify_one(geometry, taus, seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    let mut samples = Vec::with_capacity(n);
    let mut terminated = 0;
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(_) => terminated += 1,
        }
    }
    Ok(ConeCertificate { samples, terminated })
}

/// Outcome of the quadrant-cone check on one guide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CanonicalConeReport {
    pub samples: usize,
    /// Samples with `θ` outside `[β̄, π - β̄]`.
    pub twist_positive: usize,
    pub invariance_failures: usize,
    pub twist_sign_failures: usize,
    pub focusing_range_failures: usize,
}

impl CanonicalConeReport {
    pub fn passed(&self) -> bool {
        self.invariance_failures == 0 && self.twist_sign_failures == 0 && self.focusing_range_failures == 0
    }
}

/// Checks on sampled outer-circle entries of `E₁` that the passage maps the
/// quadrant cone (`ab ≥ 0` where `δ' > 0`, `ab ≤ 0` where `δ' < 0`) into
/// itself, that `∂θ` is tilted by the sign of `δ'`, and, for entries with at
/// least one return, that forward focusing times of the image lie in
/// `[0, sin θ]` or `[sin θ, 2 sin θ]`.
pub fn verify_canonical_cone(guide: &NormalizedGuide<f64>, n: usize, seed: u64) -> CanonicalConeReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = CanonicalConeReport::default();
    let tol = 1e-9;
    while rep.samples < n {
        let x = guide.sample_e1(&mut rng);
        let (Ok(p), Ok(dp)) = (guide.passage(&x), guide.delta_prime(x.theta)) else { continue };
        rep.samples += 1;
        let m: Mat2<f64> = p.derivative;
        let es = m.apply([1.0, 0.0]);
        let et = m.apply([0.0, 1.0]);
        let positive = dp > 0.0;
        if positive {
            rep.twist_positive += 1;
        }
        let sign = if positive { 1.0 } else { -1.0 };
        if es[0] * es[1] * sign < -tol || et[0] * et[1] * sign < -tol {
            rep.invariance_failures += 1;
        }
        if p.outer_collisions > 0 && et[0] * dp < 0.0 {
            rep.twist_sign_failures += 1;
        }
        if p.outer_collisions == 0 {
            // identity passage: nothing is twisted
            continue;
        }
        let s = x.theta.sin();
        let fp = |v: [f64; 2]| super::forward_focusing_time(s, 1.0, v[0], v[1]);
        let (lo, hi) = if positive { (0.0, s) } else { (s, 2.0 * s) };
        for f in [fp(es), fp(et)] {
            if !(f >= lo - tol && f <= hi + tol) {
                rep.focusing_range_failures += 1;
                break;
            }
        }
    }
    rep
}

/// Focal length per guide index, `None` on straights.
pub fn focal_lengths(guide_count: usize, reports: &[GuideReport], choice: FocalChoice) -> Vec<Option<f64>> {
    let mut out = vec![None; guide_count];
    for r in reports {
        out[r.guide] = r.tau(choice);
    }
    out
}
