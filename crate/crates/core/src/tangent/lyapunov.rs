//! Top Lyapunov exponent of the planar billiard map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{tangent_step, TangentVector};
use crate::dynamics::{sample_mu, CollisionState, DynError, KahanSum, Side};
use crate::track::TrackGeometry;

/// Steps between entries of the running estimate.
pub const SERIES_STRIDE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovRun {
    pub seed: u64,
    pub start: CollisionState,
    /// Estimate over the completed steps.
    pub exponent: f64,
    /// `(step, running estimate)` every `SERIES_STRIDE` steps.
    pub series: Vec<(usize, f64)>,
    pub steps: usize,
    pub termination: Option<DynError>,
}

impl LyapunovRun {
    /// Largest relative deviation of the running estimate from the final
    /// one over the last decade of steps.
    pub fn plateau_change(&self) -> f64 {
        let from = self.steps / 10;
        let last = self.exponent;
        self.series
            .iter()
            .filter(|(n, _)| *n >= from)
            .map(|(_, v)| ((v - last) / last).abs())
            .fold(0.0, f64::max)
    }
}

/// Transports a tangent vector along the orbit of `x0`, renormalizing every
/// step.
pub fn lyapunov_orbit(geometry: &TrackGeometry, x0: CollisionState, u0: [f64; 2], steps: usize, seed: u64) -> LyapunovRun {
    let n0 = (u0[0] * u0[0] + u0[1] * u0[1]).sqrt();
    let mut u = TangentVector::new(x0, u0[0] / n0, u0[1] / n0);
    let mut sum = KahanSum::default();
    let mut series = Vec::with_capacity(steps / SERIES_STRIDE);
    let mut done = 0;
    let mut termination = None;
    while done < steps {
        match tangent_step(geometry, &u) {
            Ok((mut v, _)) => {
                let norm = v.ds.hypot(v.dtheta);
                sum.add(norm.ln());
                v.ds /= norm;
                v.dtheta /= norm;
                u = v;
                done += 1;
                if done % SERIES_STRIDE == 0 {
                    series.push((done, sum.value() / done as f64));
                }
            }
            Err(e) => {
                termination = Some(e);
                break;
            }
        }
    }
    let exponent = if done == 0 { f64::NAN } else { sum.value() / done as f64 };
    LyapunovRun { seed, start: x0, exponent, series, steps: done, termination }
}

/// One run per seed, from a `μ`-distributed start (restricted to `side`
/// when given) and a random initial direction. Results follow `seeds`.
pub fn lyapunov(geometry: &TrackGeometry, seeds: &[u64], steps: usize, side: Option<Side>) -> Vec<LyapunovRun> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = sample_mu(geometry, &mut rng, side);
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            lyapunov_orbit(geometry, x0, [a.cos(), a.sin()], steps, seed)
        })
        .collect()
}

/// Mean and sample standard deviation of the exponents.
pub fn spread(runs: &[LyapunovRun]) -> (f64, f64) {
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.exponent).sum::<f64>() / n;
    let var = if runs.len() > 1 {
        runs.iter().map(|r| (r.exponent - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}
