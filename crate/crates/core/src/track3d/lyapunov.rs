//! Lyapunov spectrum of the spatial billiard map.

use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Collision3D, Track3D};
use crate::dynamics::{DynError, KahanSum};

/// Central-difference step in chart coordinates.
pub const FD_STEP: f64 = 1e-7;

/// Steps between re-orthonormalizations of the tangent frame.
pub const QR_EVERY: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum3Run {
    pub seed: u64,
    pub start: Collision3D,
    /// Sorted in decreasing order.
    pub exponents: [f64; 4],
    pub steps: usize,
    pub termination: Option<DynError>,
}

impl Spectrum3Run {
    /// `max |λᵢ + λ₅₋ᵢ|`.
    pub fn pairing_defect(&self) -> f64 {
        let l = self.exponents;
        (l[0] + l[3]).abs().max((l[1] + l[2]).abs())
    }
}

/// Transports a 4-frame along the orbit of `x0`; the derivative of each step
/// is taken by central differences in the wall charts.
pub fn spectrum_orbit(track: &Track3D, x0: Collision3D, frame: Matrix4<f64>, steps: usize, seed: u64) -> Spectrum3Run {
    let mut q = frame.qr().q();
    let mut sums = [KahanSum::default(); 4];
    let mut cur = x0;
    let mut done = 0;
    let mut since = 0;
    let mut termination = None;
    let flush = |q: &mut Matrix4<f64>, sums: &mut [KahanSum; 4]| {
        let qr = q.qr();
        let r = qr.r();
        let mut qm = qr.q();
        for i in 0..4 {
            // keep the diagonal of R positive so the frame is not flipped
            if r[(i, i)] < 0.0 {
                qm.column_mut(i).neg_mut();
            }
            sums[i].add(r[(i, i)].abs().ln());
        }
        *q = qm;
    };
    while done < steps {
        let st = match track.step(&cur) {
            Ok(st) => st,
            Err(e) => {
                termination = Some(e);
                break;
            }
        };
        // near tangency the probes may leave the unit disc, and next to an
        // edge of the section they may start behind the target plane
        let j = [FD_STEP, FD_STEP * 1e-2, (0.01 * st.flight).min(FD_STEP * 1e-2)]
            .into_iter()
            .find_map(|h| track.jacobian_fd(&cur, &st.next, h));
        let Some(j) = j else {
            termination = Some(DynError::Grazing { t: st.flight });
            break;
        };
        q = j * q;
        cur = st.next;
        done += 1;
        since += 1;
        if since == QR_EVERY {
            flush(&mut q, &mut sums);
            since = 0;
        }
    }
    if since > 0 {
        flush(&mut q, &mut sums);
    }
    let mut exponents = [f64::NAN; 4];
    if done > 0 {
        for i in 0..4 {
            exponents[i] = sums[i].value() / done as f64;
        }
        exponents.sort_by(|a, b| b.total_cmp(a));
    }
    Spectrum3Run { seed, start: x0, exponents, steps: done, termination }
}

/// One run per seed from a sample of the invariant measure.
pub fn lyapunov_spectrum3d(track: &Track3D, seeds: &[u64], steps: usize) -> Vec<Spectrum3Run> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = track.sample_mu(&mut rng, None);
            let frame = Matrix4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            spectrum_orbit(track, x0, frame, steps, seed)
        })
        .collect()
}
