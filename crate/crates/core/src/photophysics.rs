//! Emitter placement on the tube surface and per-exposure photon emission.
//!
//! Each emitter follows a two-state (ON/OFF) telegraph process during the
//! exposure window, simulated exactly from exponential dwell times. The
//! emitted photon count is Poisson with mean `photon_rate · quantum_yield ·
//! t_on`.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross, normalize, Mitochondrion, Point3};
use crate::rng::{rng_from, stable_hash};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    /// nm
    pub position: Point3,
    pub photons: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterSet {
    pub emitters: Vec<Emitter>,
    pub instance_id: u32,
}

impl EmitterSet {
    pub fn len(&self) -> usize {
        self.emitters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emitters.is_empty()
    }

    pub fn total_photons(&self) -> u64 {
        self.emitters.iter().map(|e| e.photons as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KineticsParams {
    /// Emitters per µm² of lateral tube surface.
    pub emitter_density: f64,
    /// OFF→ON rate, 1/s.
    pub k_on: f64,
    /// ON→OFF rate, 1/s.
    pub k_off: f64,
    /// Photons/s while ON.
    pub photon_rate: f64,
    pub quantum_yield: f64,
    /// ms
    pub exposure: f64,
}

impl Default for KineticsParams {
    fn default() -> Self {
        KineticsParams {
            emitter_density: 1000.0,
            k_on: 5.0,
            k_off: 5.0,
            // mean emitted photons = 15000 · 0.8 · 0.5 · 0.05 s = 300
            photon_rate: 15000.0,
            quantum_yield: 0.8,
            exposure: 50.0,
        }
    }
}

impl KineticsParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.emitter_density >= 0.0
            && self.k_on >= 0.0
            && self.k_off >= 0.0
            && self.photon_rate >= 0.0
            && self.quantum_yield > 0.0
            && self.quantum_yield <= 1.0
            && self.exposure > 0.0
            && [self.emitter_density, self.k_on, self.k_off, self.photon_rate]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "photophysics: rates and density must be >= 0, 0 < quantum_yield <= 1, exposure > 0",
            ))
        }
    }

    /// Stationary probability of the ON state.
    pub fn on_probability(&self) -> f64 {
        let total = self.k_on + self.k_off;
        if total > 0.0 {
            self.k_on / total
        } else {
            1.0
        }
    }

    /// Expected emitted photons per emitter and exposure.
    pub fn mean_photons(&self) -> f64 {
        self.photon_rate * self.quantum_yield * self.on_probability() * self.exposure * 1e-3
    }
}

/// Scatter emitters uniformly over the lateral surface of the tube.
///
/// The count is Poisson with mean `density · 2πrL`; positions are drawn as a
/// uniform arc position times a uniform angle around the local tangent.
pub fn place_emitters<R: Rng + ?Sized>(
    mito: &Mitochondrion,
    density: f64,
    rng: &mut R,
) -> EmitterSet {
    let mean = density * mito.lateral_area() * 1e-6;
    let count = poisson(mean, rng);
    let length = mito.skeleton.length();
    let emitters = (0..count)
        .map(|_| {
            let s = rng.random_range(0.0..1.0) * length;
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let (c, t) = mito.skeleton.frame_at(s);
            let n = normalize(cross(&t, &[0.0, 0.0, 1.0]))
                .unwrap_or_else(|| normalize(cross(&t, &[1.0, 0.0, 0.0])).unwrap());
            let b = cross(&t, &n);
            let (sin, cos) = phi.sin_cos();
            let r = mito.radius;
            Emitter {
                position: [
                    c[0] + r * (cos * n[0] + sin * b[0]),
                    c[1] + r * (cos * n[1] + sin * b[1]),
                    c[2] + r * (cos * n[2] + sin * b[2]),
                ],
                photons: 0,
            }
        })
        .collect();
    EmitterSet {
        emitters,
        instance_id: mito.instance_id,
    }
}

/// Total ON time (s) of one emitter over the exposure.
pub fn on_time<R: Rng + ?Sized>(kin: &KineticsParams, rng: &mut R) -> f64 {
    let window = kin.exposure * 1e-3;
    if window <= 0.0 {
        return 0.0;
    }
    let mut on = rng.random_bool(kin.on_probability());
    let mut t = 0.0;
    let mut total = 0.0;
    while t < window {
        let rate = if on { kin.k_off } else { kin.k_on };
        let end = if rate > 0.0 {
            (t + Exp::new(rate).unwrap().sample(rng)).min(window)
        } else {
            window
        };
        if on {
            total += end - t;
        }
        t = end;
        on = !on;
    }
    total
}

/// Draw photon counts for every emitter; positions are left untouched.
///
/// Emitter `i` uses its own stream seeded by `stable_hash(seed, i)`, so the
/// result does not depend on evaluation order.
pub fn simulate_photons(set: &EmitterSet, kin: &KineticsParams, seed: u64) -> EmitterSet {
    let gain = kin.photon_rate * kin.quantum_yield;
    let emitters = set
        .emitters
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut rng = rng_from(stable_hash(seed, i as u64));
            let t_on = on_time(kin, &mut rng);
            Emitter {
                position: e.position,
                photons: poisson(gain * t_on, &mut rng) as u32,
            }
        })
        .collect();
    EmitterSet {
        emitters,
        instance_id: set.instance_id,
    }
}

pub(crate) fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).unwrap().sample(rng) as u64
    } else {
        0
    }
}
