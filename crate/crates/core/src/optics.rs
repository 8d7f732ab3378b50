//! Scalar-diffraction (Gibson-Lanni) point spread function.
//!
//! The field of a point source at lateral distance `r` and defocus `z` is
//!
//! ```text
//! U(r, z) = ∫₀¹ J₀(k·NA·r·ρ) · exp(i·W(ρ; z)) · ρ dρ
//! W(ρ; z) = k · [ z·√(n_i² − NA²ρ²) + p·√(n_s² − NA²ρ²) ]
//! ```
//!
//! with `k = 2π/λ` and `p` the particle depth below the coverslip. The second
//! square root is taken in the complex plane, so supercritical pupil rays
//! decay evanescently when `NA > n_s`. The intensity `|U|²` is integrated with
//! composite Simpson quadrature on a fine radial grid, then resampled onto the
//! Cartesian stack.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CONVERGENCE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticalParams {
    pub numerical_aperture: f64,
    /// Emission wavelength, nm.
    pub wavelength: f64,
    pub n_immersion: f64,
    pub n_sample: f64,
    /// Depth of the emitter below the coverslip, nm.
    pub particle_depth: f64,
    /// Half-width of the stack in x and y, nm.
    pub psf_lateral_extent: f64,
    /// Half-depth of the stack in z, nm.
    pub psf_axial_extent: f64,
    pub psf_lateral_step: f64,
    pub psf_axial_step: f64,
    pub quadrature_points: usize,
}

impl Default for OpticalParams {
    fn default() -> Self {
        OpticalParams {
            numerical_aperture: 1.4,
            wavelength: 600.0,
            n_immersion: 1.515,
            n_sample: 1.33,
            particle_depth: 0.0,
            psf_lateral_extent: 3000.0,
            psf_axial_extent: 1500.0,
            psf_lateral_step: 10.0,
            psf_axial_step: 50.0,
            quadrature_points: 256,
        }
    }
}

impl OpticalParams {
    pub fn validate(&self) -> Result<()> {
        let p = self;
        let ok = p.numerical_aperture > 0.0
            && p.numerical_aperture < p.n_immersion
            && p.wavelength > 0.0
            && p.n_sample > 0.0
            && p.particle_depth >= 0.0
            && p.psf_lateral_extent > 0.0
            && p.psf_axial_extent >= 0.0
            && p.psf_lateral_step > 0.0
            && p.psf_axial_step > 0.0
            && p.quadrature_points >= 64;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "optics: need 0 < NA < n_immersion, wavelength > 0, positive steps and extents, \
                 quadrature_points >= 64",
            ))
        }
    }

    fn lateral_half_nodes(&self) -> usize {
        (self.psf_lateral_extent / self.psf_lateral_step).round() as usize
    }

    fn axial_half_nodes(&self) -> usize {
        (self.psf_axial_extent / self.psf_axial_step).round() as usize
    }
}

/// Unnormalized intensity `|U(r, z)|²` on a regular `(z, r)` grid.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub z: Vec<f64>,
    pub r_step: f64,
    pub n_r: usize,
    /// Row-major `[z][r]`.
    pub values: Vec<f64>,
}

impl RadialProfile {
    fn row(&self, iz: usize) -> &[f64] {
        &self.values[iz * self.n_r..(iz + 1) * self.n_r]
    }

    /// Linear interpolation in `r` on plane `iz`.
    pub fn at(&self, iz: usize, r: f64) -> f64 {
        let row = self.row(iz);
        let u = r / self.r_step;
        let i = u.floor() as usize;
        if i + 1 >= self.n_r {
            return *row.last().unwrap();
        }
        let f = u - i as f64;
        row[i] * (1.0 - f) + row[i + 1] * f
    }
}

fn simpson_weights(intervals: usize) -> Vec<f64> {
    let h = 1.0 / intervals as f64;
    (0..=intervals)
        .map(|j| {
            let c = if j == 0 || j == intervals {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

/// Evaluate `|U|²` for the given planes and radii with `intervals` Simpson
/// intervals (rounded up to even).
pub fn radial_profile(
    params: &OpticalParams,
    z: &[f64],
    r_step: f64,
    n_r: usize,
    intervals: usize,
) -> RadialProfile {
    let n = intervals + intervals % 2;
    let k = std::f64::consts::TAU / params.wavelength;
    let na = params.numerical_aperture;
    let weights = simpson_weights(n);
    let rho: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();

    // Bessel factors do not depend on z, so they are tabulated once.
    let bessel: Vec<f64> = (0..n_r)
        .into_par_iter()
        .flat_map_iter(|ir| {
            let kr = k * na * ir as f64 * r_step;
            rho.iter().map(move |&p| libm::j0(kr * p))
        })
        .collect();

    let ni2 = params.n_immersion * params.n_immersion;
    let ns2 = params.n_sample * params.n_sample;
    let values: Vec<f64> = z
        .par_iter()
        .flat_map_iter(|&zv| {
            let pupil: Vec<Complex64> = rho
                .iter()
                .zip(&weights)
                .map(|(&p, &w)| {
                    let s2 = na * na * p * p;
                    let defocus = zv * (ni2 - s2).sqrt();
                    let depth = Complex64::new(ns2 - s2, 0.0).sqrt() * params.particle_depth;
                    let phase = (depth + defocus) * k;
                    (Complex64::i() * phase).exp() * (w * p)
                })
                .collect();
            let bessel = &bessel;
            (0..n_r).map(move |ir| {
                let row = &bessel[ir * (n + 1)..(ir + 1) * (n + 1)];
                let u: Complex64 = row.iter().zip(&pupil).map(|(&b, &q)| q * b).sum();
                u.norm_sqr()
            })
        })
        .collect();
    RadialProfile {
        z: z.to_vec(),
        r_step,
        n_r,
        values,
    }
}

/// Sampled 3D PSF, indexed `(z, y, x)`, with the in-focus plane summing to 1.
#[derive(Debug, Clone)]
pub struct PsfStack {
    pub values: Vec<f32>,
    /// Nodes along x and along y.
    pub n_lateral: usize,
    pub n_axial: usize,
    pub lateral_step: f64,
    pub axial_step: f64,
    pub params: OpticalParams,
}

impl PsfStack {
    pub fn lateral_center(&self) -> usize {
        self.n_lateral / 2
    }

    pub fn axial_center(&self) -> usize {
        self.n_axial / 2
    }

    #[inline]
    pub fn node(&self, iz: usize, iy: usize, ix: usize) -> f32 {
        self.values[(iz * self.n_lateral + iy) * self.n_lateral + ix]
    }

    pub fn plane(&self, iz: usize) -> &[f32] {
        let m = self.n_lateral * self.n_lateral;
        &self.values[iz * m..(iz + 1) * m]
    }

    pub fn plane_sum(&self, iz: usize) -> f64 {
        self.plane(iz).iter().map(|&v| v as f64).sum()
    }

    /// z coordinate (nm) of plane `iz`.
    pub fn plane_z(&self, iz: usize) -> f64 {
        (iz as f64 - self.axial_center() as f64) * self.axial_step
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    /// Full width at half maximum along the central row of plane `iz`, nm.
    pub fn lateral_fwhm(&self, iz: usize) -> f64 {
        let c = self.lateral_center();
        let row: Vec<f64> = (0..self.n_lateral)
            .map(|ix| self.node(iz, c, ix) as f64)
            .collect();
        let peak = row.iter().copied().fold(0.0, f64::max);
        let half = peak / 2.0;
        // outermost crossing on the +x side
        let mut edge = 0.0;
        for ix in (c..self.n_lateral - 1).rev() {
            if row[ix] >= half {
                let f = (row[ix] - half) / (row[ix] - row[ix + 1]);
                edge = (ix - c) as f64 + f;
                break;
            }
        }
        2.0 * edge * self.lateral_step
    }

    pub fn in_focus_fwhm(&self) -> f64 {
        self.lateral_fwhm(self.axial_center())
    }

    /// Trilinear interpolation at an offset (nm) from the stack center.
    ///
    /// Nodes outside the grid count as zero, so the value falls to zero
    /// within one step beyond the stored extent and is exactly zero further out.
    pub fn value(&self, dx: f64, dy: f64, dz: f64) -> f64 {
        let c = self.lateral_center() as f64;
        let u = dx / self.lateral_step + c;
        let v = dy / self.lateral_step + c;
        let w = dz / self.axial_step + self.axial_center() as f64;
        let (n, nz) = (self.n_lateral as f64, self.n_axial as f64);
        if !(u > -1.0 && u < n && v > -1.0 && v < n && w > -1.0 && w < nz) {
            return 0.0;
        }
        let (u0, v0, w0) = (u.floor(), v.floor(), w.floor());
        let (fu, fv, fw) = (u - u0, v - v0, w - w0);
        let (iu, iv, iw) = (u0 as i64, v0 as i64, w0 as i64);
        let mut acc = 0.0;
        for (dz_i, wz) in [(0, 1.0 - fw), (1, fw)] {
            let z = iw + dz_i;
            if z < 0 || z >= self.n_axial as i64 || wz == 0.0 {
                continue;
            }
            for (dy_i, wy) in [(0, 1.0 - fv), (1, fv)] {
                let y = iv + dy_i;
                if y < 0 || y >= self.n_lateral as i64 || wy == 0.0 {
                    continue;
                }
                for (dx_i, wx) in [(0, 1.0 - fu), (1, fu)] {
                    let x = iu + dx_i;
                    if x < 0 || x >= self.n_lateral as i64 || wx == 0.0 {
                        continue;
                    }
                    acc += wz * wy * wx * self.node(z as usize, y as usize, x as usize) as f64;
                }
            }
        }
        acc
    }
}

/// Sampling accessor used by rendering; see [`PsfStack::value`].
pub fn psf_value(psf: &PsfStack, dx: f64, dy: f64, dz: f64) -> f64 {
    psf.value(dx, dy, dz)
}

fn stack_planes(params: &OpticalParams) -> Vec<f64> {
    let h = params.axial_half_nodes() as i64;
    (-h..=h).map(|k| k as f64 * params.psf_axial_step).collect()
}

fn profile_grid(params: &OpticalParams) -> (f64, usize) {
    let r_step = params.psf_lateral_step / 4.0;
    let r_max = params.lateral_half_nodes() as f64 * params.psf_lateral_step * 2f64.sqrt();
    (r_step, (r_max / r_step).ceil() as usize + 2)
}

/// Largest change of the radial profile, relative to its peak, when the
/// number of quadrature intervals is doubled.
pub fn quadrature_change(params: &OpticalParams) -> f64 {
    let z = stack_planes(params);
    let (r_step, n_r) = profile_grid(params);
    let a = radial_profile(params, &z, r_step, n_r, params.quadrature_points);
    let b = radial_profile(params, &z, r_step, n_r, 2 * params.quadrature_points);
    relative_change(&a.values, &b.values)
}

fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    let peak = b.iter().copied().fold(0.0, f64::max);
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if peak > 0.0 {
        diff / peak
    } else {
        diff
    }
}

/// Compute the PSF stack.
///
/// Fails with [`Error::Quadrature`] when doubling the quadrature points moves
/// the profile by more than 1e-4 of its peak.
pub fn compute_psf(params: &OpticalParams) -> Result<PsfStack> {
    params.validate()?;
    let z = stack_planes(params);
    let (r_step, n_r) = profile_grid(params);
    let profile = radial_profile(params, &z, r_step, n_r, params.quadrature_points);
    let check = radial_profile(params, &z, r_step, n_r, 2 * params.quadrature_points);
    let change = relative_change(&profile.values, &check.values);
    if !(change < CONVERGENCE_TOL) {
        return Err(Error::Quadrature {
            points: params.quadrature_points,
            change,
            tolerance: CONVERGENCE_TOL,
        });
    }

    let half = params.lateral_half_nodes();
    let n = 2 * half + 1;
    let step = params.psf_lateral_step;
    let mut values = vec![0f32; z.len() * n * n];
    values
        .par_chunks_mut(n * n)
        .enumerate()
        .for_each(|(iz, plane)| {
            for iy in 0..n {
                let y = (iy as f64 - half as f64) * step;
                for ix in 0..n {
                    let x = (ix as f64 - half as f64) * step;
                    plane[iy * n + ix] = profile.at(iz, x.hypot(y)) as f32;
                }
            }
        });
    let focus = z.len() / 2;
    let norm: f64 = values[focus * n * n..(focus + 1) * n * n]
        .iter()
        .map(|&v| v as f64)
        .sum();
    if !(norm > 0.0) {
        return Err(Error::invalid("optics: in-focus PSF plane is empty"));
    }
    let inv = (1.0 / norm) as f32;
    values.par_iter_mut().for_each(|v| *v *= inv);
    Ok(PsfStack {
        values,
        n_lateral: n,
        n_axial: z.len(),
        lateral_step: step,
        axial_step: params.psf_axial_step,
        params: params.clone(),
    })
}
