//! Image formation: PSF superposition, camera noise, montage and SNR.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::PsfStack;
use crate::photophysics::{poisson, EmitterSet};
use crate::raster::{montage2x2, FloatImage, Image, Mask};
use crate::rng::{rng_from, stable_hash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraParams {
    /// nm
    pub pixel_size: f64,
    /// Field of one sub-simulation, pixels.
    pub width: usize,
    pub height: usize,
    /// electrons / pixel / s
    pub dark_current: f64,
    /// counts
    pub baseline: u16,
    /// ms
    pub exposure: f64,
    pub max_count: u16,
    /// Fraction of emitted photons recorded as photoelectrons
    /// (objective collection, filter transmission and sensor QE combined).
    pub detection_efficiency: f64,
}

impl Default for CameraParams {
    fn default() -> Self {
        CameraParams {
            pixel_size: 80.0,
            width: 128,
            height: 128,
            dark_current: 1000.0,
            baseline: 100,
            exposure: 50.0,
            max_count: 65535,
            detection_efficiency: 0.0008,
        }
    }
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pixel_size > 0.0
            && self.width > 0
            && self.height > 0
            && self.dark_current >= 0.0
            && self.exposure > 0.0
            && self.detection_efficiency > 0.0
            && self.detection_efficiency <= 1.0;
        if !ok {
            return Err(Error::invalid(
                "camera: need pixel_size > 0, non-empty frame, dark_current >= 0, exposure > 0, \
                 0 < detection_efficiency <= 1",
            ));
        }
        if self.pixel_size.fract() != 0.0 {
            return Err(Error::invalid(
                "camera: pixel_size must be a whole number of nm (1 nm ground-truth grid)",
            ));
        }
        Ok(())
    }

    /// Mean dark electrons per pixel per exposure.
    pub fn dark_mean(&self) -> f64 {
        self.dark_current * self.exposure * 1e-3
    }
}

/// PSF nodes regrouped by sub-pixel phase.
///
/// When the pixel size is an integer multiple `s` of the PSF lateral step,
/// the trilinear weights of one emitter are identical for every pixel and
/// the nodes it touches are spaced exactly `s` apart. Storing, for each
/// plane and each `(phase_y, phase_x)`, the nodes `phase + s·m` contiguously
/// turns rendering into a few dense multiply-adds per emitter.
struct PhaseBank {
    stride: usize,
    /// Nodes per phase and axis.
    m: usize,
    data: Vec<f32>,
}

impl PhaseBank {
    fn new(psf: &PsfStack, stride: usize) -> Self {
        let n = psf.n_lateral;
        let m = n.div_ceil(stride);
        let mut data = vec![0f32; psf.n_axial * stride * stride * m * m];
        data.par_chunks_mut(stride * stride * m * m)
            .enumerate()
            .for_each(|(iz, plane)| {
                for py in 0..stride {
                    for px in 0..stride {
                        let block = &mut plane[(py * stride + px) * m * m..][..m * m];
                        for my in 0..m {
                            let iy = py + stride * my;
                            if iy >= n {
                                break;
                            }
                            for mx in 0..m {
                                let ix = px + stride * mx;
                                if ix >= n {
                                    break;
                                }
                                block[my * m + mx] = psf.node(iz, iy, ix);
                            }
                        }
                    }
                }
            });
        PhaseBank { stride, m, data }
    }

    #[inline]
    fn block(&self, iz: usize, py: usize, px: usize) -> &[f32] {
        let mm = self.m * self.m;
        let off = ((iz * self.stride + py) * self.stride + px) * mm;
        &self.data[off..off + mm]
    }
}

/// Renders emitter sets through a fixed PSF at a fixed pixel size.
pub struct Renderer<'a> {
    psf: &'a PsfStack,
    bank: Option<PhaseBank>,
}

fn integer_stride(pixel_size: f64, step: f64) -> Option<usize> {
    let ratio = pixel_size / step;
    let r = ratio.round();
    (r >= 1.0 && (ratio - r).abs() < 1e-9).then_some(r as usize)
}

/// Split a grid coordinate into (node index, fractional weight).
#[inline]
fn split(u: f64) -> (i64, f64) {
    let f = u.floor();
    (f as i64, u - f)
}

impl<'a> Renderer<'a> {
    pub fn new(psf: &'a PsfStack, pixel_size: f64) -> Self {
        let bank = integer_stride(pixel_size, psf.lateral_step).map(|s| PhaseBank::new(psf, s));
        Renderer { psf, bank }
    }

    /// Same as [`render`].
    pub fn render(&self, sets: &[EmitterSet], cam: &CameraParams) -> FloatImage {
        let mut out = FloatImage::filled(cam.width, cam.height, cam.pixel_size, 0.0);
        for set in sets {
            let img = self.render_set(set, cam);
            for (o, v) in out.data.iter_mut().zip(&img) {
                *o += v;
            }
        }
        out
    }

    fn render_set(&self, set: &EmitterSet, cam: &CameraParams) -> Vec<f64> {
        let (w, h) = (cam.width, cam.height);
        let mut img = vec![0f64; w * h];
        let px_scale = (cam.pixel_size / self.psf.lateral_step).powi(2) * cam.detection_efficiency;
        match (&self.bank, integer_stride(cam.pixel_size, self.psf.lateral_step)) {
            (Some(bank), Some(s)) if s == bank.stride => {
                for e in set.emitters.iter().filter(|e| e.photons > 0) {
                    self.splat_banked(bank, e.position, e.photons as f64 * px_scale, cam, &mut img);
                }
            }
            _ => {
                let ps = cam.pixel_size;
                let reach = self.psf.lateral_center() as f64 * self.psf.lateral_step + self.psf.lateral_step;
                for e in set.emitters.iter().filter(|e| e.photons > 0) {
                    let gain = e.photons as f64 * px_scale;
                    let [ex, ey, ez] = e.position;
                    let x0 = (((ex - reach) / ps - 0.5).floor().max(0.0)) as usize;
                    let x1 = (((ex + reach) / ps).ceil().max(0.0) as usize).min(w);
                    let y0 = (((ey - reach) / ps - 0.5).floor().max(0.0)) as usize;
                    let y1 = (((ey + reach) / ps).ceil().max(0.0) as usize).min(h);
                    for y in y0..y1 {
                        let dy = (y as f64 + 0.5) * ps - ey;
                        for x in x0..x1 {
                            let dx = (x as f64 + 0.5) * ps - ex;
                            img[y * w + x] += gain * self.psf.value(dx, dy, -ez);
                        }
                    }
                }
            }
        }
        img
    }

    fn splat_banked(
        &self,
        bank: &PhaseBank,
        pos: [f64; 3],
        gain: f64,
        cam: &CameraParams,
        img: &mut [f64],
    ) {
        let psf = self.psf;
        let s = bank.stride as i64;
        let m = bank.m as i64;
        let (w, h) = (cam.width as i64, cam.height as i64);
        let c = psf.lateral_center() as f64;
        let half_px = 0.5 * cam.pixel_size / psf.lateral_step;
        let (gx, fx) = split(half_px - pos[0] / psf.lateral_step + c);
        let (gy, fy) = split(half_px - pos[1] / psf.lateral_step + c);
        let (gz, fz) = split(-pos[2] / psf.axial_step + psf.axial_center() as f64);
        for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
            let iz = gz + dz;
            if iz < 0 || iz >= psf.n_axial as i64 || wz == 0.0 {
                continue;
            }
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                let ny = gy + dy;
                let (py, my0) = (ny.rem_euclid(s), ny.div_euclid(s));
                // pixel row i reads block row my0 + i
                let i0 = (-my0).max(0);
                let i1 = (m - my0).min(h);
                if wy == 0.0 || i0 >= i1 {
                    continue;
                }
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let nx = gx + dx;
                    let (px, mx0) = (nx.rem_euclid(s), nx.div_euclid(s));
                    let j0 = (-mx0).max(0);
                    let j1 = (m - mx0).min(w);
                    if wx == 0.0 || j0 >= j1 {
                        continue;
                    }
                    let weight = gain * wz * wy * wx;
                    let block = bank.block(iz as usize, py as usize, px as usize);
                    for i in i0..i1 {
                        let src = &block[((my0 + i) * m + mx0 + j0) as usize..][..(j1 - j0) as usize];
                        let dst = &mut img[(i * w + j0) as usize..][..(j1 - j0) as usize];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d += weight * v as f64;
                        }
                    }
                }
            }
        }
    }
}

/// Expected detected photons per pixel: for every emitter and pixel, adds
/// `photons × efficiency × psf(center(pixel) − position)`, with the PSF
/// rescaled from its grid to pixel area.
///
/// Each set is accumulated separately and the per-set images are summed in
/// order, so `render([A, B]) == render([A]) + render([B])` bit for bit.
pub fn render(sets: &[EmitterSet], psf: &PsfStack, cam: &CameraParams) -> FloatImage {
    Renderer::new(psf, cam.pixel_size).render(sets, cam)
}

/// Shot noise plus dark current, offset by the baseline and clamped.
///
/// Pixel `i` draws from its own stream seeded with `stable_hash(seed, i)`.
pub fn add_noise(img: &FloatImage, cam: &CameraParams, seed: u64) -> Image {
    let dark = cam.dark_mean();
    let data: Vec<u16> = img
        .data
        .par_iter()
        .enumerate()
        .map(|(i, &signal)| {
            let mut rng = rng_from(stable_hash(seed, i as u64));
            let count = poisson(signal.max(0.0) + dark, &mut rng) + cam.baseline as u64;
            count.min(cam.max_count as u64) as u16
        })
        .collect();
    Image {
        width: img.width,
        height: img.height,
        pixel_size: img.pixel_size,
        data,
    }
}

pub const TILE: usize = 128;

/// 2×2 montage of four 128×128 sub-images.
pub fn montage(tiles: [&FloatImage; 4]) -> Result<FloatImage> {
    for t in &tiles {
        if t.dims() != (TILE, TILE) {
            return Err(Error::DimensionMismatch {
                expected: (TILE, TILE),
                got: t.dims(),
            });
        }
    }
    montage2x2(tiles)
}

/// Linear-interpolated percentile, `q` in [0, 100]. Sorts `values`.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 >= n {
        values[n - 1]
    } else {
        values[i] * (1.0 - f) + values[i + 1] * f
    }
}

/// `(p99(foreground) − mean(background)) / std(background)`.
pub fn measure_snr(img: &Image, foreground: &Mask) -> Result<f64> {
    img.ensure_same_dims(foreground)?;
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&v, &f) in img.data.iter().zip(&foreground.data) {
        if f {
            fg.push(v as f64);
        } else {
            bg.push(v as f64);
        }
    }
    if fg.is_empty() || bg.is_empty() {
        return Err(Error::Snr("foreground must be neither empty nor full".into()));
    }
    let n = bg.len() as f64;
    let mean = bg.iter().sum::<f64>() / n;
    let var = bg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Snr("background has zero variance".into()));
    }
    Ok((percentile(&mut fg, 99.0) - mean) / var.sqrt())
}
