//! Ground-truth masks.
//!
//! The physical ground truth projects emitter positions onto a 1 nm lateral
//! grid, marks occupied cells, then max-pools with window and stride equal to
//! the camera pixel size. The grid is materialized only over each instance's
//! pixel-aligned bounding box, which yields the same mask as the full field.
//!
//! Three image-based alternatives (Otsu, eroded Otsu, noise threshold) are
//! kept for comparison.

use crate::error::{Error, Result};
use crate::imaging::{percentile, CameraParams};
use crate::optics::PsfStack;
use crate::photophysics::EmitterSet;
use crate::raster::{FloatImage, Image, Mask, Raster};
use crate::segmentation::otsu_level_f64;

/// Per-pixel labels: 0 background, 1 single mitochondrion, 2 overlap.
pub type MultiClassMask = Raster<u8>;

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub mask: Mask,
    pub instance_id: u32,
}

/// Occupancy bitmap of 1 nm cells.
struct CellGrid {
    width: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl CellGrid {
    fn new(width: usize, height: usize) -> Self {
        let words_per_row = width.div_ceil(64);
        CellGrid {
            width,
            words_per_row,
            bits: vec![0; words_per_row * height],
        }
    }

    fn set(&mut self, x: usize, y: usize) {
        self.bits[y * self.words_per_row + x / 64] |= 1 << (x % 64);
    }

    /// Any cell set in `[x0, x0 + len)` of row `y`.
    fn any_in_row(&self, y: usize, x0: usize, len: usize) -> bool {
        let row = &self.bits[y * self.words_per_row..(y + 1) * self.words_per_row];
        let mut x = x0;
        let end = (x0 + len).min(self.width);
        while x < end {
            let word = x / 64;
            let lo = x % 64;
            let hi = (end - word * 64).min(64);
            let span = if hi - lo == 64 {
                u64::MAX
            } else {
                ((1u64 << (hi - lo)) - 1) << lo
            };
            if row[word] & span != 0 {
                return true;
            }
            x = word * 64 + hi;
        }
        false
    }
}

/// Physical ground truth of one instance on the camera grid.
pub fn physical_gt(set: &EmitterSet, cam: &CameraParams) -> InstanceMask {
    let ps = cam.pixel_size as i64;
    let mut mask = Mask::filled(cam.width, cam.height, cam.pixel_size, false);
    let (fw, fh) = (cam.width as i64 * ps, cam.height as i64 * ps);
    let cells: Vec<(i64, i64)> = set
        .emitters
        .iter()
        .map(|e| (e.position[0].floor() as i64, e.position[1].floor() as i64))
        .filter(|&(x, y)| (0..fw).contains(&x) && (0..fh).contains(&y))
        .collect();
    if cells.is_empty() {
        log::warn!(
            "instance {}: no emitters inside the field; empty ground truth",
            set.instance_id
        );
        return InstanceMask {
            mask,
            instance_id: set.instance_id,
        };
    }
    let px0 = cells.iter().map(|c| c.0).min().unwrap() / ps;
    let px1 = cells.iter().map(|c| c.0).max().unwrap() / ps;
    let py0 = cells.iter().map(|c| c.1).min().unwrap() / ps;
    let py1 = cells.iter().map(|c| c.1).max().unwrap() / ps;
    let (ox, oy) = (px0 * ps, py0 * ps);
    let mut grid = CellGrid::new(
        ((px1 - px0 + 1) * ps) as usize,
        ((py1 - py0 + 1) * ps) as usize,
    );
    for &(x, y) in &cells {
        grid.set((x - ox) as usize, (y - oy) as usize);
    }
    let p = ps as usize;
    for py in py0..=py1 {
        for px in px0..=px1 {
            let gx = ((px - px0) * ps) as usize;
            let gy = ((py - py0) * ps) as usize;
            if (gy..gy + p).any(|y| grid.any_in_row(y, gx, p)) {
                mask.set(px as usize, py as usize, true);
            }
        }
    }
    InstanceMask {
        mask,
        instance_id: set.instance_id,
    }
}

fn check_instances(instances: &[InstanceMask]) -> Result<(usize, usize, f64)> {
    let first = instances
        .first()
        .ok_or_else(|| Error::invalid("at least one instance mask required"))?;
    for inst in &instances[1..] {
        first.mask.ensure_same_dims(&inst.mask)?;
    }
    Ok((first.mask.width, first.mask.height, first.mask.pixel_size))
}

/// Pixelwise union of instance masks.
pub fn merge_binary(instances: &[InstanceMask]) -> Result<Mask> {
    let (w, h, ps) = check_instances(instances)?;
    let mut out = Mask::filled(w, h, ps, false);
    for inst in instances {
        for (o, &v) in out.data.iter_mut().zip(&inst.mask.data) {
            *o |= v;
        }
    }
    Ok(out)
}

/// Per pixel `min(number of covering instances, 2)`.
pub fn multiclass_gt(instances: &[InstanceMask]) -> Result<MultiClassMask> {
    let (w, h, ps) = check_instances(instances)?;
    let mut out = MultiClassMask::filled(w, h, ps, 0);
    for inst in instances {
        for (o, &v) in out.data.iter_mut().zip(&inst.mask.data) {
            if v {
                *o = (*o + 1).min(2);
            }
        }
    }
    Ok(out)
}

/// Otsu threshold of the noise-free image; empty for constant images.
pub fn otsu_gt(noisefree: &FloatImage) -> Mask {
    match otsu_level_f64(&noisefree.data, 65536) {
        Some(t) => noisefree.map(|&v| v > t),
        None => noisefree.map(|_| false),
    }
}

/// Erosion with the digital disk `{(dx, dy): dx² + dy² <= r²}`; pixels
/// outside the raster do not erode.
pub fn erode_disk(mask: &Mask, radius: usize) -> Mask {
    let r = radius as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            if !*mask.get(x as usize, y as usize) {
                continue;
            }
            let keep = offsets.iter().all(|&(dx, dy)| {
                let (xx, yy) = (x + dx, y + dy);
                xx < 0 || yy < 0 || xx >= w || yy >= h || *mask.get(xx as usize, yy as usize)
            });
            out.set(x as usize, y as usize, keep);
        }
    }
    out
}

/// Disk radius in pixels for half the in-focus PSF diameter (FWHM).
pub fn erosion_radius(psf: &PsfStack, pixel_size: f64) -> usize {
    (psf.in_focus_fwhm() / 2.0 / pixel_size).round() as usize
}

/// Otsu ground truth eroded by half the in-focus PSF width.
pub fn otsu_eroded_gt(noisefree: &FloatImage, psf: &PsfStack) -> Mask {
    let base = otsu_gt(noisefree);
    let r = erosion_radius(psf, noisefree.pixel_size);
    if r == 0 {
        log::warn!("erosion radius rounds to 0 px; returning the Otsu mask unchanged");
        return base;
    }
    erode_disk(&base, r)
}

/// Foreground where intensity exceeds `p99(intensity) / snr`.
pub fn noise_threshold_gt(noisy: &Image, snr: f64) -> Result<Mask> {
    if !(snr > 0.0) {
        return Err(Error::invalid("noise threshold: snr must be positive"));
    }
    let mut values: Vec<f64> = noisy.data.iter().map(|&v| v as f64).collect();
    let threshold = percentile(&mut values, 99.0) / snr;
    Ok(noisy.map(|&v| v as f64 > threshold))
}
