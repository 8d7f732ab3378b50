//! Unsupervised baselines and connected-component labeling.

use crate::error::{Error, Result};
use crate::raster::{Image, Mask, Raster};

/// Otsu split of a histogram: the bin `t` maximizing the between-class
/// variance of `{bins <= t}` vs `{bins > t}`. `None` when fewer than two
/// bins are populated.
///
/// The objective is evaluated as `(S·w₀ − s₀·N)² / (w₀·(N − w₀))` with exact
/// integer numerator, so translating the histogram moves the optimum by
/// exactly the translation.
pub fn otsu_bin(hist: &[u64]) -> Option<usize> {
    let n: u64 = hist.iter().sum();
    let total: i128 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| i as i128 * h as i128)
        .sum();
    let mut w0: u64 = 0;
    let mut s0: i128 = 0;
    let mut best: Option<(usize, f64)> = None;
    for (t, &h) in hist.iter().enumerate() {
        w0 += h;
        s0 += t as i128 * h as i128;
        if w0 == 0 {
            continue;
        }
        if w0 == n {
            break;
        }
        let num = total * w0 as i128 - s0 * n as i128;
        let den = w0 as f64 * (n - w0) as f64;
        let score = (num as f64) * (num as f64) / den;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((t, score));
        }
    }
    best.map(|(t, _)| t)
}

/// Otsu threshold over the full 16-bit histogram; foreground is `> t`.
pub fn otsu_level(values: &[u16]) -> Option<u16> {
    let mut hist = vec![0u64; 65536];
    for &v in values {
        hist[v as usize] += 1;
    }
    otsu_bin(&hist).map(|t| t as u16)
}

/// Otsu on real values with `bins` equal-width bins spanning `[min, max]`.
///
/// Returns the largest background value, so foreground is `v > t`.
pub fn otsu_level_f64(values: &[f64], bins: usize) -> Option<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return None;
    }
    let scale = bins as f64 / (hi - lo);
    let bin = |v: f64| (((v - lo) * scale) as usize).min(bins - 1);
    let mut hist = vec![0u64; bins];
    for &v in values {
        hist[bin(v)] += 1;
    }
    let t = otsu_bin(&hist)?;
    values
        .iter()
        .copied()
        .filter(|&v| bin(v) <= t)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
}

/// Global Otsu segmentation; a constant image yields an empty mask.
pub fn otsu_threshold(img: &Image) -> Mask {
    match otsu_level(&img.data) {
        Some(t) => img.map(|&v| v > t),
        None => img.map(|_| false),
    }
}

/// Window start along one axis: the window is shifted inward at the border
/// and spans the whole axis when it is larger than the image.
#[inline]
fn window_span(c: usize, r: usize, len: usize) -> (usize, usize) {
    let win = 2 * r + 1;
    if win >= len {
        return (0, len);
    }
    let start = c.saturating_sub(r).min(len - win);
    (start, start + win)
}

/// Local-mean thresholding: foreground iff `value > mean(window) + offset`.
pub fn adaptive_threshold(img: &Image, window: usize, offset: f64) -> Result<Mask> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!(
            "adaptive threshold window must be odd and >= 3, got {window}"
        )));
    }
    let (w, h) = img.dims();
    let stride = w + 1;
    let mut integral = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += *img.get(x, y) as u64;
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
        }
    }
    let r = window / 2;
    let mut out = Mask::filled(w, h, img.pixel_size, false);
    for y in 0..h {
        let (y0, y1) = window_span(y, r, h);
        for x in 0..w {
            let (x0, x1) = window_span(x, r, w);
            let sum = integral[y1 * stride + x1] + integral[y0 * stride + x0]
                - integral[y0 * stride + x1]
                - integral[y1 * stride + x0];
            let area = ((x1 - x0) * (y1 - y0)) as f64;
            let mean = sum as f64 / area;
            out.set(x, y, *img.get(x, y) as f64 > mean + offset);
        }
    }
    Ok(out)
}

/// 8-connected component labels; 0 is background, ids 1..=count in order of
/// first pixel in raster scan.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub labels: Raster<u32>,
    pub count: u32,
}

/// Summary of one labeled component (pixel units).
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    pub id: u32,
    pub area: usize,
    pub centroid: (f64, f64),
    /// `(x0, y0, x1, y1)`, inclusive.
    pub bbox: (usize, usize, usize, usize),
}

impl LabelMap {
    pub fn components(&self) -> Vec<ComponentStats> {
        let n = self.count as usize;
        let mut area = vec![0usize; n];
        let mut sx = vec![0f64; n];
        let mut sy = vec![0f64; n];
        let mut bbox = vec![(usize::MAX, usize::MAX, 0, 0); n];
        for y in 0..self.labels.height {
            for x in 0..self.labels.width {
                let l = *self.labels.get(x, y) as usize;
                if l == 0 {
                    continue;
                }
                let k = l - 1;
                area[k] += 1;
                sx[k] += x as f64;
                sy[k] += y as f64;
                let b = &mut bbox[k];
                *b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
            }
        }
        (0..n)
            .map(|k| ComponentStats {
                id: k as u32 + 1,
                area: area[k],
                centroid: (sx[k] / area[k] as f64, sy[k] / area[k] as f64),
                bbox: bbox[k],
            })
            .collect()
    }
}

pub fn connected_components(mask: &Mask) -> LabelMap {
    let (w, h) = mask.dims();
    let mut labels = Raster::filled(w, h, mask.pixel_size, 0u32);
    let mut count = 0u32;
    let mut stack = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !*mask.get(x0, y0) || *labels.get(x0, y0) != 0 {
                continue;
            }
            count += 1;
            labels.set(x0, y0, count);
            stack.push((x0, y0));
            while let Some((x, y)) = stack.pop() {
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if *mask.get(nx, ny) && *labels.get(nx, ny) == 0 {
                            labels.set(nx, ny, count);
                            stack.push((nx, ny));
                        }
                    }
                }
            }
        }
    }
    LabelMap { labels, count }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(w: usize, h: usize, f: impl Fn(usize, usize) -> u16) -> Image {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Image::from_vec(w, h, 80.0, data).unwrap()
    }

    /// Exhaustive sweep of every threshold, scoring by between-class variance.
    fn sweep_oracle(values: &[u16]) -> Option<u16> {
        let n = values.len() as f64;
        let mut best: Option<(u16, f64)> = None;
        let lo = *values.iter().min()?;
        let hi = *values.iter().max()?;
        for t in lo..hi {
            let (a, b): (Vec<f64>, Vec<f64>) = (
                values.iter().filter(|&&v| v <= t).map(|&v| v as f64).collect(),
                values.iter().filter(|&&v| v > t).map(|&v| v as f64).collect(),
            );
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let score = a.len() as f64 / n * b.len() as f64 / n * (ma - mb).powi(2);
            if best.is_none_or(|(_, s)| score > s * (1.0 + 1e-12)) {
                best = Some((t, score));
            }
        }
        best.map(|b| b.0)
    }

    #[test]
    fn two_level_otsu() {
        let img = image(10, 10, |x, _| if x == 0 { 1000 } else { 100 });
        let t = otsu_level(&img.data).unwrap();
        assert!((100..1000).contains(&t));
        let m = otsu_threshold(&img);
        assert_eq!(m.count(), 10);
        assert!((0..10).all(|y| *m.get(0, y)));
        assert_eq!(Some(t), sweep_oracle(&img.data));
    }

    #[test]
    fn otsu_agrees_with_sweep_on_trimodal() {
        let img = image(12, 12, |x, y| [40, 90, 250][(x * 7 + y * 3) % 3] + (x % 4) as u16);
        assert_eq!(otsu_level(&img.data), sweep_oracle(&img.data));
    }

    #[test]
    fn constant_image_is_empty() {
        let img = image(5, 5, |_, _| 77);
        assert_eq!(otsu_threshold(&img).count(), 0);
        assert_eq!(otsu_level_f64(&[3.0; 9], 256), None);
    }

    #[test]
    fn otsu_f64_threshold_is_consistent_with_bins() {
        let values: Vec<f64> = (0..200).map(|i| if i < 150 { 1.0 + i as f64 * 1e-3 } else { 9.0 }).collect();
        let t = otsu_level_f64(&values, 65536).unwrap();
        assert_eq!(values.iter().filter(|&&v| v > t).count(), 50);
    }

    #[test]
    fn adaptive_rejects_even_or_small_windows() {
        let img = image(4, 4, |_, _| 1);
        assert!(adaptive_threshold(&img, 4, 0.0).is_err());
        assert!(adaptive_threshold(&img, 1, 0.0).is_err());
    }

    #[test]
    fn adaptive_constant_with_offset_is_empty() {
        let img = image(20, 20, |_, _| 500);
        assert_eq!(adaptive_threshold(&img, 5, 1.0).unwrap().count(), 0);
    }

    #[test]
    fn adaptive_matches_brute_force_local_mean() {
        let img = image(23, 17, |x, y| ((x * 31 + y * 17) % 23) as u16 * 10);
        let (win, off) = (7, 2.0);
        let m = adaptive_threshold(&img, win, off).unwrap();
        for y in 0..17usize {
            for x in 0..23usize {
                // brute force over the inward-shifted window
                let x0 = x.saturating_sub(3).min(23 - 7);
                let y0 = y.saturating_sub(3).min(17 - 7);
                let mut s = 0.0;
                for yy in y0..y0 + 7 {
                    for xx in x0..x0 + 7 {
                        s += *img.get(xx, yy) as f64;
                    }
                }
                let expect = *img.get(x, y) as f64 > s / 49.0 + off;
                assert_eq!(*m.get(x, y), expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn two_diagonal_pixels_are_one_component() {
        let mut m = Mask::filled(3, 3, 80.0, false);
        m.set(0, 0, true);
        m.set(1, 1, true);
        assert_eq!(connected_components(&m).count, 1);
        assert_eq!(connected_components(&Mask::filled(3, 3, 80.0, false)).count, 0);
    }

    #[test]
    fn component_ids_follow_raster_order() {
        let mut m = Mask::filled(6, 3, 80.0, false);
        m.set(4, 0, true);
        m.set(0, 2, true);
        m.set(1, 2, true);
        let lm = connected_components(&m);
        assert_eq!(*lm.labels.get(4, 0), 1);
        assert_eq!(*lm.labels.get(1, 2), 2);
        let st = lm.components();
        assert_eq!(st[1].area, 2);
        assert_eq!(st[1].centroid, (0.5, 2.0));
        assert_eq!(st[1].bbox, (0, 2, 1, 2));
    }
}
