//! Row-major 2D rasters shared by images and masks.

use crate::error::{Error, Result};

/// A `width × height` grid stored row-major, tagged with its pixel size in nm.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    pub data: Vec<T>,
}

/// Camera counts.
pub type Image = Raster<u16>;
/// Expected photon counts before noise.
pub type FloatImage = Raster<f64>;
/// Binary mask.
pub type Mask = Raster<bool>;

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, pixel_size: f64, value: T) -> Self {
        Raster {
            width,
            height,
            pixel_size,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, pixel_size: f64, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "raster data has {} elements, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Raster {
            width,
            height,
            pixel_size,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        let i = self.idx(x, y);
        self.data[i] = v;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            pixel_size: self.pixel_size,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_same_dims<U>(&self, other: &Raster<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: other.dims(),
            });
        }
        Ok(())
    }
}

impl<T: Copy + Default> Raster<T> {
    pub fn flip_h(&self) -> Self {
        let mut out = self.clone_empty();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, *self.get(x, y));
            }
        }
        out
    }

    pub fn flip_v(&self) -> Self {
        let mut out = self.clone_empty();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x, self.height - 1 - y, *self.get(x, y));
            }
        }
        out
    }

    /// Counter-clockwise quarter turn; output is `height × width`.
    pub fn rot90(&self) -> Self {
        let mut out = Raster::filled(self.height, self.width, self.pixel_size, T::default());
        for y in 0..self.height {
            for x in 0..self.width {
                // (x, y) -> (y, W-1-x)
                out.set(y, self.width - 1 - x, *self.get(x, y));
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(format!(
                "crop window ({x0},{y0},{w},{h}) outside {}x{} raster",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[self.idx(x0, y)..self.idx(x0 + w, y)]);
        }
        Ok(Raster {
            width: w,
            height: h,
            pixel_size: self.pixel_size,
            data,
        })
    }

    fn clone_empty(&self) -> Self {
        Raster::filled(self.width, self.height, self.pixel_size, T::default())
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

impl FloatImage {
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Tile four equally sized rasters as `[top-left, top-right, bottom-left, bottom-right]`.
pub fn montage2x2<T: Copy + Default>(tiles: [&Raster<T>; 4]) -> Result<Raster<T>> {
    let (w, h) = tiles[0].dims();
    let ps = tiles[0].pixel_size;
    for t in &tiles[1..] {
        tiles[0].ensure_same_dims(t)?;
        if t.pixel_size != ps {
            return Err(Error::invalid("montage tiles differ in pixel size"));
        }
    }
    let mut out = Raster::filled(2 * w, 2 * h, ps, T::default());
    for (k, tile) in tiles.iter().enumerate() {
        let (ox, oy) = ((k % 2) * w, (k / 2) * h);
        for y in 0..h {
            let dst = out.idx(ox, oy + y);
            out.data[dst..dst + w].copy_from_slice(&tile.data[y * w..(y + 1) * w]);
        }
    }
    Ok(out)
}
