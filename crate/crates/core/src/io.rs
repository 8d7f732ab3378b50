//! TIFF and PNG raster I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};

use crate::error::{Error, Result};
use crate::raster::{FloatImage, Image, Raster};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn tiff_err(path: &Path) -> impl Fn(tiff::TiffError) -> Error + '_ {
    move |e| Error::format(path, e.to_string())
}

pub fn write_tiff_u16(path: &Path, img: &Image) -> Result<()> {
    let mut enc = TiffEncoder::new(create(path)?).map_err(tiff_err(path))?;
    enc.write_image::<colortype::Gray16>(img.width as u32, img.height as u32, &img.data)
        .map_err(tiff_err(path))
}

/// Writes `pages` as a multi-page 32-bit float TIFF.
pub fn write_tiff_f32_pages(path: &Path, width: usize, height: usize, pages: &[&[f32]]) -> Result<()> {
    let mut enc = TiffEncoder::new(create(path)?).map_err(tiff_err(path))?;
    for page in pages {
        if page.len() != width * height {
            return Err(Error::format(path, "page size does not match dimensions"));
        }
        enc.write_image::<colortype::Gray32Float>(width as u32, height as u32, page)
            .map_err(tiff_err(path))?;
    }
    Ok(())
}

pub fn write_tiff_f32(path: &Path, img: &FloatImage) -> Result<()> {
    let data: Vec<f32> = img.data.iter().map(|&v| v as f32).collect();
    write_tiff_f32_pages(path, img.width, img.height, &[&data])
}

fn decoder(path: &Path) -> Result<Decoder<BufReader<File>>> {
    Ok(Decoder::new(open(path)?).map_err(tiff_err(path))?.with_limits(Limits::unlimited()))
}

pub fn read_tiff_u16(path: &Path, pixel_size: f64) -> Result<Image> {
    let mut dec = decoder(path)?;
    let (w, h) = dec.dimensions().map_err(tiff_err(path))?;
    match dec.read_image().map_err(tiff_err(path))? {
        DecodingResult::U16(data) => Image::from_vec(w as usize, h as usize, pixel_size, data),
        DecodingResult::U8(data) => Image::from_vec(
            w as usize,
            h as usize,
            pixel_size,
            data.into_iter().map(u16::from).collect(),
        ),
        _ => Err(Error::format(path, "expected 8- or 16-bit grayscale TIFF")),
    }
}

/// Reads every page of a 32-bit float TIFF.
pub fn read_tiff_f32_pages(path: &Path) -> Result<(usize, usize, Vec<Vec<f32>>)> {
    let mut dec = decoder(path)?;
    let (w, h) = dec.dimensions().map_err(tiff_err(path))?;
    let mut pages = Vec::new();
    loop {
        match dec.read_image().map_err(tiff_err(path))? {
            DecodingResult::F32(d) => pages.push(d),
            _ => return Err(Error::format(path, "expected 32-bit float TIFF")),
        }
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(tiff_err(path))?;
    }
    Ok((w as usize, h as usize, pages))
}

pub fn read_tiff_f32(path: &Path, pixel_size: f64) -> Result<FloatImage> {
    let (w, h, mut pages) = read_tiff_f32_pages(path)?;
    let page = pages.swap_remove(0);
    FloatImage::from_vec(w, h, pixel_size, page.into_iter().map(f64::from).collect())
}

pub fn write_png_u8(path: &Path, img: &Raster<u8>) -> Result<()> {
    let mut enc = png::Encoder::new(create(path)?, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut w = enc.write_header().map_err(fmt)?;
    w.write_image_data(&img.data).map_err(fmt)?;
    w.finish().map_err(fmt)
}

/// Reads an 8-bit grayscale PNG.
pub fn read_png_u8(path: &Path, pixel_size: f64) -> Result<Raster<u8>> {
    let fmt = |e: png::DecodingError| Error::format(path, e.to_string());
    let mut reader = png::Decoder::new(open(path)?).read_info().map_err(fmt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "expected 8-bit grayscale PNG"));
    }
    buf.truncate(info.buffer_size());
    Raster::from_vec(info.width as usize, info.height as usize, pixel_size, buf)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let mut f = create(path)?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiff_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_vec(3, 2, 80.0, vec![0, 1, 65535, 100, 200, 300]).unwrap();
        let p = dir.path().join("a.tif");
        write_tiff_u16(&p, &img).unwrap();
        assert_eq!(read_tiff_u16(&p, 80.0).unwrap(), img);

        let f = FloatImage::from_vec(2, 2, 80.0, vec![0.5, 1.25, 3.0, 1e-3]).unwrap();
        let p = dir.path().join("b.tif");
        write_tiff_f32(&p, &f).unwrap();
        let back = read_tiff_f32(&p, 80.0).unwrap();
        for (a, b) in back.data.iter().zip(&f.data) {
            assert_eq!(*a, *b as f32 as f64);
        }

        let pages: Vec<Vec<f32>> = (0..3).map(|k| vec![k as f32; 4]).collect();
        let refs: Vec<&[f32]> = pages.iter().map(|v| v.as_slice()).collect();
        let p = dir.path().join("c.tif");
        write_tiff_f32_pages(&p, 2, 2, &refs).unwrap();
        assert_eq!(read_tiff_f32_pages(&p).unwrap().2, pages);

        let m = Raster::from_vec(3, 1, 80.0, vec![0u8, 255, 2]).unwrap();
        let p = dir.path().join("sub/m.png");
        write_png_u8(&p, &m).unwrap();
        assert_eq!(read_png_u8(&p, 80.0).unwrap(), m);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_png_u8(Path::new("/nonexistent/x.png"), 80.0), Err(Error::Io { .. })));
    }
}
