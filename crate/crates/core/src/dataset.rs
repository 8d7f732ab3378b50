//! Sample generation, montage assembly, splits and on-disk layout.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geometry::{gen_mitochondrion, GeometryParams, Mitochondrion, Point3};
use crate::groundtruth::{merge_binary, multiclass_gt, physical_gt, InstanceMask, MultiClassMask};
use crate::imaging::{add_noise, measure_snr, montage, CameraParams, Renderer, TILE};
use crate::io;
use crate::optics::{compute_psf, PsfStack};
use crate::photophysics::{place_emitters, simulate_photons, EmitterSet};
use crate::raster::{montage2x2, FloatImage, Image, Mask, Raster};
use crate::rng::{rng_from, stable_hash, substream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub instance_id: u32,
    /// Sub-image index, row-major (0 top-left .. 3 bottom-right).
    pub tile: usize,
    /// Skeleton knots in montage coordinates, nm.
    pub knots: Vec<Point3>,
    /// nm
    pub radius: f64,
    pub length: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub emitter_count: usize,
    pub photons_total: u64,
    pub photons_mean: f64,
    pub gt_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    /// Measured against the binary ground truth; absent when undefined.
    pub snr: Option<f64>,
    pub instances: Vec<InstanceMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub noisy: Image,
    pub noise_free: FloatImage,
    pub gt: Mask,
    pub gt_multiclass: MultiClassMask,
    pub instances: Vec<InstanceMask>,
    pub meta: SampleMeta,
}

/// Config plus the precomputed PSF.
#[derive(Clone)]
pub struct Simulator {
    pub config: Config,
    pub psf: Arc<PsfStack>,
}

fn tile_camera(cam: &CameraParams) -> CameraParams {
    CameraParams { width: TILE, height: TILE, ..cam.clone() }
}

/// Seed of sub-image `t` of a sample.
pub fn tile_seed(sample_seed: u64, t: usize) -> u64 {
    stable_hash(substream(sample_seed, Stream::Tile), t as u64)
}

/// Seed of sample `i` of a dataset.
pub fn sample_seed(master_seed: u64, i: usize) -> u64 {
    stable_hash(master_seed, i as u64)
}

pub fn sample_id(i: usize) -> String {
    format!("s{i:05}")
}

struct TileOutput {
    image: FloatImage,
    sets: Vec<EmitterSet>,
    masks: Vec<Mask>,
    meta: Vec<InstanceMeta>,
}

impl Simulator {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let psf = compute_psf(&config.optics).map_err(|e| e.at("psf"))?;
        Self::with_psf(config, psf)
    }

    pub fn with_psf(config: Config, psf: impl Into<Arc<PsfStack>>) -> Result<Self> {
        config.validate()?;
        if (config.camera.width, config.camera.height) != (TILE, TILE) {
            return Err(Error::invalid(format!(
                "camera: sub-image must be {TILE}x{TILE} px, got {}x{}",
                config.camera.width, config.camera.height
            )));
        }
        Ok(Simulator { config, psf: psf.into() })
    }

    /// Knot box placed at the center of a sub-image.
    fn tile_geometry(&self) -> (GeometryParams, f64, f64) {
        let g = &self.config.geometry;
        let field = TILE as f64 * self.config.camera.pixel_size;
        let ox = ((field - g.knot_box[0]) / 2.0).max(0.0);
        let oy = ((field - g.knot_box[1]) / 2.0).max(0.0);
        (g.clone(), ox, oy)
    }

    /// Mitochondria and photon-labelled emitters of sub-image `t`, in
    /// sub-image coordinates. Independent of camera and noise settings.
    pub fn tile_emitters(&self, seed: u64, t: usize) -> Result<Vec<(Mitochondrion, EmitterSet)>> {
        let cfg = &self.config;
        let (geom, ox, oy) = self.tile_geometry();
        let mut rng = rng_from(substream(seed, Stream::Geometry));
        let count = if rng.random_bool(cfg.dataset.pair_probability) { 2 } else { 1 };
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let id = (2 * t + k + 1) as u32;
            let mito = gen_mitochondrion(&geom, id, &mut rng).map_err(|e| e.at("geometry"))?;
            let mito = Mitochondrion {
                skeleton: mito.skeleton.translated(ox, oy),
                ..mito
            };
            let mut erng = rng_from(stable_hash(substream(seed, Stream::Emitters), k as u64));
            let placed = place_emitters(&mito, cfg.photophysics.emitter_density, &mut erng);
            let set = simulate_photons(
                &placed,
                &cfg.photophysics,
                stable_hash(substream(seed, Stream::Photons), k as u64),
            );
            out.push((mito, set));
        }
        Ok(out)
    }

    fn simulate_tile(&self, renderer: &Renderer, seed: u64, t: usize) -> Result<TileOutput> {
        let cam = tile_camera(&self.config.camera);
        let mut sets = Vec::new();
        let mut masks = Vec::new();
        let mut meta = Vec::new();
        let (mx, my) = ((t % 2) as f64 * TILE as f64, (t / 2) as f64 * TILE as f64);
        for (mito, set) in self.tile_emitters(seed, t)? {
            let id = mito.instance_id;
            let mask = physical_gt(&set, &cam).mask;
            let zs = mito.skeleton.points.iter().map(|p| p[2]);
            let z_min = zs.clone().fold(f64::INFINITY, f64::min);
            let z_max = zs.fold(f64::NEG_INFINITY, f64::max);
            let ps = cam.pixel_size;
            meta.push(InstanceMeta {
                instance_id: id,
                tile: t,
                knots: mito
                    .skeleton
                    .knots
                    .iter()
                    .map(|p| [p[0] + mx * ps, p[1] + my * ps, p[2]])
                    .collect(),
                radius: mito.radius,
                length: mito.skeleton.length(),
                z_min,
                z_max,
                emitter_count: set.len(),
                photons_total: set.total_photons(),
                photons_mean: if set.is_empty() {
                    0.0
                } else {
                    set.total_photons() as f64 / set.len() as f64
                },
                gt_pixels: mask.count(),
            });
            masks.push(mask);
            sets.push(set);
        }
        let image = renderer.render(&sets, &cam);
        Ok(TileOutput { image, sets, masks, meta })
    }

    /// Four sub-images montaged to 256×256 with noise applied once.
    pub fn generate_sample(&self, seed: u64) -> Result<Sample> {
        self.generate_named(&format!("{seed:016x}"), seed)
    }

    pub fn generate_named(&self, id: &str, seed: u64) -> Result<Sample> {
        let cam = &self.config.camera;
        let renderer = Renderer::new(&self.psf, cam.pixel_size);
        let tiles: Vec<TileOutput> = (0..4)
            .map(|t| self.simulate_tile(&renderer, tile_seed(seed, t), t))
            .collect::<Result<_>>()?;
        let noise_free = montage([&tiles[0].image, &tiles[1].image, &tiles[2].image, &tiles[3].image])
            .map_err(|e| e.at("montage"))?;
        let empty = Mask::filled(TILE, TILE, cam.pixel_size, false);
        let mut instances = Vec::new();
        let mut meta = Vec::new();
        for (t, tile) in tiles.iter().enumerate() {
            for (mask, m) in tile.masks.iter().zip(&tile.meta) {
                let mut quad = [&empty, &empty, &empty, &empty];
                quad[t] = mask;
                instances.push(InstanceMask {
                    mask: montage2x2(quad).map_err(|e| e.at("groundtruth"))?,
                    instance_id: m.instance_id,
                });
                meta.push(m.clone());
            }
        }
        debug_assert_eq!(tiles.iter().map(|t| t.sets.len()).sum::<usize>(), instances.len());
        let gt = merge_binary(&instances).map_err(|e| e.at("groundtruth"))?;
        let gt_multiclass = multiclass_gt(&instances).map_err(|e| e.at("groundtruth"))?;
        let montage_cam = CameraParams { width: 2 * TILE, height: 2 * TILE, ..cam.clone() };
        let noisy = add_noise(&noise_free, &montage_cam, substream(seed, Stream::Noise));
        let snr = measure_snr(&noisy, &gt).ok();
        Ok(Sample {
            id: id.to_string(),
            meta: SampleMeta {
                id: id.to_string(),
                seed,
                width: noisy.width,
                height: noisy.height,
                pixel_size: cam.pixel_size,
                snr,
                instances: meta,
            },
            noisy,
            noise_free,
            gt,
            gt_multiclass,
            instances,
        })
    }
}

/// Binary mask as 8-bit {0, 255}.
pub fn mask_to_png(mask: &Mask) -> Raster<u8> {
    mask.map(|&v| if v { 255 } else { 0 })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub image: String,
    pub noise_free: String,
    pub gt: String,
    pub gt_multiclass: String,
    pub meta: String,
}

impl SampleFiles {
    pub fn for_id(id: &str) -> Self {
        SampleFiles {
            image: format!("images/{id}.tif"),
            noise_free: format!("images/{id}_nf.tif"),
            gt: format!("gt/{id}_gt.png"),
            gt_multiclass: format!("gt/{id}_gtmc.png"),
            meta: format!("meta/{id}.json"),
        }
    }

    pub fn all(&self) -> [&str; 5] {
        [&self.image, &self.noise_free, &self.gt, &self.gt_multiclass, &self.meta]
    }
}

pub fn write_sample(root: &Path, sample: &Sample) -> Result<SampleFiles> {
    let files = SampleFiles::for_id(&sample.id);
    io::write_tiff_u16(&root.join(&files.image), &sample.noisy)?;
    io::write_tiff_f32(&root.join(&files.noise_free), &sample.noise_free)?;
    io::write_png_u8(&root.join(&files.gt), &mask_to_png(&sample.gt))?;
    io::write_png_u8(&root.join(&files.gt_multiclass), &sample.gt_multiclass)?;
    let json = serde_json::to_string_pretty(&sample.meta).expect("metadata serializes");
    io::write_text(&root.join(&files.meta), &(json + "\n"))?;
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub files: SampleFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footer {
    pub count: usize,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub failures: Vec<Failure>,
}

#[derive(Serialize, Deserialize)]
struct FooterLine {
    footer: Footer,
}

impl Manifest {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == s)
    }

    /// JSON lines: one entry per line, then a footer line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        let footer = FooterLine {
            footer: Footer { count: self.entries.len(), failures: self.failures.clone() },
        };
        out.push_str(&serde_json::to_string(&footer).expect("footer serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let mut m = Manifest::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |e: serde_json::Error| Error::format(path, format!("line {}: {e}", n + 1));
            if line.starts_with("{\"footer\"") {
                let f: FooterLine = serde_json::from_str(line).map_err(bad)?;
                m.failures = f.footer.failures;
            } else {
                m.entries.push(serde_json::from_str(line).map_err(bad)?);
            }
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&io::read_text(path)?, path)
    }
}

/// Split of each sample index: a seeded shuffle cut at the configured fractions.
pub fn assign_splits(n: usize, master_seed: u64, train: f64, val: f64) -> Vec<Split> {
    let key = substream(master_seed, Stream::Split);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (stable_hash(key, i as u64), i));
    let n_train = (train * n as f64).round() as usize;
    let n_val = ((val * n as f64).round() as usize).min(n - n_train.min(n));
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// Generates `n` samples under `out` and writes `manifest.jsonl`.
///
/// Per-sample failures are logged, recorded in the manifest footer and do
/// not stop the run.
pub fn generate_dataset(sim: &Simulator, n: usize, master_seed: u64, out: &Path) -> Result<Manifest> {
    if n < 10 {
        return Err(Error::invalid(format!("dataset needs n >= 10, got {n}")));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let d = &sim.config.dataset;
    let splits = assign_splits(n, master_seed, d.train_fraction, d.val_fraction);
    let results: Vec<std::result::Result<ManifestEntry, Failure>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let id = sample_id(i);
            let seed = sample_seed(master_seed, i);
            let run = || -> Result<SampleFiles> {
                let sample = sim.generate_named(&id, seed)?;
                write_sample(out, &sample).map_err(|e| e.at("write"))
            };
            match run() {
                Ok(files) => {
                    log::info!("sample {id} done");
                    Ok(ManifestEntry { id, split: splits[i], seed, files })
                }
                Err(e) => {
                    log::error!("sample {id} failed: {e}");
                    Err(Failure { id, seed, error: e.to_string() })
                }
            }
        })
        .collect();
    let mut manifest = Manifest::default();
    for r in results {
        match r {
            Ok(e) => manifest.entries.push(e),
            Err(f) => manifest.failures.push(f),
        }
    }
    let path: PathBuf = out.join("manifest.jsonl");
    io::write_text(&path, &manifest.to_jsonl())?;
    Ok(manifest)
}

/// Geometric augmentation applied identically to the image and every mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augment {
    FlipH,
    FlipV,
    Rot90,
    Rot180,
    Rot270,
    Crop { x: usize, y: usize, w: usize, h: usize },
}

fn transform<T: Copy + Default>(r: &Raster<T>, op: Augment) -> Result<Raster<T>> {
    Ok(match op {
        Augment::FlipH => r.flip_h(),
        Augment::FlipV => r.flip_v(),
        Augment::Rot90 => r.rot90(),
        Augment::Rot180 => r.rot90().rot90(),
        Augment::Rot270 => r.rot90().rot90().rot90(),
        Augment::Crop { x, y, w, h } => r.crop(x, y, w, h)?,
    })
}

/// Metadata is carried over unchanged; knots stay in the original frame.
pub fn augment(sample: &Sample, op: Augment) -> Result<Sample> {
    Ok(Sample {
        id: sample.id.clone(),
        noisy: transform(&sample.noisy, op)?,
        noise_free: transform(&sample.noise_free, op)?,
        gt: transform(&sample.gt, op)?,
        gt_multiclass: transform(&sample.gt_multiclass, op)?,
        instances: sample
            .instances
            .iter()
            .map(|i| Ok(InstanceMask { mask: transform(&i.mask, op)?, instance_id: i.instance_id }))
            .collect::<Result<_>>()?,
        meta: sample.meta.clone(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationStep {
    pub photon_rate: f64,
    pub snr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub photon_rate: f64,
    pub snr: f64,
    pub history: Vec<CalibrationStep>,
}

pub const CALIBRATION_SAMPLES: usize = 20;

/// Mean SNR over `count` samples seeded from `seed`.
pub fn mean_snr(sim: &Simulator, seed: u64, count: usize) -> Result<f64> {
    let key = substream(seed, Stream::Sample);
    let snrs: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|i| {
            let s = sim.generate_sample(stable_hash(key, i as u64))?;
            s.meta.snr.ok_or_else(|| Error::Snr(format!("sample {i} has undefined SNR")))
        })
        .collect::<Result<_>>()?;
    Ok(snrs.iter().sum::<f64>() / count as f64)
}

/// Bisection in log photon rate until the mean SNR over 20 samples is within
/// `tolerance` of `target`. The search brackets `[rate/16, rate·16]` around
/// the configured rate.
pub fn calibrate_snr(sim: &Simulator, target: f64, tolerance: f64, seed: u64) -> Result<Calibration> {
    if !(target > 0.0) || !(tolerance > 0.0) {
        return Err(Error::invalid("calibration: target and tolerance must be positive"));
    }
    let base = sim.config.photophysics.photon_rate;
    let measure = |rate: f64, history: &mut Vec<CalibrationStep>| -> Result<f64> {
        let mut cfg = sim.config.clone();
        cfg.photophysics.photon_rate = rate;
        let trial = Simulator { config: cfg, psf: Arc::clone(&sim.psf) };
        let snr = mean_snr(&trial, seed, CALIBRATION_SAMPLES)?;
        log::info!("photon_rate {rate:.1}: mean SNR {snr:.3}");
        history.push(CalibrationStep { photon_rate: rate, snr });
        Ok(snr)
    };
    let mut history = Vec::new();
    let (mut lo, mut hi) = (base / 16.0, base * 16.0);
    let s_lo = measure(lo, &mut history)?;
    let s_hi = measure(hi, &mut history)?;
    if !(s_hi > s_lo) {
        return Err(Error::Calibration(format!(
            "SNR not increasing in photon rate: {s_lo:.3} at {lo:.1}, {s_hi:.3} at {hi:.1}"
        )));
    }
    if !(s_lo <= target && target <= s_hi) {
        return Err(Error::Calibration(format!(
            "target {target} outside bracket: SNR {s_lo:.3} at rate {lo:.1}, {s_hi:.3} at rate {hi:.1}"
        )));
    }
    // aim inside the tolerance so a fresh draw still lands within it
    let goal = tolerance / 4.0;
    for _ in 0..40 {
        let mid = (lo * hi).sqrt();
        let s = measure(mid, &mut history)?;
        if (s - target).abs() <= goal {
            return Ok(Calibration { photon_rate: mid, snr: s, history });
        }
        if s < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = history
        .iter()
        .min_by(|a, b| (a.snr - target).abs().total_cmp(&(b.snr - target).abs()))
        .cloned()
        .expect("history is non-empty");
    if (best.snr - target).abs() <= tolerance {
        return Ok(Calibration { photon_rate: best.photon_rate, snr: best.snr, history });
    }
    Err(Error::Calibration(format!(
        "no rate within tolerance after bisection; closest SNR {:.3} at rate {:.1}",
        best.snr, best.photon_rate
    )))
}
