//! Command-line front end of the `mitosim` binary.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::analytics::{classify_areas, morphology_stats, Morphology};
use crate::config::Config;
use crate::dataset::{calibrate_snr, generate_dataset, sample_seed, write_sample, Simulator};
use crate::error::{Error, Result};
use crate::evaluation::{report, score_image, Report};
use crate::groundtruth::{otsu_eroded_gt, otsu_gt, noise_threshold_gt};
use crate::io;
use crate::optics::compute_psf;
use crate::raster::{Mask, Raster};
use crate::segmentation::{adaptive_threshold, connected_components, otsu_threshold};
use crate::tracking::{events_csv, track_sequence, CostMetric};

pub const DEFAULT_WINDOW: usize = 31;
pub const DEFAULT_OFFSET: f64 = 2.0;

#[derive(Parser, Debug)]
#[command(name = "mitosim", version, about = "Fluorescence microscopy simulator for mitochondria")]
struct Cli {
    /// Worker threads; output does not depend on this value.
    #[arg(long, global = true, env = "MITOSIM_THREADS")]
    threads: Option<usize>,
    /// Validate the configuration, print the resolved parameters and exit.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArg {
    /// JSON config; omitted sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<Config> {
        match &self.config {
            Some(p) => Config::load(p),
            None => Ok(Config::default()),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the PSF stack; writes a multi-page float TIFF and a JSON sidecar.
    Psf {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one sample.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sample")]
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a dataset with train/val/test manifest.
    Dataset {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Baseline segmentation of every image in a directory.
    Segment {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Adaptive window (odd, px).
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        /// Adaptive offset (counts).
        #[arg(long, default_value_t = DEFAULT_OFFSET, allow_negative_numbers = true)]
        offset: f64,
    },
    /// Pixel-wise mIoU / F1 of predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
        classes: u8,
        /// Restrict to one split of the manifest found in the ground-truth root.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Headline aggregation printed to standard output.
        #[arg(long, value_enum, default_value_t = Aggregate::Mean)]
        aggregate: Aggregate,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dot / rod / network statistics of segmented components.
    Analyze {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        multiclass: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-component records CSV.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Track components over a sequence of mask frames (sorted by file name).
    Track {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
        /// Assignment cost; overrides the config.
        #[arg(long, value_enum)]
        cost: Option<CostArg>,
    },
    /// Find the photon rate giving a target mean SNR.
    CalibrateSnr {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, alias = "snr-target", default_value_t = 3.0)]
        target: f64,
        #[arg(long, default_value_t = 0.25)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare thresholding ground truths against the physical one.
    GtCompare {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Method {
    Otsu,
    Adaptive,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Aggregate {
    Mean,
    Pooled,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CostArg {
    Centroid,
    Iou,
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .try_init();
    let result = match cli.threads {
        Some(0) => Err(Error::invalid("--threads must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

/// Loads and validates the config; under `--dry-run` prints it and signals stop.
fn resolve(cli: &Cli, cfg: &ConfigArg, extra: serde_json::Value) -> Result<Option<Config>> {
    let config = cfg.load()?;
    if cli.dry_run {
        print_json(&json!({ "config": config, "args": extra }));
        return Ok(None);
    }
    Ok(Some(config))
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Psf { cfg, out } => {
            let Some(config) = resolve(cli, cfg, json!({ "out": out }))? else { return Ok(()) };
            cmd_psf(&config, out)
        }
        Command::Simulate { cfg, seed, id, out } => {
            let extra = json!({ "seed": seed, "id": id, "out": out });
            let Some(config) = resolve(cli, cfg, extra)? else { return Ok(()) };
            let sim = Simulator::new(config)?;
            let sample = sim.generate_named(id, *seed)?;
            write_sample(out, &sample)?;
            log::info!("wrote sample {id} (SNR {:?}) to {}", sample.meta.snr, out.display());
            Ok(())
        }
        Command::Dataset { cfg, n, seed, out } => {
            let extra = json!({ "n": n, "seed": seed, "out": out });
            let Some(config) = resolve(cli, cfg, extra)? else { return Ok(()) };
            if *n < 10 {
                return Err(Error::invalid(format!("dataset needs --n >= 10, got {n}")));
            }
            let sim = Simulator::new(config)?;
            let m = generate_dataset(&sim, *n, *seed, out)?;
            log::info!(
                "dataset: {} samples, {} failures -> {}",
                m.entries.len(),
                m.failures.len(),
                out.display()
            );
            if m.failures.is_empty() {
                Ok(())
            } else {
                Err(Error::format(out, format!("{} samples failed", m.failures.len())))
            }
        }
        Command::Segment { method, input, out, window, offset } => {
            if *window < 3 || window % 2 == 0 {
                return Err(Error::invalid(format!("--window must be odd and >= 3, got {window}")));
            }
            if cli.dry_run {
                print_json(&json!({ "args": {
                    "method": format!("{method:?}").to_lowercase(),
                    "in": input, "out": out, "window": window, "offset": offset } }));
                return Ok(());
            }
            cmd_segment(*method, input, out, *window, *offset)
        }
        Command::Eval { pred, gt, classes, split, aggregate, out } => {
            if cli.dry_run {
                print_json(&json!({ "args": { "pred": pred, "gt": gt, "classes": classes,
                    "split": split.map(|s| format!("{s:?}").to_lowercase()),
                    "aggregate": format!("{aggregate:?}").to_lowercase(), "out": out } }));
                return Ok(());
            }
            let r = cmd_eval(pred, gt, *classes as usize, *split)?;
            if let Some(out) = out {
                io::write_text(out, &(serde_json::to_string_pretty(&r).expect("report") + "\n"))?;
            }
            let (miou, f1) = match aggregate {
                Aggregate::Mean => (r.mean_miou, r.mean_f1),
                Aggregate::Pooled => (r.pooled_miou, r.pooled_f1),
            };
            print_json(&json!({ "images": r.images.len(), "miou": miou, "f1": f1,
                "mean_miou": r.mean_miou, "pooled_miou": r.pooled_miou }));
            Ok(())
        }
        Command::Analyze { cfg, pred, multiclass, out, records } => {
            let extra = json!({ "pred": pred, "multiclass": multiclass, "out": out, "records": records });
            let Some(config) = resolve(cli, cfg, extra)? else { return Ok(()) };
            cmd_analyze(&config, pred, multiclass, out, records.as_deref())
        }
        Command::Track { cfg, masks, out, events, cost } => {
            let extra = json!({ "masks": masks, "out": out, "events": events });
            let Some(mut config) = resolve(cli, cfg, extra)? else { return Ok(()) };
            if let Some(c) = cost {
                config.tracking.cost = match c {
                    CostArg::Centroid => CostMetric::Centroid,
                    CostArg::Iou => CostMetric::Iou,
                };
            }
            cmd_track(&config, masks, out, events.as_deref())
        }
        Command::CalibrateSnr { cfg, target, tolerance, seed, out } => {
            let extra = json!({ "target": target, "tolerance": tolerance, "seed": seed, "out": out });
            let Some(config) = resolve(cli, cfg, extra)? else { return Ok(()) };
            let sim = Simulator::new(config)?;
            let c = calibrate_snr(&sim, *target, *tolerance, *seed)?;
            let text = serde_json::to_string_pretty(&c).expect("calibration") + "\n";
            match out {
                Some(p) => io::write_text(p, &text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::GtCompare { cfg, n, seed, out } => {
            let extra = json!({ "n": n, "seed": seed, "out": out });
            let Some(config) = resolve(cli, cfg, extra)? else { return Ok(()) };
            let text = gt_compare(&Simulator::new(config)?, *n, *seed)?;
            match out {
                Some(p) => io::write_text(p, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn cmd_psf(config: &Config, out: &Path) -> Result<()> {
    let t = std::time::Instant::now();
    let psf = compute_psf(&config.optics)?;
    log::info!("PSF computed in {:.2?}", t.elapsed());
    let pages: Vec<&[f32]> = (0..psf.n_axial).map(|iz| psf.plane(iz)).collect();
    io::write_tiff_f32_pages(out, psf.n_lateral, psf.n_lateral, &pages)?;
    let sidecar = json!({
        "optics": psf.params,
        "n_lateral": psf.n_lateral,
        "n_axial": psf.n_axial,
        "lateral_step_nm": psf.lateral_step,
        "axial_step_nm": psf.axial_step,
        "page_order": "z ascending, page k at z = (k - n_axial/2) * axial_step",
        "normalization": "in-focus plane sums to 1",
        "in_focus_fwhm_nm": psf.in_focus_fwhm(),
    });
    let path = out.with_extension("json");
    io::write_text(&path, &(serde_json::to_string_pretty(&sidecar).expect("sidecar") + "\n"))
}

/// Images of a directory (or its `images/` child), skipping noise-free files.
fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let base = if dir.join("images").is_dir() { dir.join("images") } else { dir.to_path_buf() };
    let mut out = Vec::new();
    for e in std::fs::read_dir(&base).map_err(|e| Error::io(&base, e))? {
        let p = e.map_err(|e| Error::io(&base, e))?.path();
        let ext = p.extension().and_then(|s| s.to_str()).unwrap_or("");
        if !matches!(ext, "tif" | "tiff") {
            continue;
        }
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        if stem.ends_with("_nf") {
            continue;
        }
        out.push((stem, p));
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::invalid(format!("no TIFF images in {}", base.display())));
    }
    Ok(out)
}

fn cmd_segment(method: Method, input: &Path, out: &Path, window: usize, offset: f64) -> Result<()> {
    let images = list_images(input)?;
    images.par_iter().try_for_each(|(id, path)| -> Result<()> {
        let img = io::read_tiff_u16(path, 80.0)?;
        let mask = match method {
            Method::Otsu => otsu_threshold(&img),
            Method::Adaptive => adaptive_threshold(&img, window, offset)?,
        };
        io::write_png_u8(&out.join(format!("{id}.png")), &mask.map(|&v| if v { 255 } else { 0 }))
    })?;
    log::info!("segmented {} images into {}", images.len(), out.display());
    Ok(())
}

/// Ground-truth file suffix for a class count.
fn gt_suffix(classes: usize) -> &'static str {
    if classes == 3 { "_gtmc.png" } else { "_gt.png" }
}

fn sub_or_self(dir: &Path, child: &str) -> PathBuf {
    if dir.join(child).is_dir() { dir.join(child) } else { dir.to_path_buf() }
}

fn find_pred(dir: &Path, id: &str, classes: usize) -> Option<PathBuf> {
    let dirs = [dir.to_path_buf(), dir.join("gt")];
    let names = [format!("{id}.png"), format!("{id}_pred.png"), format!("{id}{}", gt_suffix(classes))];
    dirs.iter().flat_map(|d| names.iter().map(move |n| d.join(n))).find(|p| p.is_file())
}

/// Class labels of a mask file: binary → {0, 1} from nonzero, multi-class as stored.
fn read_labels(path: &Path, classes: usize) -> Result<Raster<u8>> {
    let raw = io::read_png_u8(path, 80.0)?;
    Ok(if classes == 2 { raw.map(|&v| (v != 0) as u8) } else { raw })
}

fn cmd_eval(pred: &Path, gt: &Path, classes: usize, split: Option<SplitArg>) -> Result<Report> {
    let gt_dir = sub_or_self(gt, "gt");
    let suffix = gt_suffix(classes);
    let mut ids: Vec<String> = std::fs::read_dir(&gt_dir)
        .map_err(|e| Error::io(&gt_dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(suffix)).map(String::from))
        .collect();
    ids.sort();
    if let Some(s) = split {
        let manifest = crate::dataset::Manifest::read(&gt.join("manifest.jsonl"))?;
        let want = match s {
            SplitArg::Train => crate::dataset::Split::Train,
            SplitArg::Val => crate::dataset::Split::Val,
            SplitArg::Test => crate::dataset::Split::Test,
        };
        let keep: std::collections::HashSet<&str> =
            manifest.split(want).map(|e| e.id.as_str()).collect();
        ids.retain(|id| keep.contains(id.as_str()));
    }
    if ids.is_empty() {
        return Err(Error::invalid(format!("no *{suffix} ground-truth files in {}", gt_dir.display())));
    }
    let scores = ids
        .par_iter()
        .map(|id| {
            let p = find_pred(pred, id, classes)
                .ok_or_else(|| Error::format(pred, format!("no prediction for {id}")))?;
            let g = read_labels(&gt_dir.join(format!("{id}{suffix}")), classes)?;
            let q = read_labels(&p, classes)?;
            score_image(id, &q, &g, classes)
        })
        .collect::<Result<Vec<_>>>()?;
    report(scores, classes)
}

fn read_mask(path: &Path, pixel_size: f64) -> Result<Mask> {
    Ok(io::read_png_u8(path, pixel_size)?.map(|&v| v != 0))
}

fn cmd_analyze(
    config: &Config,
    pred: &Path,
    multiclass: &Path,
    out: &Path,
    records_out: Option<&Path>,
) -> Result<()> {
    let ps = config.camera.pixel_size;
    let mut files: Vec<(String, PathBuf)> = std::fs::read_dir(pred)
        .map_err(|e| Error::io(pred, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|s| s.to_str()) == Some("png"))
        .filter_map(|p| {
            let stem = p.file_stem()?.to_str()?.to_string();
            if stem.ends_with("_gtmc") {
                return None;
            }
            let id = stem.strip_suffix("_gt").unwrap_or(&stem).to_string();
            Some((id, p))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no PNG masks in {}", pred.display())));
    }
    let mc_dir = sub_or_self(multiclass, "gt");
    let mut items = Vec::new();
    let mut owners = Vec::new();
    let um2 = (ps * 1e-3).powi(2);
    for (id, path) in &files {
        let mask = read_mask(path, ps)?;
        let mc_path = [format!("{id}_gtmc.png"), format!("{id}.png")]
            .iter()
            .map(|n| mc_dir.join(n))
            .find(|p| p.is_file())
            .ok_or_else(|| Error::format(&mc_dir, format!("no multi-class mask for {id}")))?;
        let mc = io::read_png_u8(&mc_path, ps)?;
        let lm = connected_components(&mask);
        lm.labels.ensure_same_dims(&mc)?;
        let n = lm.count as usize;
        let mut px = vec![0usize; n];
        let mut overlap = vec![false; n];
        for (&l, &c) in lm.labels.data.iter().zip(&mc.data) {
            if l > 0 {
                px[l as usize - 1] += 1;
                overlap[l as usize - 1] |= c == 2;
            }
        }
        for k in 0..n {
            items.push((k as u32 + 1, px[k] as f64 * um2, overlap[k]));
            owners.push(id.clone());
        }
    }
    let cls = classify_areas(&items, &config.analytics);
    let stats = morphology_stats(&cls.records, config.analytics.bin_width);
    io::write_text(out, &stats.to_csv(cls.fallback))?;
    if let Some(p) = records_out {
        let mut csv = String::from("image,component,area_um2,morphology,contains_overlap\n");
        for (r, id) in cls.records.iter().zip(&owners) {
            csv.push_str(&format!(
                "{id},{},{:.6},{},{}\n",
                r.component_id,
                r.area,
                r.morphology.name(),
                r.contains_overlap
            ));
        }
        io::write_text(p, &csv)?;
    }
    let count = |m: Morphology| cls.records.iter().filter(|r| r.morphology == m).count();
    log::info!(
        "analyze: {} components (dot {}, rod {}, network {}), fallback {}",
        cls.records.len(),
        count(Morphology::Dot),
        count(Morphology::Rod),
        count(Morphology::Network),
        cls.fallback
    );
    Ok(())
}

fn cmd_track(config: &Config, masks: &Path, out: &Path, events: Option<&Path>) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(masks)
        .map_err(|e| Error::io(masks, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|s| s.to_str()) == Some("png"))
        .collect();
    files.sort();
    let frames = files
        .iter()
        .map(|p| read_mask(p, config.camera.pixel_size).map(|m| connected_components(&m)))
        .collect::<Result<Vec<_>>>()?;
    let (set, ev) = track_sequence(&frames, &config.tracking)?;
    let tracks: Vec<serde_json::Value> = set
        .tracks
        .iter()
        .map(|t| json!({ "id": t.id, "status": t.status, "points": t.points }))
        .collect();
    io::write_text(out, &(serde_json::to_string_pretty(&tracks).expect("tracks") + "\n"))?;
    if let Some(p) = events {
        io::write_text(p, &events_csv(&ev))?;
    }
    log::info!("track: {} frames, {} tracks, {} events", frames.len(), set.tracks.len(), ev.len());
    Ok(())
}

fn iou(a: &Mask, b: &Mask) -> f64 {
    let inter = a.data.iter().zip(&b.data).filter(|(&x, &y)| x && y).count();
    let union = a.data.iter().zip(&b.data).filter(|(&x, &y)| x || y).count();
    if union == 0 { 1.0 } else { inter as f64 / union as f64 }
}

/// Foreground areas (px) and IoU against the physical ground truth for the
/// Otsu, eroded Otsu and noise-threshold alternatives.
pub fn gt_compare(sim: &Simulator, n: usize, seed: u64) -> Result<String> {
    let rows = (0..n)
        .into_par_iter()
        .map(|i| -> Result<String> {
            let s = sim.generate_sample(sample_seed(seed, i))?;
            let snr = s.meta.snr.ok_or_else(|| Error::Snr(format!("sample {i}: undefined SNR")))?;
            let otsu = otsu_gt(&s.noise_free);
            let eroded = otsu_eroded_gt(&s.noise_free, &sim.psf);
            let noise = noise_threshold_gt(&s.noisy, snr)?;
            Ok(format!(
                "{i},{},{:.4},{},{},{},{},{:.4},{:.4},{:.4}\n",
                s.meta.seed,
                snr,
                s.gt.count(),
                otsu.count(),
                eroded.count(),
                noise.count(),
                iou(&otsu, &s.gt),
                iou(&eroded, &s.gt),
                iou(&noise, &s.gt)
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::from(
        "sample,seed,snr,physical_px,otsu_px,otsu_eroded_px,noise_threshold_px,\
         otsu_iou,otsu_eroded_iou,noise_threshold_iou\n",
    );
    out.extend(rows);
    Ok(out)
}
