//! Pixel-wise confusion matrices and mean IoU / F1.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::Raster;

/// `counts[g * k + p]`: pixels with ground-truth class `g`, predicted `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn off_diagonal(&self) -> u64 {
        self.total() - (0..self.k).map(|c| self.get(c, c)).sum::<u64>()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::new(self.k);
        for g in 0..self.k {
            for p in 0..self.k {
                t.counts[p * self.k + g] = self.get(g, p);
            }
        }
        t
    }

    /// Elementwise sum, for pooled aggregation.
    pub fn accumulate(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::invalid(format!(
                "cannot pool {}-class and {}-class matrices",
                self.k, other.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `(tp, fp, fn)` for class `c`.
    fn tp_fp_fn(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let col: u64 = (0..self.k).map(|g| self.get(g, c)).sum();
        let row: u64 = (0..self.k).map(|p| self.get(c, p)).sum();
        (tp, col - tp, row - tp)
    }

    /// Per-class IoU; `None` for classes absent from both GT and prediction.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let (tp, fp, fn_) = self.tp_fp_fn(c);
                let d = tp + fp + fn_;
                (d > 0).then(|| tp as f64 / d as f64)
            })
            .collect()
    }

    pub fn f1_per_class(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let (tp, fp, fn_) = self.tp_fp_fn(c);
                let d = 2 * tp + fp + fn_;
                (d > 0).then(|| 2.0 * tp as f64 / d as f64)
            })
            .collect()
    }
}

/// Builds the confusion matrix of two label rasters.
pub fn confusion(pred: &Raster<u8>, gt: &Raster<u8>, k: usize) -> Result<ConfusionMatrix> {
    if k < 2 {
        return Err(Error::invalid(format!("class count must be >= 2, got {k}")));
    }
    pred.ensure_same_dims(gt)?;
    let mut cm = ConfusionMatrix::new(k);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        if p as usize >= k || g as usize >= k {
            return Err(Error::invalid(format!(
                "label out of range for {k} classes: pred {p}, gt {g}"
            )));
        }
        cm.counts[g as usize * k + p as usize] += 1;
    }
    Ok(cm)
}

fn mean_present(v: &[Option<f64>]) -> Result<f64> {
    let present: Vec<f64> = v.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Metric("all classes absent from both prediction and ground truth".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    mean_present(&cm.iou_per_class())
}

pub fn f1(cm: &ConfusionMatrix) -> Result<f64> {
    mean_present(&cm.f1_per_class())
}

/// Scores of one image.
#[derive(Debug, Clone, Serialize)]
pub struct ImageScore {
    pub id: String,
    pub miou: f64,
    pub f1: f64,
    pub iou: Vec<Option<f64>>,
    pub f1_class: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
}

/// Dataset-level report: per-image mean (headline) and pooled scores.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub classes: usize,
    pub images: Vec<ImageScore>,
    pub mean_miou: f64,
    pub mean_f1: f64,
    pub pooled_miou: f64,
    pub pooled_f1: f64,
    pub pooled: ConfusionMatrix,
}

pub fn score_image(id: &str, pred: &Raster<u8>, gt: &Raster<u8>, k: usize) -> Result<ImageScore> {
    let cm = confusion(pred, gt, k)?;
    Ok(ImageScore {
        id: id.to_string(),
        miou: miou(&cm)?,
        f1: f1(&cm)?,
        iou: cm.iou_per_class(),
        f1_class: cm.f1_per_class(),
        confusion: cm,
    })
}

pub fn report(images: Vec<ImageScore>, k: usize) -> Result<Report> {
    if images.is_empty() {
        return Err(Error::Metric("no images to evaluate".into()));
    }
    let mut pooled = ConfusionMatrix::new(k);
    for s in &images {
        pooled.accumulate(&s.confusion)?;
    }
    let n = images.len() as f64;
    Ok(Report {
        classes: k,
        mean_miou: images.iter().map(|s| s.miou).sum::<f64>() / n,
        mean_f1: images.iter().map(|s| s.f1).sum::<f64>() / n,
        pooled_miou: miou(&pooled)?,
        pooled_f1: f1(&pooled)?,
        pooled,
        images,
    })
}
