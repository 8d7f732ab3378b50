//! Dot / rod / network classification of segmented components.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::groundtruth::MultiClassMask;
use crate::segmentation::LabelMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Morphology {
    Dot,
    Rod,
    Network,
}

impl Morphology {
    pub const ALL: [Morphology; 3] = [Morphology::Dot, Morphology::Rod, Morphology::Network];

    pub fn name(self) -> &'static str {
        match self {
            Morphology::Dot => "dot",
            Morphology::Rod => "rod",
            Morphology::Network => "network",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MorphologyRecord {
    pub component_id: u32,
    /// µm²
    pub area: f64,
    pub morphology: Morphology,
    pub contains_overlap: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsParams {
    /// Dot/rod split used when fewer than two non-network components exist (µm²).
    pub fallback_area: f64,
    /// Histogram bin width (µm²).
    pub bin_width: f64,
}

impl Default for AnalyticsParams {
    fn default() -> Self {
        AnalyticsParams { fallback_area: 0.15, bin_width: 0.05 }
    }
}

impl AnalyticsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fallback_area > 0.0) || !(self.bin_width > 0.0) {
            return Err(crate::Error::invalid("analytics fallback_area and bin_width must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub records: Vec<MorphologyRecord>,
    /// Dot/rod split fell back to the fixed area threshold.
    pub fallback: bool,
}

/// 1-D two-means with centroids seeded at the extremes. Returns `true` for
/// members of the larger-centroid cluster; ties go to the smaller cluster.
pub fn two_means(values: &[f64]) -> Vec<bool> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (mut c0, mut c1) = (lo, hi);
    let mut assign: Vec<bool> = values.iter().map(|_| false).collect();
    for _ in 0..1000 {
        let next: Vec<bool> = values.iter().map(|&v| (v - c1).abs() < (v - c0).abs()).collect();
        let mean = |flag: bool| {
            let (s, n) = values
                .iter()
                .zip(&next)
                .filter(|(_, &a)| a == flag)
                .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
            (n > 0).then(|| s / n as f64)
        };
        if let Some(m) = mean(false) {
            c0 = m;
        }
        if let Some(m) = mean(true) {
            c1 = m;
        }
        let done = next == assign;
        assign = next;
        if done {
            break;
        }
    }
    assign
}

/// Classifies components from areas and overlap flags.
pub fn classify_areas(
    items: &[(u32, f64, bool)],
    params: &AnalyticsParams,
) -> Classification {
    let plain: Vec<usize> = (0..items.len()).filter(|&i| !items[i].2).collect();
    let fallback = plain.len() < 2;
    let large: Vec<bool> = if fallback {
        plain.iter().map(|&i| items[i].1 >= params.fallback_area).collect()
    } else {
        let logs: Vec<f64> = plain.iter().map(|&i| items[i].1.ln()).collect();
        two_means(&logs)
    };
    let mut records: Vec<MorphologyRecord> = items
        .iter()
        .map(|&(id, area, overlap)| MorphologyRecord {
            component_id: id,
            area,
            morphology: Morphology::Network,
            contains_overlap: overlap,
        })
        .collect();
    for (&i, &is_rod) in plain.iter().zip(&large) {
        records[i].morphology = if is_rod { Morphology::Rod } else { Morphology::Dot };
    }
    Classification { records, fallback }
}

/// Network iff a component holds a label-2 pixel; the remaining components
/// split into dot/rod by two-means on log area.
pub fn classify_morphology(
    components: &LabelMap,
    multiclass: &MultiClassMask,
    pixel_size: f64,
    params: &AnalyticsParams,
) -> Result<Classification> {
    components.labels.ensure_same_dims(multiclass)?;
    let n = components.count as usize;
    let mut px = vec![0usize; n];
    let mut overlap = vec![false; n];
    for (&l, &c) in components.labels.data.iter().zip(&multiclass.data) {
        if l > 0 {
            px[l as usize - 1] += 1;
            overlap[l as usize - 1] |= c == 2;
        }
    }
    let um2 = (pixel_size * 1e-3).powi(2);
    let items: Vec<(u32, f64, bool)> =
        (0..n).map(|k| (k as u32 + 1, px[k] as f64 * um2, overlap[k])).collect();
    Ok(classify_areas(&items, params))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub morphology: Morphology,
    pub count: usize,
    pub total_area: f64,
    pub mean_area: f64,
    /// Counts per bin `[k·w, (k+1)·w)`.
    pub histogram: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MorphologyStats {
    pub bin_width: f64,
    pub classes: Vec<ClassStats>,
}

pub fn morphology_stats(records: &[MorphologyRecord], bin_width: f64) -> MorphologyStats {
    let classes = Morphology::ALL
        .iter()
        .map(|&m| {
            let areas: Vec<f64> =
                records.iter().filter(|r| r.morphology == m).map(|r| r.area).collect();
            let total: f64 = areas.iter().sum();
            let mut histogram = Vec::new();
            for &a in &areas {
                // relative guard so exact multiples land in their own bin
                let k = (a / bin_width * (1.0 + 1e-12)).floor() as usize;
                if histogram.len() <= k {
                    histogram.resize(k + 1, 0);
                }
                histogram[k] += 1;
            }
            ClassStats {
                morphology: m,
                count: areas.len(),
                total_area: total,
                mean_area: if areas.is_empty() { 0.0 } else { total / areas.len() as f64 },
                histogram,
            }
        })
        .collect();
    MorphologyStats { bin_width, classes }
}

impl MorphologyStats {
    /// One row per class; the histogram column lists `bin:count` pairs.
    pub fn to_csv(&self, fallback: bool) -> String {
        let mut out =
            String::from("class,count,total_area_um2,mean_area_um2,bin_width_um2,histogram,fallback\n");
        for c in &self.classes {
            let hist: Vec<String> = c
                .histogram
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(k, n)| format!("{k}:{n}"))
                .collect();
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{},{},{}\n",
                c.morphology.name(),
                c.count,
                c.total_area,
                c.mean_area,
                self.bin_width,
                hist.join(";"),
                fallback
            ));
        }
        out
    }
}
