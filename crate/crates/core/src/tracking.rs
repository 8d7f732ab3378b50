//! Constant-velocity Kalman tracking with Hungarian assignment and
//! fusion/fission flagging.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::LabelMap;

/// State `(x, y, vx, vy)` in px and px/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
    /// White-acceleration process noise scale.
    pub q: f64,
    /// Measurement noise variance (px²).
    pub m: f64,
}

impl KalmanState {
    pub fn new(pos: (f64, f64), vel: (f64, f64), pos_var: f64, vel_var: f64, q: f64, m: f64) -> Self {
        KalmanState {
            x: Vector4::new(pos.0, pos.1, vel.0, vel.1),
            p: Matrix4::from_diagonal(&Vector4::new(pos_var, pos_var, vel_var, vel_var)),
            q,
            m,
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x[0], self.x[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.x[2], self.x[3])
    }
}

fn transition() -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = 1.0;
    f[(1, 3)] = 1.0;
    f
}

fn process_noise(q: f64) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    for a in 0..2 {
        m[(a, a)] = 0.25 * q;
        m[(a, a + 2)] = 0.5 * q;
        m[(a + 2, a)] = 0.5 * q;
        m[(a + 2, a + 2)] = q;
    }
    m
}

fn observation() -> Matrix2x4<f64> {
    let mut h = Matrix2x4::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h
}

fn symmetrize(p: Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

pub fn kalman_predict(s: &KalmanState) -> KalmanState {
    let f = transition();
    KalmanState {
        x: f * s.x,
        p: symmetrize(f * s.p * f.transpose() + process_noise(s.q)),
        q: s.q,
        m: s.m,
    }
}

pub fn kalman_update(s: &KalmanState, z: (f64, f64)) -> Result<KalmanState> {
    let h = observation();
    let r = Matrix2::identity() * s.m;
    let innov = h * s.p * h.transpose() + r;
    if innov.determinant().abs() <= f64::MIN_POSITIVE {
        return Err(Error::SingularInnovation);
    }
    let inv = innov.try_inverse().ok_or(Error::SingularInnovation)?;
    let k = s.p * h.transpose() * inv;
    let y = Vector2::new(z.0, z.1) - h * s.x;
    let a = Matrix4::identity() - k * h;
    Ok(KalmanState {
        x: s.x + k * y,
        p: symmetrize(a * s.p * a.transpose() + k * r * k.transpose()),
        q: s.q,
        m: s.m,
    })
}

/// Minimum-cost one-to-one assignment on a rectangular cost matrix.
///
/// `f64::INFINITY` marks a forbidden pair. Forbidden entries are replaced by
/// `FORBIDDEN_SCALE · (max|finite| + 1) · (min(n, m) + 1)`, which exceeds
/// any sum of finite costs, so the solver minimizes the number of forbidden
/// pairs first; those are dropped from the result. Returns `(row, col)` pairs
/// sorted by row.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::invalid("cost matrix rows differ in length"));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut max_abs: f64 = 0.0;
    for &c in cost.iter().flatten() {
        if c.is_nan() || c == f64::NEG_INFINITY {
            return Err(Error::invalid("cost matrix entries must be finite or +inf"));
        }
        if c.is_finite() {
            max_abs = max_abs.max(c.abs());
        }
    }
    let big = FORBIDDEN_SCALE * (max_abs + 1.0) * (n.min(m) as f64 + 1.0);
    // work with rows <= cols
    let transpose = n > m;
    let (rows, cols) = if transpose { (m, n) } else { (n, m) };
    let at = |i: usize, j: usize| {
        let c = if transpose { cost[j][i] } else { cost[i][j] };
        if c.is_finite() { c } else { big }
    };
    // potentials-based shortest augmenting path, 1-indexed with a dummy 0
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Vec<(usize, usize)> = (1..=cols)
        .filter(|&j| p[j] != 0)
        .map(|j| if transpose { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) })
        .filter(|&(r, c)| cost[r][c].is_finite())
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Multiplier of the forbidden-pair substitute cost in [`hungarian`].
pub const FORBIDDEN_SCALE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMetric {
    Centroid,
    Iou,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingParams {
    /// Gate on centroid distance (px).
    pub gate: f64,
    /// Frames a track may go unmatched before it ends.
    pub max_miss: u32,
    pub area_ratio: f64,
    pub cost: CostMetric,
    pub process_noise: f64,
    pub measurement_noise: f64,
    /// Initial velocity variance of a new track (px²/frame²).
    pub initial_velocity_var: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        TrackingParams {
            gate: 20.0,
            max_miss: 2,
            area_ratio: 0.8,
            cost: CostMetric::Centroid,
            process_noise: 0.05,
            measurement_noise: 1.0,
            initial_velocity_var: 25.0,
        }
    }
}

impl TrackingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate > 0.0) {
            return Err(Error::invalid("tracking gate must be > 0"));
        }
        if !(self.area_ratio > 0.0) {
            return Err(Error::invalid("tracking area_ratio must be > 0"));
        }
        if !(self.process_noise >= 0.0) || !(self.measurement_noise >= 0.0) {
            return Err(Error::invalid("tracking noise scales must be >= 0"));
        }
        if !(self.initial_velocity_var >= 0.0) {
            return Err(Error::invalid("tracking initial_velocity_var must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub frame: usize,
    pub centroid: (f64, f64),
    pub area: usize,
    pub bbox: (usize, usize, usize, usize),
    pub component_id: u32,
    /// Sorted raster indices.
    #[serde(skip)]
    pub pixels: Vec<usize>,
}

/// Detections of one frame in component-id order.
pub fn detections(frame: usize, labels: &LabelMap) -> Vec<Detection> {
    let mut pixels = vec![Vec::new(); labels.count as usize];
    for (i, &l) in labels.labels.data.iter().enumerate() {
        if l > 0 {
            pixels[l as usize - 1].push(i);
        }
    }
    labels
        .components()
        .into_iter()
        .zip(pixels)
        .map(|(c, px)| Detection {
            frame,
            centroid: c.centroid,
            area: c.area,
            bbox: c.bbox,
            component_id: c.id,
            pixels: px,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Active,
    Lost,
    Ended,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackPoint {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub area: usize,
    pub status: TrackStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct Track {
    pub id: u32,
    pub status: TrackStatus,
    pub misses: u32,
    pub points: Vec<TrackPoint>,
    #[serde(skip)]
    pub kalman: KalmanState,
    #[serde(skip)]
    last_area: usize,
    #[serde(skip)]
    last_pixels: Vec<usize>,
}

impl Track {
    pub fn last_observed_frame(&self) -> Option<usize> {
        self.points.iter().rev().find(|p| p.status == TrackStatus::Active).map(|p| p.frame)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Fusion,
    Fission,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventRecord {
    pub kind: EventKind,
    pub frame: usize,
    pub sources: Vec<u32>,
    pub sinks: Vec<u32>,
}

fn iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 { 0.0 } else { inter as f64 / union as f64 }
}

struct Tracker<'a> {
    params: &'a TrackingParams,
    set: TrackSet,
    events: Vec<EventRecord>,
}

impl Tracker<'_> {
    fn spawn(&mut self, d: &Detection, vel: (f64, f64)) -> u32 {
        let id = self.set.tracks.len() as u32 + 1;
        let p = self.params;
        self.set.tracks.push(Track {
            id,
            status: TrackStatus::Active,
            misses: 0,
            points: vec![TrackPoint {
                frame: d.frame,
                x: d.centroid.0,
                y: d.centroid.1,
                area: d.area,
                status: TrackStatus::Active,
            }],
            kalman: KalmanState::new(
                d.centroid,
                vel,
                p.measurement_noise.max(1e-6),
                p.initial_velocity_var,
                p.process_noise,
                p.measurement_noise,
            ),
            last_area: d.area,
            last_pixels: d.pixels.clone(),
        });
        id
    }

    fn end(&mut self, t: usize) {
        self.set.tracks[t].status = TrackStatus::Ended;
    }

    fn observe(&mut self, t: usize, d: &Detection) -> Result<()> {
        let tr = &mut self.set.tracks[t];
        tr.kalman = kalman_update(&tr.kalman, d.centroid)?;
        tr.status = TrackStatus::Active;
        tr.misses = 0;
        tr.last_area = d.area;
        tr.last_pixels = d.pixels.clone();
        tr.points.push(TrackPoint {
            frame: d.frame,
            x: d.centroid.0,
            y: d.centroid.1,
            area: d.area,
            status: TrackStatus::Active,
        });
        Ok(())
    }

    fn step(&mut self, frame: usize, dets: &[Detection]) -> Result<()> {
        let p = self.params;
        let live: Vec<usize> = (0..self.set.tracks.len())
            .filter(|&t| self.set.tracks[t].status != TrackStatus::Ended)
            .collect();
        for &t in &live {
            let tr = &mut self.set.tracks[t];
            tr.kalman = kalman_predict(&tr.kalman);
        }
        let gated: Vec<Vec<bool>> = live
            .iter()
            .map(|&t| {
                let (px, py) = self.set.tracks[t].kalman.position();
                dets.iter()
                    .map(|d| (d.centroid.0 - px).hypot(d.centroid.1 - py) <= p.gate)
                    .collect()
            })
            .collect();
        let tracks_of = |d: usize| -> Vec<usize> { (0..live.len()).filter(|&a| gated[a][d]).collect() };
        let dets_of = |a: usize| -> Vec<usize> { (0..dets.len()).filter(|&d| gated[a][d]).collect() };
        let fresh = |s: &Self, a: usize| s.set.tracks[live[a]].misses == 0;

        let mut track_used = vec![false; live.len()];
        let mut det_used = vec![false; dets.len()];

        // fusion: several tracks whose only candidate is one detection
        for d in 0..dets.len() {
            let srcs: Vec<usize> = tracks_of(d)
                .into_iter()
                .filter(|&a| !track_used[a] && fresh(self, a) && dets_of(a).len() == 1)
                .collect();
            if srcs.len() < 2 {
                continue;
            }
            let sum: usize = srcs.iter().map(|&a| self.set.tracks[live[a]].last_area).sum();
            if (dets[d].area as f64) < p.area_ratio * sum as f64 {
                continue;
            }
            let n = srcs.len() as f64;
            let vel = srcs.iter().fold((0.0, 0.0), |acc, &a| {
                let v = self.set.tracks[live[a]].kalman.velocity();
                (acc.0 + v.0 / n, acc.1 + v.1 / n)
            });
            let sources: Vec<u32> = srcs.iter().map(|&a| self.set.tracks[live[a]].id).collect();
            for &a in &srcs {
                track_used[a] = true;
                self.end(live[a]);
            }
            det_used[d] = true;
            let sink = self.spawn(&dets[d], vel);
            self.events.push(EventRecord { kind: EventKind::Fusion, frame, sources, sinks: vec![sink] });
        }

        // fission: one track that is the only candidate of several detections
        for a in 0..live.len() {
            if track_used[a] || !fresh(self, a) {
                continue;
            }
            let kids: Vec<usize> = dets_of(a)
                .into_iter()
                .filter(|&d| !det_used[d] && tracks_of(d).len() == 1)
                .collect();
            if kids.len() < 2 {
                continue;
            }
            let sum: usize = kids.iter().map(|&d| dets[d].area).sum();
            if (self.set.tracks[live[a]].last_area as f64) < p.area_ratio * sum as f64 {
                continue;
            }
            let source = self.set.tracks[live[a]].id;
            let vel = self.set.tracks[live[a]].kalman.velocity();
            track_used[a] = true;
            self.end(live[a]);
            let mut sinks = Vec::new();
            for &d in &kids {
                det_used[d] = true;
                sinks.push(self.spawn(&dets[d], vel));
            }
            self.events.push(EventRecord { kind: EventKind::Fission, frame, sources: vec![source], sinks });
        }

        // one-to-one assignment of the rest
        let rem_t: Vec<usize> = (0..live.len()).filter(|&a| !track_used[a]).collect();
        let rem_d: Vec<usize> = (0..dets.len()).filter(|&d| !det_used[d]).collect();
        let cost: Vec<Vec<f64>> = rem_t
            .iter()
            .map(|&a| {
                let tr = &self.set.tracks[live[a]];
                let (px, py) = tr.kalman.position();
                rem_d
                    .iter()
                    .map(|&d| {
                        if !gated[a][d] {
                            return f64::INFINITY;
                        }
                        match p.cost {
                            CostMetric::Centroid => {
                                (dets[d].centroid.0 - px).hypot(dets[d].centroid.1 - py)
                            }
                            CostMetric::Iou => 1.0 - iou(&tr.last_pixels, &dets[d].pixels),
                        }
                    })
                    .collect()
            })
            .collect();
        for (i, j) in hungarian(&cost)? {
            let (a, d) = (rem_t[i], rem_d[j]);
            track_used[a] = true;
            det_used[d] = true;
            self.observe(live[a], &dets[d])?;
        }
        for a in rem_t {
            if track_used[a] {
                continue;
            }
            let t = live[a];
            let tr = &mut self.set.tracks[t];
            tr.misses += 1;
            if tr.misses > p.max_miss {
                tr.status = TrackStatus::Ended;
            } else {
                tr.status = TrackStatus::Lost;
                let (x, y) = tr.kalman.position();
                let area = tr.last_area;
                tr.points.push(TrackPoint { frame, x, y, area, status: TrackStatus::Lost });
            }
        }
        for d in rem_d {
            if !det_used[d] {
                self.spawn(&dets[d], (0.0, 0.0));
            }
        }
        Ok(())
    }
}

/// Tracks components across frames. Returns tracks in creation order and
/// events in frame order.
pub fn track_sequence(
    frames: &[LabelMap],
    params: &TrackingParams,
) -> Result<(TrackSet, Vec<EventRecord>)> {
    params.validate()?;
    if frames.len() < 2 {
        return Err(Error::invalid(format!("tracking needs >= 2 frames, got {}", frames.len())));
    }
    let mut tk = Tracker { params, set: TrackSet::default(), events: Vec::new() };
    for (f, lm) in frames.iter().enumerate() {
        let dets = detections(f, lm);
        if f == 0 {
            for d in &dets {
                tk.spawn(d, (0.0, 0.0));
            }
        } else {
            tk.step(f, &dets)?;
        }
    }
    Ok((tk.set, tk.events))
}

/// `kind,frame,sources,sinks` with `;`-joined track ids.
pub fn events_csv(events: &[EventRecord]) -> String {
    let join = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(";");
    let mut out = String::from("kind,frame,sources,sinks\n");
    for e in events {
        let kind = match e.kind {
            EventKind::Fusion => "fusion",
            EventKind::Fission => "fission",
        };
        out.push_str(&format!("{kind},{},{},{}\n", e.frame, join(&e.sources), join(&e.sinks)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Mask;
    use crate::segmentation::connected_components;

    pub(crate) fn disk_frame(w: usize, h: usize, blobs: &[(f64, f64, f64)]) -> LabelMap {
        let mut m = Mask::filled(w, h, 80.0, false);
        for y in 0..h {
            for x in 0..w {
                let inside = blobs
                    .iter()
                    .any(|&(cx, cy, r)| (x as f64 - cx).hypot(y as f64 - cy) <= r);
                m.set(x, y, inside);
            }
        }
        connected_components(&m)
    }

    #[test]
    fn noiseless_predict() {
        let s = KalmanState::new((0.0, 0.0), (1.0, 1.0), 1.0, 1.0, 0.0, 1.0);
        let p = kalman_predict(&s);
        assert_eq!(p.x, Vector4::new(1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn predict_trace_grows() {
        let s = KalmanState::new((3.0, 4.0), (0.5, -1.0), 2.0, 0.3, 0.1, 1.0);
        let p = kalman_predict(&s);
        assert!(p.p.trace() >= s.p.trace());
        let two = kalman_predict(&p);
        assert!((two.x[0] - (3.0 + 2.0 * 0.5)).abs() < 1e-12);
        assert!((two.x[1] - (4.0 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn update_limits() {
        let s = KalmanState::new((0.0, 0.0), (0.0, 0.0), 4.0, 1.0, 0.0, 1e15);
        let u = kalman_update(&s, (10.0, -3.0)).unwrap();
        assert!(u.x[0].abs() < 1e-12 && u.x[1].abs() < 1e-12);
        let s = KalmanState { m: 0.0, ..s };
        let u = kalman_update(&s, (10.0, -3.0)).unwrap();
        assert!((u.x[0] - 10.0).abs() < 1e-12 && (u.x[1] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_innovation() {
        let s = KalmanState::new((0.0, 0.0), (0.0, 0.0), 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(kalman_update(&s, (1.0, 1.0)), Err(Error::SingularInnovation)));
    }

    #[test]
    fn hungarian_identity() {
        let c = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        assert_eq!(hungarian(&c).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn hungarian_rectangular_and_forbidden() {
        let c = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]];
        let a = hungarian(&c).unwrap();
        let cost: f64 = a.iter().map(|&(i, j)| c[i][j]).sum();
        assert_eq!(a.len(), 2);
        assert_eq!(cost, 3.0);
        let t: Vec<Vec<f64>> = (0..3).map(|j| (0..2).map(|i| c[i][j]).collect()).collect();
        let b = hungarian(&t).unwrap();
        assert_eq!(b.iter().map(|&(i, j)| t[i][j]).sum::<f64>(), 3.0);
        let inf = f64::INFINITY;
        assert!(hungarian(&[vec![inf, inf], vec![inf, inf]]).unwrap().is_empty());
        assert_eq!(hungarian(&[vec![inf, 5.0], vec![inf, 1.0]]).unwrap(), vec![(1, 1)]);
        assert!(hungarian(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn stationary_blobs() {
        let frames: Vec<LabelMap> =
            (0..10).map(|_| disk_frame(80, 40, &[(15.0, 20.0, 4.0), (65.0, 20.0, 4.0)])).collect();
        let (set, ev) = track_sequence(&frames, &TrackingParams::default()).unwrap();
        assert_eq!(set.tracks.len(), 2);
        assert!(ev.is_empty());
        assert!(set.tracks.iter().all(|t| t.points.len() == 10));
    }

    #[test]
    fn dropped_frame_keeps_track() {
        let frames: Vec<LabelMap> = (0..8)
            .map(|f| {
                if f == 4 {
                    disk_frame(80, 40, &[])
                } else {
                    disk_frame(80, 40, &[(10.0 + 3.0 * f as f64, 20.0, 3.0)])
                }
            })
            .collect();
        let (set, ev) = track_sequence(&frames, &TrackingParams::default()).unwrap();
        assert!(ev.is_empty());
        assert_eq!(set.tracks.len(), 1);
        assert_eq!(set.tracks[0].points.len(), 8);
        assert_eq!(set.tracks[0].points[4].status, TrackStatus::Lost);
    }

    #[test]
    fn single_frame_rejected() {
        assert!(track_sequence(&[disk_frame(4, 4, &[])], &TrackingParams::default()).is_err());
    }
}
