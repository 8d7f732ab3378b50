//! Random mitochondrion geometry: a smooth 3D skeleton swept by a cylinder.
//!
//! The lateral path is a natural cubic spline through a handful of random
//! knots, parameterized by chord length. The axial coordinate is drawn per
//! knot and interpolated with a monotone piecewise cubic (PCHIP) along the
//! same parameter, which keeps every sample inside `[z_low, z_high]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

const MAX_ATTEMPTS: usize = 100;
const MIN_KNOT_SPACING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryParams {
    pub n_knots_min: usize,
    pub n_knots_max: usize,
    /// Lateral extent `[width, height]` of the knot box, nm.
    pub knot_box: [f64; 2],
    pub z_low: f64,
    pub z_high: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub length_min: f64,
    pub length_max: f64,
    /// Arc-length spacing of skeleton samples, nm.
    pub arc_step: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams {
            n_knots_min: 3,
            n_knots_max: 5,
            knot_box: [3000.0, 3000.0],
            z_low: -600.0,
            z_high: 600.0,
            radius_min: 50.0,
            radius_max: 400.0,
            length_min: 100.0,
            length_max: 5000.0,
            arc_step: 10.0,
        }
    }
}

impl GeometryParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("geometry: {m}")));
        if !(3 <= self.n_knots_min && self.n_knots_min <= self.n_knots_max && self.n_knots_max <= 5)
        {
            return bad("knot counts must satisfy 3 <= n_knots_min <= n_knots_max <= 5");
        }
        if !(self.knot_box[0] > 0.0 && self.knot_box[1] > 0.0) {
            return bad("knot_box extents must be positive");
        }
        if !(self.z_low < self.z_high) {
            return bad("z_low must be below z_high");
        }
        if !(0.0 < self.radius_min && self.radius_min <= self.radius_max) {
            return bad("radii must satisfy 0 < radius_min <= radius_max");
        }
        if !(0.0 < self.length_min && self.length_min <= self.length_max) {
            return bad("length bounds must satisfy 0 < length_min <= length_max");
        }
        if !(self.arc_step > 0.0) {
            return bad("arc_step must be positive");
        }
        Ok(())
    }
}

/// Natural cubic interpolating spline of one coordinate.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalSpline {
    /// `t` must be strictly increasing, at least two knots.
    pub fn new(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        assert!(n >= 2 && y.len() == n);
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second derivatives.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = t[i] - t[i - 1];
                let h1 = t[i + 1] - t[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 1..k {
                let lower = t[i + 1] - t[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        NaturalSpline {
            t: t.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.t.len();
        match self.t.partition_point(|&k| k <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - t) / h;
        let b = (t - self.t[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - t) / h;
        let b = (t - self.t[i]) / h;
        (self.y[i + 1] - self.y[i]) / h - (3.0 * a * a - 1.0) / 6.0 * h * self.m[i]
            + (3.0 * b * b - 1.0) / 6.0 * h * self.m[i + 1]
    }
}

/// Shape-preserving piecewise cubic Hermite interpolant (Fritsch-Carlson).
#[derive(Debug, Clone)]
pub struct Pchip {
    t: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        assert!(n >= 2 && y.len() == n);
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        d[0] = delta[0];
        d[n - 1] = delta[n - 2];
        for k in 1..n - 1 {
            if delta[k - 1] * delta[k] > 0.0 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
            }
        }
        Pchip {
            t: t.to_vec(),
            y: y.to_vec(),
            d,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.t.len();
        let i = match self.t.partition_point(|&k| k <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let h = self.t[i + 1] - self.t[i];
        let s = (t - self.t[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

/// The continuous skeleton curve, parameterized by lateral chord length.
#[derive(Debug, Clone)]
pub struct SkeletonCurve {
    params: Vec<f64>,
    x: NaturalSpline,
    y: NaturalSpline,
    z: Pchip,
}

impl SkeletonCurve {
    pub fn through(knots: &[Point3]) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("a skeleton needs at least two knots"));
        }
        let mut params = Vec::with_capacity(knots.len());
        params.push(0.0);
        for w in knots.windows(2) {
            let chord = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if chord < MIN_KNOT_SPACING {
                return Err(Error::invalid("duplicate consecutive knots"));
            }
            params.push(params.last().unwrap() + chord);
        }
        let col = |c: usize| knots.iter().map(|k| k[c]).collect::<Vec<_>>();
        Ok(SkeletonCurve {
            x: NaturalSpline::new(&params, &col(0)),
            y: NaturalSpline::new(&params, &col(1)),
            z: Pchip::new(&params, &col(2)),
            params,
        })
    }

    /// Parameter values of the knots.
    pub fn knot_params(&self) -> &[f64] {
        &self.params
    }

    pub fn eval(&self, t: f64) -> Point3 {
        [self.x.eval(t), self.y.eval(t), self.z.eval(t)]
    }

    /// Lateral derivative `(dx/dt, dy/dt)`.
    pub fn lateral_derivative(&self, t: f64) -> [f64; 2] {
        [self.x.derivative(t), self.y.derivative(t)]
    }
}

/// Densely sampled skeleton polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub points: Vec<Point3>,
    pub arc_step: f64,
    pub knots: Vec<Point3>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl Skeleton {
    fn from_points(points: Vec<Point3>, arc_step: f64, knots: Vec<Point3>) -> Self {
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += dist(&w[0], &w[1]);
            cumulative.push(acc);
        }
        Skeleton {
            points,
            arc_step,
            knots,
            cumulative,
        }
    }

    /// Interpolating skeleton through `knots`, resampled every `arc_step` nm.
    ///
    /// Each knot-to-knot piece is split into equal arc-length steps, so every
    /// knot appears exactly in the output sequence.
    pub fn through(knots: &[Point3], arc_step: f64) -> Result<Self> {
        if !(arc_step > 0.0) {
            return Err(Error::invalid("arc_step must be positive"));
        }
        let curve = SkeletonCurve::through(knots)?;
        let ts = curve.knot_params();
        let mut points = vec![knots[0]];
        let fine_step = arc_step / 8.0;
        let mut table: Vec<(f64, f64)> = Vec::new();
        for seg in 0..knots.len() - 1 {
            let (t0, t1) = (ts[seg], ts[seg + 1]);
            let k = (((t1 - t0) / fine_step).ceil() as usize).max(32);
            table.clear();
            let mut prev = curve.eval(t0);
            let mut acc = 0.0;
            table.push((t0, 0.0));
            for j in 1..=k {
                let t = t0 + (t1 - t0) * j as f64 / k as f64;
                let p = curve.eval(t);
                acc += dist(&prev, &p);
                table.push((t, acc));
                prev = p;
            }
            let m = ((acc / arc_step).ceil() as usize).max(1);
            let mut cursor = 0;
            for step in 1..m {
                let target = acc * step as f64 / m as f64;
                while table[cursor + 1].1 < target {
                    cursor += 1;
                }
                let (ta, sa) = table[cursor];
                let (tb, sb) = table[cursor + 1];
                let f = if sb > sa { (target - sa) / (sb - sa) } else { 0.0 };
                points.push(curve.eval(ta + f * (tb - ta)));
            }
            points.push(knots[seg + 1]);
        }
        Ok(Skeleton::from_points(points, arc_step, knots.to_vec()))
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    /// Cumulative arc length at each sample.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Position and unit tangent at arc length `s` (clamped to the curve).
    pub fn frame_at(&self, s: f64) -> (Point3, Point3) {
        let n = self.points.len();
        if n < 2 {
            return (self.points[0], [1.0, 0.0, 0.0]);
        }
        let s = s.clamp(0.0, self.length());
        let i = match self.cumulative.partition_point(|&c| c <= s) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let f = if seg > 0.0 { (s - self.cumulative[i]) / seg } else { 0.0 };
        let p = [
            a[0] + f * (b[0] - a[0]),
            a[1] + f * (b[1] - a[1]),
            a[2] + f * (b[2] - a[2]),
        ];
        let tan = normalize(sub(&b, &a)).unwrap_or([1.0, 0.0, 0.0]);
        (p, tan)
    }

    /// Euclidean distance from `p` to the polyline.
    pub fn distance_to(&self, p: &Point3) -> f64 {
        if self.points.len() == 1 {
            return dist(p, &self.points[0]);
        }
        self.points
            .windows(2)
            .map(|w| point_segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let shift = |p: &Point3| [p[0] + dx, p[1] + dy, p[2]];
        Skeleton {
            points: self.points.iter().map(shift).collect(),
            arc_step: self.arc_step,
            knots: self.knots.iter().map(shift).collect(),
            cumulative: self.cumulative.clone(),
        }
    }

    /// Lateral bounding box `(min_x, min_y, max_x, max_y)`.
    pub fn lateral_bounds(&self) -> (f64, f64, f64, f64) {
        self.points.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), p| (x0.min(p[0]), y0.min(p[1]), x1.max(p[0]), y1.max(p[1])),
        )
    }
}

/// Draw a random skeleton per `params`.
///
/// Degenerate knot sets and skeletons whose length falls outside
/// `[length_min, length_max]` are redrawn, up to 100 attempts.
pub fn gen_skeleton<R: Rng + ?Sized>(params: &GeometryParams, rng: &mut R) -> Result<Skeleton> {
    params.validate()?;
    let mut last_reason = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let n = rng.random_range(params.n_knots_min..=params.n_knots_max);
        let knots: Vec<Point3> = (0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..params.knot_box[0]),
                    rng.random_range(0.0..params.knot_box[1]),
                    rng.random_range(params.z_low..params.z_high),
                ]
            })
            .collect();
        match Skeleton::through(&knots, params.arc_step) {
            Ok(sk) => {
                let len = sk.length();
                if (params.length_min..=params.length_max).contains(&len) {
                    return Ok(sk);
                }
                last_reason = format!("length {len:.0} nm out of bounds");
            }
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(Error::Geometry {
        attempts: MAX_ATTEMPTS,
        reason: last_reason,
    })
}

/// A tube of constant radius around a skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mitochondrion {
    pub skeleton: Skeleton,
    pub radius: f64,
    pub instance_id: u32,
}

pub fn make_mitochondrion(skeleton: Skeleton, radius: f64, id: u32) -> Result<Mitochondrion> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid(format!("tube radius must be positive, got {radius}")));
    }
    Ok(Mitochondrion {
        skeleton,
        radius,
        instance_id: id,
    })
}

impl Mitochondrion {
    pub fn contains(&self, p: &Point3) -> bool {
        self.skeleton.distance_to(p) <= self.radius
    }

    /// Lateral (end caps excluded) surface area, nm².
    pub fn lateral_area(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.radius * self.skeleton.length()
    }
}

/// Skeleton plus a radius drawn uniformly from `[radius_min, radius_max]`.
pub fn gen_mitochondrion<R: Rng + ?Sized>(
    params: &GeometryParams,
    id: u32,
    rng: &mut R,
) -> Result<Mitochondrion> {
    let skeleton = gen_skeleton(params, rng)?;
    let radius = if params.radius_min == params.radius_max {
        params.radius_min
    } else {
        rng.random_range(params.radius_min..=params.radius_max)
    };
    make_mitochondrion(skeleton, radius, id)
}

pub(crate) fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(v: Point3) -> Option<Point3> {
    let n = dot(&v, &v).sqrt();
    (n > 1e-12).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

fn dist(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d).sqrt()
}

fn point_segment_distance(p: &Point3, a: &Point3, b: &Point3) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(&ab, &ab);
    let t = if len2 > 0.0 {
        (dot(&sub(p, a), &ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    dist(p, &q)
}
