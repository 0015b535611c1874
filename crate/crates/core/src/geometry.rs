//! Planar geometry and lidar ray casting.
//!
//! Obstacles are circles and line segments. A [`Scanner`] caches the beam fan
//! of a [`ScannerSpec`] and casts whole scans obstacle-by-obstacle over
//! contiguous beam windows (the batched path); [`cast_scan_scalar`] is the
//! beam-by-beam reference it is tested against.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("segment endpoints must be distinct")]
    DegenerateSegment,
    #[error("circle radius must satisfy radius > 0 (got {0})")]
    NonPositiveRadius(f64),
    #[error("invalid scanner spec: {0}")]
    InvalidScanner(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Counter-clockwise rotation by `angle` radians.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(TAU) - PI;
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Position and heading of the (circular) robot. Heading is kept in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            position: Vec2::new(x, y),
            heading: wrap_angle(heading),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.heading.is_finite()
    }

    /// Expresses a world point in this pose's body frame (x forward, y left).
    pub fn to_body(&self, world: Vec2) -> Vec2 {
        (world - self.position).rotate(-self.heading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Obstacle {
    Segment { a: Vec2, b: Vec2 },
    Circle { center: Vec2, radius: f64 },
}

impl Obstacle {
    pub fn segment(a: Vec2, b: Vec2) -> Result<Self, GeometryError> {
        let seg = Obstacle::Segment { a, b };
        seg.validate()?;
        Ok(seg)
    }

    pub fn circle(center: Vec2, radius: f64) -> Result<Self, GeometryError> {
        let circle = Obstacle::Circle { center, radius };
        circle.validate()?;
        Ok(circle)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match *self {
            Obstacle::Segment { a, b } => {
                if !a.is_finite() || !b.is_finite() {
                    return Err(GeometryError::NonFinite("segment"));
                }
                if a == b {
                    return Err(GeometryError::DegenerateSegment);
                }
            }
            Obstacle::Circle { center, radius } => {
                if !center.is_finite() || !radius.is_finite() {
                    return Err(GeometryError::NonFinite("circle"));
                }
                if radius <= 0.0 {
                    return Err(GeometryError::NonPositiveRadius(radius));
                }
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        match *self {
            Obstacle::Segment { a, b } => (
                Vec2::new(a.x.min(b.x), a.y.min(b.y)),
                Vec2::new(a.x.max(b.x), a.y.max(b.y)),
            ),
            Obstacle::Circle { center, radius } => (
                Vec2::new(center.x - radius, center.y - radius),
                Vec2::new(center.x + radius, center.y + radius),
            ),
        }
    }

    /// True when `point` lies strictly inside a circle obstacle. Segments have no interior.
    pub fn contains(&self, point: Vec2) -> bool {
        match *self {
            Obstacle::Segment { .. } => false,
            Obstacle::Circle { center, radius } => point.distance(center) < radius,
        }
    }

    /// Signed clearance: distance to the obstacle, negative inside a circle.
    pub fn clearance(&self, point: Vec2) -> f64 {
        match *self {
            Obstacle::Segment { .. } => distance_to_obstacle(point, self),
            Obstacle::Circle { center, radius } => point.distance(center) - radius,
        }
    }

    pub fn transformed(&self, rotation: f64, translation: Vec2) -> Obstacle {
        let map = |p: Vec2| p.rotate(rotation) + translation;
        match *self {
            Obstacle::Segment { a, b } => Obstacle::Segment { a: map(a), b: map(b) },
            Obstacle::Circle { center, radius } => Obstacle::Circle {
                center: map(center),
                radius,
            },
        }
    }
}

/// Closest point on the closed segment `a`–`b` to `point`.
pub fn closest_point_on_segment(point: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let e = b - a;
    let len_sq = e.norm_sq();
    if len_sq == 0.0 {
        return a;
    }
    let u = ((point - a).dot(e) / len_sq).clamp(0.0, 1.0);
    a + e * u
}

/// Unsigned distance from `point` to the obstacle's boundary.
///
/// For circles this is `|d(center) - radius|` whether the point is inside or
/// outside; use [`Obstacle::contains`] for the containment test.
pub fn distance_to_obstacle(point: Vec2, obstacle: &Obstacle) -> f64 {
    match *obstacle {
        Obstacle::Segment { a, b } => point.distance(closest_point_on_segment(point, a, b)),
        Obstacle::Circle { center, radius } => (point.distance(center) - radius).abs(),
    }
}

/// Smallest `t >= 0` where `origin + t * direction` touches the circle. Tangent contact counts.
pub fn ray_circle_intersect(origin: Vec2, direction: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = direction.dot(oc);
    let c = oc.norm_sq() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let near = -b - s;
    if near >= 0.0 {
        return Some(near);
    }
    let far = -b + s;
    (far >= 0.0).then_some(far)
}

const PARALLEL_EPS: f64 = 1e-12;
const SEGMENT_PARAM_EPS: f64 = 1e-12;

/// Smallest `t >= 0` where the ray meets the closed segment `a`–`b`.
///
/// A ray running along the segment returns the nearest overlapped point
/// (0 when the origin is on the segment).
pub fn ray_segment_intersect(origin: Vec2, direction: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let e = b - a;
    let w = a - origin;
    let denom = direction.cross(e);
    let e_len = e.norm();
    if denom.abs() <= PARALLEL_EPS * e_len {
        if w.cross(e).abs() > PARALLEL_EPS * e_len * w.norm().max(1.0) {
            return None;
        }
        let ta = w.dot(direction);
        let tb = (b - origin).dot(direction);
        let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        return if hi < 0.0 { None } else { Some(lo.max(0.0)) };
    }
    let t = w.cross(e) / denom;
    let s = w.cross(direction) / denom;
    (t >= 0.0 && (-SEGMENT_PARAM_EPS..=1.0 + SEGMENT_PARAM_EPS).contains(&s)).then_some(t)
}

/// Ray/obstacle dispatch used by the scalar path.
pub fn ray_obstacle_intersect(origin: Vec2, direction: Vec2, obstacle: &Obstacle) -> Option<f64> {
    match *obstacle {
        Obstacle::Segment { a, b } => ray_segment_intersect(origin, direction, a, b),
        Obstacle::Circle { center, radius } => ray_circle_intersect(origin, direction, center, radius),
    }
}

/// Laser scanner geometry and noise. Angles are in degrees, lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScannerSpec {
    pub num_beams: usize,
    pub fov: f64,
    pub angular_step: f64,
    pub max_range: f64,
    pub min_range: f64,
    pub noise_sigma: f64,
}

impl Default for ScannerSpec {
    fn default() -> Self {
        Self {
            num_beams: 1081,
            fov: 270.0,
            angular_step: 0.25,
            max_range: 20.0,
            min_range: 0.06,
            noise_sigma: 0.02,
        }
    }
}

impl ScannerSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidScanner(msg));
        if self.num_beams < 2 {
            return bad(format!("num_beams must be at least 2 (got {})", self.num_beams));
        }
        if !(self.angular_step > 0.0) || !(self.fov > 0.0) || self.fov >= 360.0 {
            return bad("fov must be in (0, 360) and angular_step > 0".into());
        }
        let span = (self.num_beams - 1) as f64 * self.angular_step;
        if (span - self.fov).abs() > 1e-9 * self.fov.max(1.0) {
            return bad(format!(
                "(num_beams - 1) * angular_step = {span} does not equal fov {}",
                self.fov
            ));
        }
        if !(self.min_range >= 0.0 && self.min_range < self.max_range) || !self.max_range.is_finite() {
            return bad("need 0 <= min_range < max_range".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0".into());
        }
        Ok(())
    }

    /// Bearing of beam `index` relative to the scanner heading, in radians.
    pub fn beam_bearing(&self, index: usize) -> f64 {
        (-0.5 * self.fov + index as f64 * self.angular_step).to_radians()
    }

    pub fn step_radians(&self) -> f64 {
        self.angular_step.to_radians()
    }

    pub fn half_fov_radians(&self) -> f64 {
        (0.5 * self.fov).to_radians()
    }
}

/// One sweep of ranges; index 0 is the rightmost beam (bearing `-fov/2`).
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub ranges: Vec<f64>,
}

impl Scan {
    pub fn filled(num_beams: usize, range: f64) -> Self {
        Self {
            ranges: vec![range; num_beams],
        }
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

/// Beam-by-beam reference caster: bearings and trig are computed per beam, and
/// every obstacle is tested against every beam.
pub fn cast_scan_scalar(pose: &Pose, obstacles: &[Obstacle], spec: &ScannerSpec) -> Scan {
    let origin = pose.position;
    let ranges = (0..spec.num_beams)
        .map(|j| {
            let direction = Vec2::from_angle(pose.heading + spec.beam_bearing(j));
            obstacles
                .iter()
                .filter_map(|obstacle| ray_obstacle_intersect(origin, direction, obstacle))
                .fold(spec.max_range, f64::min)
        })
        .collect();
    Scan { ranges }
}

/// Casts a scan through the batched path. Builds a [`Scanner`] per call; hold
/// on to a `Scanner` when casting repeatedly.
pub fn cast_scan(pose: &Pose, obstacles: &[Obstacle], spec: &ScannerSpec) -> Scan {
    Scanner::new(spec.clone()).cast(pose, obstacles)
}

/// Batched caster with a cached beam fan.
///
/// Each obstacle is first reduced to the window of beams that can reach it
/// (angular extent plus a two-beam margin), then evaluated over that window in
/// a branch-free loop the compiler vectorizes.
#[derive(Debug, Clone)]
pub struct Scanner {
    spec: ScannerSpec,
    rel_cos: Vec<f64>,
    rel_sin: Vec<f64>,
}

impl Scanner {
    pub fn new(spec: ScannerSpec) -> Self {
        let (rel_sin, rel_cos) = (0..spec.num_beams).map(|j| spec.beam_bearing(j).sin_cos()).unzip();
        Self { spec, rel_cos, rel_sin }
    }

    pub fn spec(&self) -> &ScannerSpec {
        &self.spec
    }

    pub fn cast(&self, pose: &Pose, obstacles: &[Obstacle]) -> Scan {
        let n = self.spec.num_beams;
        let (sh, ch) = pose.heading.sin_cos();
        let mut dx = Vec::with_capacity(n);
        let mut dy = Vec::with_capacity(n);
        for (&c, &s) in self.rel_cos.iter().zip(&self.rel_sin) {
            dx.push(ch * c - sh * s);
            dy.push(sh * c + ch * s);
        }
        let mut best = vec![self.spec.max_range; n];
        let origin = pose.position;
        for obstacle in obstacles {
            let window = self.beam_window(pose, obstacle);
            for range in window.ranges() {
                let (dx, dy, best) = (&dx[range.clone()], &dy[range.clone()], &mut best[range]);
                match *obstacle {
                    Obstacle::Circle { center, radius } => circle_kernel(origin, center, radius, dx, dy, best),
                    Obstacle::Segment { a, b } => {
                        if origin_on_line(origin, a, b) {
                            for ((&x, &y), r) in dx.iter().zip(dy).zip(best.iter_mut()) {
                                if let Some(t) = ray_segment_intersect(origin, Vec2::new(x, y), a, b) {
                                    *r = r.min(t);
                                }
                            }
                        } else {
                            segment_kernel(origin, a, b, dx, dy, best)
                        }
                    }
                }
            }
        }
        Scan { ranges: best }
    }

    /// Beams that may intersect `obstacle`, as at most two index ranges.
    fn beam_window(&self, pose: &Pose, obstacle: &Obstacle) -> BeamWindow {
        let origin = pose.position;
        let max_range = self.spec.max_range;
        let interval = match *obstacle {
            Obstacle::Circle { center, radius } => {
                let oc = center - origin;
                let d = oc.norm();
                if d - radius >= max_range {
                    return BeamWindow::None;
                }
                if d <= radius * (1.0 + 1e-9) {
                    return BeamWindow::All(self.spec.num_beams);
                }
                let half = (radius / d).asin();
                let mid = oc.y.atan2(oc.x) - pose.heading;
                (mid - half, mid + half)
            }
            Obstacle::Segment { a, b } => {
                if distance_to_obstacle(origin, obstacle) >= max_range {
                    return BeamWindow::None;
                }
                if origin_on_line(origin, a, b) {
                    return BeamWindow::All(self.spec.num_beams);
                }
                let ra = a - origin;
                let rb = b - origin;
                let start = ra.y.atan2(ra.x) - pose.heading;
                let sweep = wrap_angle(rb.y.atan2(rb.x) - ra.y.atan2(ra.x));
                if sweep >= 0.0 {
                    (start, start + sweep)
                } else {
                    (start + sweep, start)
                }
            }
        };
        self.window_from_interval(interval.0, interval.1)
    }

    fn window_from_interval(&self, lo: f64, hi: f64) -> BeamWindow {
        let step = self.spec.step_radians();
        let half_fov = self.spec.half_fov_radians();
        let margin = 2.0 * step;
        let last = (self.spec.num_beams - 1) as f64;
        let mut out = [None, None];
        let mut count = 0;
        for shift in [-TAU, 0.0, TAU] {
            let a = lo + shift - margin + half_fov;
            let b = hi + shift + margin + half_fov;
            let first = (a / step).ceil().max(0.0);
            let end = (b / step).floor().min(last);
            if first <= end && count < 2 {
                out[count] = Some(first as usize..end as usize + 1);
                count += 1;
            }
        }
        match out {
            [None, _] => BeamWindow::None,
            [Some(r), None] => BeamWindow::One(r),
            [Some(r1), Some(r2)] => BeamWindow::Two(r1, r2),
        }
    }
}

fn origin_on_line(origin: Vec2, a: Vec2, b: Vec2) -> bool {
    let e = b - a;
    let w = a - origin;
    w.cross(e).abs() <= 1e-9 * e.norm() * w.norm().max(1.0)
}

enum BeamWindow {
    None,
    All(usize),
    One(std::ops::Range<usize>),
    Two(std::ops::Range<usize>, std::ops::Range<usize>),
}

impl BeamWindow {
    fn ranges(self) -> impl Iterator<Item = std::ops::Range<usize>> {
        let (first, second) = match self {
            BeamWindow::None => (None, None),
            BeamWindow::All(n) => (Some(0..n), None),
            BeamWindow::One(r) => (Some(r), None),
            BeamWindow::Two(r1, r2) => (Some(r1), Some(r2)),
        };
        first.into_iter().chain(second)
    }
}

#[inline]
fn circle_kernel(origin: Vec2, center: Vec2, radius: f64, dx: &[f64], dy: &[f64], best: &mut [f64]) {
    let oc = origin - center;
    let c = oc.norm_sq() - radius * radius;
    for ((&x, &y), r) in dx.iter().zip(dy).zip(best.iter_mut()) {
        let b = x * oc.x + y * oc.y;
        let disc = b * b - c;
        let s = disc.max(0.0).sqrt();
        let near = -b - s;
        let far = -b + s;
        let t = if near >= 0.0 { near } else { far };
        let hit = disc >= 0.0 && t >= 0.0 && t < *r;
        *r = if hit { t } else { *r };
    }
}

#[inline]
fn segment_kernel(origin: Vec2, a: Vec2, b: Vec2, dx: &[f64], dy: &[f64], best: &mut [f64]) {
    let e = b - a;
    let w = a - origin;
    let w_cross_e = w.cross(e);
    let parallel_tol = PARALLEL_EPS * e.norm();
    for ((&x, &y), r) in dx.iter().zip(dy).zip(best.iter_mut()) {
        let denom = x * e.y - y * e.x;
        let t = w_cross_e / denom;
        let s = (w.x * y - w.y * x) / denom;
        let hit = denom.abs() > parallel_tol
            && t >= 0.0
            && (-SEGMENT_PARAM_EPS..=1.0 + SEGMENT_PARAM_EPS).contains(&s)
            && t < *r;
        *r = if hit { t } else { *r };
    }
}

/// Adds independent `N(0, sigma²)` noise to each range and clamps to `[0, max_range]`.
pub fn apply_noise<R: Rng + ?Sized>(scan: &Scan, sigma: f64, max_range: f64, rng: &mut R) -> Scan {
    if sigma == 0.0 {
        return scan.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    let ranges = scan
        .ranges
        .iter()
        .map(|&r| (r + normal.sample(rng)).clamp(0.0, max_range))
        .collect();
    Scan { ranges }
}
