//! World maps: obstacles, bounds and the regions episodes spawn in and aim for.

mod format;
mod svg;

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::geometry::{GeometryError, Obstacle, Pose, Vec2};

pub use format::{load_map, save_map};
pub use svg::convert_svg;

/// Rejection cap for [`sample_free_pose`].
pub const MAX_SAMPLE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid map: {0}")]
    Invalid(String),
    #[error("malformed SVG: {0}")]
    Svg(String),
    #[error("unsupported SVG element(s): {}", .0.join(", "))]
    UnsupportedElements(Vec<String>),
    #[error("SVG has no \"{0}\" layer")]
    MissingLayer(&'static str),
    #[error("region infeasible: no free position found after {0} samples")]
    RegionInfeasible(usize),
    #[error("unknown map \"{0}\" (not a file and not a built-in map)")]
    UnknownMap(String),
    #[error("reading map {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<GeometryError> for MapError {
    fn from(err: GeometryError) -> Self {
        MapError::Invalid(err.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    pub fn validate(&self) -> Result<(), MapError> {
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(MapError::Invalid("rect has non-finite corner".into()));
        }
        if !(self.min.x < self.max.x && self.min.y < self.max.y) {
            return Err(MapError::Invalid(format!(
                "rect min < max violated: min ({}, {}) max ({}, {})",
                self.min.x, self.min.y, self.max.x, self.max.y
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(other.min) && self.contains(other.max)
    }

    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }

    fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(self.min.x, self.max.x), p.y.clamp(self.min.y, self.max.y))
    }

    fn edges(&self) -> [(Vec2, Vec2); 4] {
        let (a, c) = (self.min, self.max);
        let b = Vec2::new(c.x, a.y);
        let d = Vec2::new(a.x, c.y);
        [(a, b), (b, c), (c, d), (d, a)]
    }

    /// Whether any part of `obstacle` lies within the rectangle.
    pub fn intersects(&self, obstacle: &Obstacle) -> bool {
        match *obstacle {
            Obstacle::Circle { center, radius } => center.distance(self.clamp(center)) <= radius,
            Obstacle::Segment { a, b } => {
                self.contains(a)
                    || self.contains(b)
                    || self.edges().iter().any(|&(p, q)| segments_intersect(a, b, p, q))
            }
        }
    }
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let orient = |p: Vec2, q: Vec2, r: Vec2| (q - p).cross(r - p);
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2| {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    (d1 == 0.0 && on(c, d, a)) || (d2 == 0.0 && on(c, d, b)) || (d3 == 0.0 && on(a, b, c)) || (d4 == 0.0 && on(a, b, d))
}

/// Area in which spawns or goals are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Rect(Rect),
    Disk { center: Vec2, radius: f64 },
}

impl Region {
    pub fn validate(&self) -> Result<(), MapError> {
        match self {
            Region::Rect(r) => r.validate(),
            Region::Disk { center, radius } => {
                if !center.is_finite() || !radius.is_finite() {
                    return Err(MapError::Invalid("disk region has non-finite values".into()));
                }
                if *radius <= 0.0 {
                    return Err(MapError::Invalid(format!(
                        "disk region radius > 0 violated (got {radius})"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn bounding_box(&self) -> Rect {
        match *self {
            Region::Rect(r) => r,
            Region::Disk { center, radius } => Rect::new(
                Vec2::new(center.x - radius, center.y - radius),
                Vec2::new(center.x + radius, center.y + radius),
            ),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        match self {
            Region::Rect(r) => r.contains(p),
            Region::Disk { center, radius } => p.distance(*center) <= *radius,
        }
    }

    /// Uniform point inside the region.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec2 {
        match *self {
            Region::Rect(r) => Vec2::new(rng.gen_range(r.min.x..r.max.x), rng.gen_range(r.min.y..r.max.y)),
            Region::Disk { center, radius } => {
                let rho = radius * rng.gen::<f64>().sqrt();
                let phi = rng.gen_range(-PI..PI);
                center + Vec2::from_angle(phi) * rho
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldMap {
    pub name: String,
    pub bounds: Rect,
    pub obstacles: Vec<Obstacle>,
    pub spawn_regions: Vec<Region>,
    pub goal_regions: Vec<Region>,
}

impl WorldMap {
    pub fn validate(&self) -> Result<(), MapError> {
        self.bounds.validate()?;
        for (i, obstacle) in self.obstacles.iter().enumerate() {
            obstacle
                .validate()
                .map_err(|e| MapError::Invalid(format!("obstacle {i}: {e}")))?;
            if !self.bounds.intersects(obstacle) {
                return Err(MapError::Invalid(format!(
                    "obstacle {i} does not intersect the map bounds"
                )));
            }
        }
        if self.spawn_regions.is_empty() {
            return Err(MapError::Invalid("at least one spawn region is required".into()));
        }
        if self.goal_regions.is_empty() {
            return Err(MapError::Invalid("at least one goal region is required".into()));
        }
        for (kind, regions) in [("spawn", &self.spawn_regions), ("goal", &self.goal_regions)] {
            for (i, region) in regions.iter().enumerate() {
                region
                    .validate()
                    .map_err(|e| MapError::Invalid(format!("{kind} region {i}: {e}")))?;
                if !self.bounds.contains_rect(&region.bounding_box()) {
                    return Err(MapError::Invalid(format!(
                        "{kind} region {i} lies outside the map bounds"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Smallest signed clearance from `point` to any obstacle or to the bounds.
    pub fn clearance(&self, point: Vec2) -> f64 {
        let b = &self.bounds;
        let to_bounds = (point.x - b.min.x)
            .min(b.max.x - point.x)
            .min(point.y - b.min.y)
            .min(b.max.y - point.y);
        self.obstacles
            .iter()
            .map(|o| o.clearance(point))
            .fold(to_bounds, f64::min)
    }

    /// Loads a map from a file path, or a built-in map by name (`simple_room`,
    /// `corridor`, `lab`, optionally prefixed with `builtin:`).
    pub fn resolve(reference: &str) -> Result<WorldMap, MapError> {
        if let Some(name) = reference.strip_prefix("builtin:") {
            return builtin(name).ok_or_else(|| MapError::UnknownMap(reference.into()));
        }
        let path = Path::new(reference);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
                path: reference.into(),
                source,
            })?;
            return load_map(&text);
        }
        builtin(reference).ok_or_else(|| MapError::UnknownMap(reference.into()))
    }
}

const BUILTIN_MAPS: [(&str, &str); 3] = [
    ("simple_room", include_str!("../../maps/simple_room.map")),
    ("corridor", include_str!("../../maps/corridor.map")),
    ("lab", include_str!("../../maps/lab.map")),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN_MAPS.iter().map(|(name, _)| *name)
}

pub fn builtin(name: &str) -> Option<WorldMap> {
    BUILTIN_MAPS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| load_map(text).expect("built-in maps are valid"))
}

/// Draws a pose whose position keeps at least `clearance` from every obstacle
/// and from the map bounds. The region is chosen uniformly, then the point
/// uniformly inside it; the heading is uniform in `[-π, π)`.
pub fn sample_free_pose<R: Rng + ?Sized>(
    map: &WorldMap,
    regions: &[Region],
    clearance: f64,
    rng: &mut R,
) -> Result<Pose, MapError> {
    let position = sample_free_point(map, regions, clearance, rng, |_| true)?;
    let heading = rng.gen_range(-PI..PI);
    Ok(Pose::new(position.x, position.y, heading))
}

/// Like [`sample_free_pose`] without the heading, with an extra acceptance predicate.
pub fn sample_free_point<R, F>(
    map: &WorldMap,
    regions: &[Region],
    clearance: f64,
    rng: &mut R,
    mut accept: F,
) -> Result<Vec2, MapError>
where
    R: Rng + ?Sized,
    F: FnMut(Vec2) -> bool,
{
    if regions.is_empty() {
        return Err(MapError::RegionInfeasible(0));
    }
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let region = &regions[rng.gen_range(0..regions.len())];
        let p = region.sample(rng);
        if map.clearance(p) >= clearance && accept(p) {
            return Ok(p);
        }
    }
    Err(MapError::RegionInfeasible(MAX_SAMPLE_ATTEMPTS))
}

/// Random clutter: `count` obstacles inside `bounds`, roughly half circles and
/// half segments. Used by tests and benchmarks.
pub fn scatter_obstacles<R: Rng + ?Sized>(bounds: &Rect, count: usize, rng: &mut R) -> Vec<Obstacle> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let c = Vec2::new(
            rng.gen_range(bounds.min.x..bounds.max.x),
            rng.gen_range(bounds.min.y..bounds.max.y),
        );
        let obstacle = if rng.gen_bool(0.5) {
            Obstacle::Circle {
                center: c,
                radius: rng.gen_range(0.05..1.0),
            }
        } else {
            let half = Vec2::from_angle(rng.gen_range(-PI..PI)) * rng.gen_range(0.1..2.0);
            Obstacle::Segment {
                a: c - half,
                b: c + half,
            }
        };
        out.push(obstacle);
    }
    out
}
