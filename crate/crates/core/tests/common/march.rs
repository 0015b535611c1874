//! Brute-force range finder: walks each beam in 1 mm steps and asks, step by
//! step, whether the swept piece of the ray touches an obstacle. Uses only
//! point/segment distances and orientation tests, none of the caster's
//! intersection algebra. Free space is skipped with sphere tracing: from a
//! point at distance `d` from everything, the next `floor(d / h)` steps are
//! provably empty.

use navgym_core::{Obstacle, Pose, ScannerSpec, Vec2};

pub const STEP: f64 = 1e-3;

fn sub(a: Vec2, b: Vec2) -> (f64, f64) {
    (a.x - b.x, a.y - b.y)
}

fn cross(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let (ex, ey) = sub(b, a);
    let (wx, wy) = sub(p, a);
    let len2 = ex * ex + ey * ey;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((wx * ex + wy * ey) / len2).clamp(0.0, 1.0)
    };
    let (dx, dy) = (wx - t * ex, wy - t * ey);
    (dx * dx + dy * dy).sqrt()
}

fn on_box(p: Vec2, a: Vec2, b: Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_touch(p0: Vec2, p1: Vec2, a: Vec2, b: Vec2) -> bool {
    let d1 = cross(sub(b, a), sub(p0, a));
    let d2 = cross(sub(b, a), sub(p1, a));
    let d3 = cross(sub(p1, p0), sub(a, p0));
    let d4 = cross(sub(p1, p0), sub(b, p0));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_box(p0, a, b))
        || (d2 == 0.0 && on_box(p1, a, b))
        || (d3 == 0.0 && on_box(a, p0, p1))
        || (d4 == 0.0 && on_box(b, p0, p1))
}

fn distance(p: Vec2, o: &Obstacle) -> f64 {
    match *o {
        Obstacle::Segment { a, b } => point_segment_distance(p, a, b),
        Obstacle::Circle { center, radius } => {
            let (dx, dy) = sub(p, center);
            ((dx * dx + dy * dy).sqrt() - radius).abs()
        }
    }
}

/// Does the step from `p0` to `p1` touch the obstacle? `p0` is outside it.
fn step_touches(p0: Vec2, p1: Vec2, o: &Obstacle) -> bool {
    match *o {
        Obstacle::Segment { a, b } => segments_touch(p0, p1, a, b),
        Obstacle::Circle { center, radius } => point_segment_distance(center, p0, p1) <= radius,
    }
}

/// Range along one beam, reported at the middle of the first touching step.
pub fn march_beam(origin: Vec2, angle: f64, obstacles: &[Obstacle], max_range: f64) -> f64 {
    let (s, c) = angle.sin_cos();
    let at = |k: u64| Vec2::new(origin.x + c * STEP * k as f64, origin.y + s * STEP * k as f64);
    let max_steps = (max_range / STEP).ceil() as u64;
    let mut k = 0u64;
    while k < max_steps {
        let p = at(k);
        let d = obstacles.iter().map(|o| distance(p, o)).fold(f64::INFINITY, f64::min);
        let skip = (d / STEP).floor();
        if skip >= 2.0 {
            k += (skip as u64 - 1).min(max_steps - k);
            continue;
        }
        let q = at(k + 1);
        if obstacles.iter().any(|o| step_touches(p, q, o)) {
            return ((k as f64 + 0.5) * STEP).min(max_range);
        }
        k += 1;
    }
    max_range
}

pub fn march_scan(pose: &Pose, obstacles: &[Obstacle], spec: &ScannerSpec) -> Vec<f64> {
    (0..spec.num_beams)
        .map(|j| {
            march_beam(
                pose.position,
                pose.heading + spec.beam_bearing(j),
                obstacles,
                spec.max_range,
            )
        })
        .collect()
}

fn inside(p: Vec2, o: &Obstacle) -> bool {
    match *o {
        Obstacle::Circle { center, radius } => {
            let (dx, dy) = sub(p, center);
            (dx * dx + dy * dy).sqrt() <= radius
        }
        Obstacle::Segment { .. } => false,
    }
}

/// Random clutter of up to 50 obstacles in a 20 m square and a scanner pose
/// at least 1 cm from every obstacle surface.
pub fn random_case<R: rand::Rng>(rng: &mut R) -> (Pose, Vec<Obstacle>) {
    use navgym_core::worldmap::{scatter_obstacles, Rect};
    let bounds = Rect::new(Vec2::new(-10.0, -10.0), Vec2::new(10.0, 10.0));
    let count = rng.gen_range(0..=50);
    let obstacles = scatter_obstacles(&bounds, count, rng);
    loop {
        let p = Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        if obstacles.iter().all(|o| !inside(p, o) && distance(p, o) > 0.01) {
            let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            return (Pose::new(p.x, p.y, heading), obstacles);
        }
    }
}
