//! Fixtures shared by the benchmarks.

use navgym_core::acnet::{NetShape, TrainingSample};
use navgym_core::worldmap::{scatter_obstacles, Rect};
use navgym_core::{Observation, Obstacle, Pose, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` random obstacles in a 20 m square and a few poses inside it.
pub fn clutter(count: usize, seed: u64) -> (Vec<Obstacle>, Vec<Pose>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = Rect::new(Vec2::new(-10.0, -10.0), Vec2::new(10.0, 10.0));
    let obstacles = scatter_obstacles(&bounds, count, &mut rng);
    let poses = (0..16)
        .map(|_| {
            Pose::new(
                rng.gen_range(-9.0..9.0),
                rng.gen_range(-9.0..9.0),
                rng.gen_range(-3.0..3.0),
            )
        })
        .collect();
    (obstacles, poses)
}

pub fn observations(shape: &NetShape, count: usize, seed: u64) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut bearing_onehot = vec![0.0; shape.bearing_bins];
            bearing_onehot[rng.gen_range(0..shape.bearing_bins)] = 1.0;
            Observation {
                scan_stack: (0..shape.scan_len * shape.history)
                    .map(|_| rng.gen_range(0.0..1.0))
                    .collect(),
                bearing_onehot,
            }
        })
        .collect()
}

pub fn samples(shape: &NetShape, count: usize, seed: u64) -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    observations(shape, count, seed)
        .into_iter()
        .map(|observation| TrainingSample {
            observation,
            action: rng.gen_range(0..shape.actions),
            ret: rng.gen_range(-20.0..20.0),
        })
        .collect()
}
