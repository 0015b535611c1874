//! Central finite differences against the analytic backward pass.

use navgym_core::acnet::{
    compute_gradients, forward_cached, ConvShape, LossConfig, NetInput, NetParams, NetShape, TrainingSample,
};
use navgym_core::Observation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
/// Draws with a ReLU pre-activation closer than this to zero are redrawn, a
/// finite difference across a kink measures nothing useful.
pub const KINK_MARGIN: f64 = 1e-4;

pub fn small_shape() -> NetShape {
    NetShape {
        scan_len: 41,
        history: 4,
        conv1: ConvShape {
            filters: 4,
            kernel: 9,
            stride: 4,
        },
        conv2: ConvShape {
            filters: 6,
            kernel: 5,
            stride: 2,
        },
        dense: 16,
        bearing_bins: 8,
        actions: 7,
    }
}

pub struct Draw {
    pub params: NetParams<f64>,
    pub samples: Vec<TrainingSample>,
}

fn random_draw(rng: &mut ChaCha8Rng) -> Draw {
    let shape = small_shape();
    let mut params = NetParams::<f64>::init(shape, rng);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let samples = (0..3)
        .map(|_| {
            let mut bearing = vec![0.0; shape.bearing_bins];
            bearing[rng.gen_range(0..shape.bearing_bins)] = 1.0;
            TrainingSample {
                observation: Observation {
                    scan_stack: (0..shape.scan_len * shape.history).map(|_| rng.gen::<f32>()).collect(),
                    bearing_onehot: bearing,
                },
                action: rng.gen_range(0..shape.actions),
                ret: rng.gen_range(-3.0..3.0),
            }
        })
        .collect();
    Draw { params, samples }
}

/// A draw whose activations all sit at least `KINK_MARGIN` from a ReLU kink.
pub fn smooth_draw(seed: u64) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let d = random_draw(&mut rng);
        let input = NetInput::from_observations(&d.params.shape, d.samples.iter().map(|s| &s.observation));
        if forward_cached(&d.params, &input).kink_margin > KINK_MARGIN {
            return d;
        }
    }
}

/// Mean loss with the policy-term advantages frozen at `adv`.
fn loss(params: &NetParams<f64>, samples: &[TrainingSample], adv: &[f64], cfg: &LossConfig) -> f64 {
    let input = NetInput::from_observations(&params.shape, samples.iter().map(|s| &s.observation));
    let c = forward_cached(params, &input);
    let a = params.shape.actions;
    let mut total = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let lp = &c.log_probs[i * a..(i + 1) * a];
        let entropy: f64 = -lp.iter().map(|&l| l.exp() * l).sum::<f64>();
        let err = s.ret as f64 - c.values[i];
        total += -lp[s.action] * adv[i] - cfg.beta * entropy + cfg.value_coef * err * err;
    }
    total / samples.len() as f64
}

/// Largest relative error over every parameter of the draw.
pub fn max_relative_error(d: &Draw) -> f64 {
    let cfg = LossConfig::default();
    let (grads, _) = compute_gradients(&d.params, &d.samples, &cfg);
    let input = NetInput::from_observations(&d.params.shape, d.samples.iter().map(|s| &s.observation));
    let c = forward_cached(&d.params, &input);
    let adv: Vec<f64> = d.samples.iter().zip(&c.values).map(|(s, v)| s.ret as f64 - v).collect();

    let mut worst = 0.0f64;
    let mut p = d.params.clone();
    for (t, analytic) in grads.tensors().iter().enumerate() {
        for j in 0..analytic.len() {
            let orig = p.tensors()[t][j];
            p.tensors_mut()[t][j] = orig + H;
            let up = loss(&p, &d.samples, &adv, &cfg);
            p.tensors_mut()[t][j] = orig - H;
            let down = loss(&p, &d.samples, &adv, &cfg);
            p.tensors_mut()[t][j] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}
