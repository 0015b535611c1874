use serde::{Deserialize, Serialize};

use super::{NetParams, NetShape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            decay: 0.99,
            epsilon: 1e-6,
        }
    }
}

/// RMSProp state: one squared-gradient accumulator per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub config: OptConfig,
    pub accumulators: NetParams<f32>,
    pub updates: u64,
}

impl OptState {
    pub fn new(shape: NetShape, config: OptConfig) -> Self {
        Self {
            config,
            accumulators: NetParams::zeros(shape),
            updates: 0,
        }
    }
}

/// `acc = d·acc + (1-d)·g²`, `p -= lr·g / sqrt(acc + eps)`.
pub fn apply_update(params: &mut NetParams<f32>, opt: &mut OptState, grads: &NetParams<f32>) {
    assert_eq!(params.shape, grads.shape, "gradient shape differs from parameters");
    assert_eq!(
        params.shape, opt.accumulators.shape,
        "optimizer shape differs from parameters"
    );
    let decay = opt.config.decay as f32;
    let lr = opt.config.learning_rate as f32;
    let eps = opt.config.epsilon as f32;
    for ((p, acc), g) in params
        .tensors_mut()
        .into_iter()
        .zip(opt.accumulators.tensors_mut())
        .zip(grads.tensors())
    {
        for ((p, a), &g) in p.iter_mut().zip(acc.iter_mut()).zip(g) {
            *a = decay * *a + (1.0 - decay) * g * g;
            *p -= lr * g / (*a + eps).sqrt();
        }
    }
    opt.updates += 1;
}

#[cfg(test)]
mod tests {
    use super::super::ConvShape;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> NetShape {
        NetShape {
            scan_len: 41,
            history: 2,
            conv1: ConvShape {
                filters: 2,
                kernel: 9,
                stride: 4,
            },
            conv2: ConvShape {
                filters: 2,
                kernel: 5,
                stride: 2,
            },
            dense: 4,
            bearing_bins: 8,
            actions: 7,
        }
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut params = NetParams::<f32>::init(shape(), &mut ChaCha8Rng::seed_from_u64(0));
        let before = params.clone();
        let mut opt = OptState::new(shape(), OptConfig::default());
        for _ in 0..10 {
            apply_update(&mut params, &mut opt, &NetParams::zeros(shape()));
        }
        assert_eq!(params, before);
        assert_eq!(opt.updates, 10);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        // accumulator fixed point is g², so the step tends to lr·sign(g)
        let mut params = NetParams::<f32>::zeros(shape());
        let mut opt = OptState::new(shape(), OptConfig::default());
        let mut grads = NetParams::<f32>::zeros(shape());
        grads.dense_b[0] = 0.37;
        grads.dense_b[1] = -2.5;
        let mut prev = params.dense_b.clone();
        let mut step = [0.0f32; 2];
        for _ in 0..3000 {
            apply_update(&mut params, &mut opt, &grads);
            step = [params.dense_b[0] - prev[0], params.dense_b[1] - prev[1]];
            prev = params.dense_b.clone();
        }
        assert!((step[0] + 3e-4).abs() < 3e-4 * 1e-3, "{step:?}");
        assert!((step[1] - 3e-4).abs() < 3e-4 * 1e-3, "{step:?}");
        assert!(opt.accumulators.tensors().iter().all(|t| t.iter().all(|&a| a >= 0.0)));
    }

    #[test]
    fn updates_are_deterministic() {
        let base = NetParams::<f32>::init(shape(), &mut ChaCha8Rng::seed_from_u64(1));
        let grads = NetParams::<f32>::init(shape(), &mut ChaCha8Rng::seed_from_u64(2));
        let run = || {
            let mut p = base.clone();
            let mut opt = OptState::new(shape(), OptConfig::default());
            for _ in 0..5 {
                apply_update(&mut p, &mut opt, &grads);
            }
            (p, opt)
        };
        assert_eq!(run(), run());
    }
}
