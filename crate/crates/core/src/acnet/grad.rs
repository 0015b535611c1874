use serde::{Deserialize, Serialize};

use super::scalar::{gemm, View};
use super::{forward_cached, ForwardCache, NetInput, NetParams, Scalar};
use crate::sim_env::Observation;

/// One step of experience with its discounted return.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub observation: Observation,
    pub action: usize,
    pub ret: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Entropy bonus weight.
    pub beta: f64,
    /// Value loss weight.
    pub value_coef: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            value_coef: 0.5,
        }
    }
}

/// Batch means of the loss terms. `value` is the unweighted squared error.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Losses {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Gradients of the mean actor-critic loss over `samples`.
///
/// Per sample the loss is `-log π(a)·A - β·H(π) + c_v·(R - V)²` with the
/// advantage `A = R - V` held constant in the policy term.
pub fn compute_gradients<T: Scalar>(
    params: &NetParams<T>,
    samples: &[TrainingSample],
    cfg: &LossConfig,
) -> (NetParams<T>, Losses) {
    assert!(!samples.is_empty(), "empty training batch");
    let input = NetInput::from_observations(&params.shape, samples.iter().map(|s| &s.observation));
    let actions: Vec<usize> = samples.iter().map(|s| s.action).collect();
    let returns: Vec<T> = samples.iter().map(|s| T::of(s.ret as f64)).collect();
    let cache = forward_cached(params, &input);
    compute_gradients_for(params, &input, &cache, &actions, &returns, cfg)
}

/// Backward pass over an existing forward cache.
pub fn compute_gradients_for<T: Scalar>(
    params: &NetParams<T>,
    input: &NetInput<T>,
    cache: &ForwardCache<T>,
    actions: &[usize],
    returns: &[T],
    cfg: &LossConfig,
) -> (NetParams<T>, Losses) {
    let s = &params.shape;
    let b = cache.batch;
    assert_eq!(actions.len(), b);
    assert_eq!(returns.len(), b);
    let a = s.actions;
    let beta = T::of(cfg.beta);
    let c_v = T::of(cfg.value_coef);
    let inv_b = T::one() / T::of(b as f64);
    let mut g = NetParams::zeros(*s);
    let mut losses = Losses::default();

    // heads
    let mut dlogits = vec![T::zero(); b * a];
    let mut dvalues = vec![T::zero(); b];
    for i in 0..b {
        let act = actions[i];
        assert!(act < a, "action {act} out of range");
        let p = &cache.probs[i * a..(i + 1) * a];
        let lp = &cache.log_probs[i * a..(i + 1) * a];
        let adv = returns[i] - cache.values[i];
        let entropy = -p.iter().zip(lp).map(|(&p, &l)| p * l).sum::<T>();
        for k in 0..a {
            let onehot = if k == act { T::one() } else { T::zero() };
            dlogits[i * a + k] = inv_b * (adv * (p[k] - onehot) + beta * p[k] * (lp[k] + entropy));
        }
        dvalues[i] = inv_b * (-(T::one() + T::one()) * c_v * adv);

        let pl = -lp[act] * adv;
        let vl = adv * adv;
        losses.policy += pl.to_f64().unwrap_or(f64::NAN);
        losses.value += vl.to_f64().unwrap_or(f64::NAN);
        losses.entropy += entropy.to_f64().unwrap_or(f64::NAN);
    }
    let nb = b as f64;
    losses.policy /= nb;
    losses.value /= nb;
    losses.entropy /= nb;
    losses.total = losses.policy - cfg.beta * losses.entropy + cfg.value_coef * losses.value;

    let hv = View::dense(&cache.hidden, b, s.dense);
    gemm(hv.t(), View::dense(&dlogits, b, a), T::zero(), &mut g.policy_w, a);
    gemm(hv.t(), View::dense(&dvalues, b, 1), T::zero(), &mut g.value_w, 1);
    sum_rows(&dlogits, &mut g.policy_b);
    sum_rows(&dvalues, &mut g.value_b);

    // dense layer
    let mut dhidden = vec![T::zero(); b * s.dense];
    gemm(
        View::dense(&dlogits, b, a),
        View::dense(&params.policy_w, s.dense, a).t(),
        T::zero(),
        &mut dhidden,
        s.dense,
    );
    gemm(
        View::dense(&dvalues, b, 1),
        View::dense(&params.value_w, s.dense, 1).t(),
        T::one(),
        &mut dhidden,
        s.dense,
    );
    relu_mask(&mut dhidden, &cache.hidden);
    sum_rows(&dhidden, &mut g.dense_b);
    let din = s.dense_input_len();
    gemm(
        View::dense(&cache.dense_input, b, din).t(),
        View::dense(&dhidden, b, s.dense),
        T::zero(),
        &mut g.dense_w,
        s.dense,
    );
    let mut dinput = vec![T::zero(); b * din];
    gemm(
        View::dense(&dhidden, b, s.dense),
        View::dense(&params.dense_w, din, s.dense).t(),
        T::zero(),
        &mut dinput,
        din,
    );

    // convolutions, one sample at a time
    let (l1, l2) = (s.conv1_len(), s.conv2_len());
    let (f1, f2) = (s.conv1.filters, s.conv2.filters);
    let (win1, win2) = (s.conv1.kernel * s.history, s.conv2.kernel * f1);
    let (step1, step2) = (s.conv1.stride * s.history, s.conv2.stride * f1);
    let flat = s.flat_len();
    let in_len = s.scan_len * s.history;
    let mut dcols = vec![T::zero(); l2 * win2];
    let mut dh1 = vec![T::zero(); l1 * f1];
    for i in 0..b {
        let dy2 = &mut dinput[i * din..i * din + flat];
        relu_mask(dy2, &cache.dense_input[i * din..i * din + flat]);
        sum_rows(dy2, &mut g.conv2_b);
        let h1 = &cache.conv1[i * l1 * f1..(i + 1) * l1 * f1];
        let cols2 = View::new(h1, l2, win2, step2, 1);
        gemm(cols2.t(), View::dense(dy2, l2, f2), T::one(), &mut g.conv2_w, f2);

        gemm(
            View::dense(dy2, l2, f2),
            View::dense(&params.conv2_w, win2, f2).t(),
            T::zero(),
            &mut dcols,
            win2,
        );
        dh1.fill(T::zero());
        for (p, row) in dcols.chunks_exact(win2).enumerate() {
            for (d, &v) in dh1[p * step2..p * step2 + win2].iter_mut().zip(row) {
                *d += v;
            }
        }
        relu_mask(&mut dh1, h1);
        sum_rows(&dh1, &mut g.conv1_b);
        let x = &input.scans[i * in_len..(i + 1) * in_len];
        let cols1 = View::new(x, l1, win1, step1, 1);
        gemm(cols1.t(), View::dense(&dh1, l1, f1), T::one(), &mut g.conv1_w, f1);
    }

    (g, losses)
}

fn sum_rows<T: Scalar>(rows: &[T], out: &mut [T]) {
    for row in rows.chunks_exact(out.len()) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Zeroes gradients where the ReLU output was not positive.
fn relu_mask<T: Scalar>(grad: &mut [T], activation: &[T]) {
    for (g, &h) in grad.iter_mut().zip(activation) {
        if h <= T::zero() {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_observation;
    use super::super::{ConvShape, NetShape};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_shape() -> NetShape {
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

    #[test]
    fn uniform_policy_entropy() {
        let shape = NetShape::default();
        let params = NetParams::<f64>::zeros(shape);
        let obs = random_observation(&shape, &mut ChaCha8Rng::seed_from_u64(0));
        let sample = TrainingSample {
            observation: obs,
            action: 2,
            ret: 0.0,
        };
        let (_, losses) = compute_gradients(&params, &[sample], &LossConfig::default());
        assert!((losses.entropy - 7f64.ln()).abs() < 1e-12);
        assert!((losses.entropy - 1.9459).abs() < 1e-4);
        assert_eq!(losses.value, 0.0);
    }

    #[test]
    fn zero_advantage_leaves_only_entropy_gradient() {
        let shape = small_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = NetParams::<f64>::init(shape, &mut rng);
        let obs = random_observation(&shape, &mut rng);
        let input = NetInput::from_observations(&shape, [&obs]);
        let cache = forward_cached(&params, &input);
        let v = cache.values[0];
        let (g, _) = compute_gradients_for(&params, &input, &cache, &[3], &[v], &LossConfig::default());
        let (g_other, _) = compute_gradients_for(&params, &input, &cache, &[5], &[v], &LossConfig::default());
        // the chosen action no longer matters
        assert_eq!(g, g_other);
        // and without the entropy term nothing reaches the policy head
        let no_entropy = LossConfig {
            beta: 0.0,
            ..Default::default()
        };
        let (g, _) = compute_gradients_for(&params, &input, &cache, &[3], &[v], &no_entropy);
        assert!(g.policy_w.iter().chain(&g.policy_b).all(|&x| x == 0.0));
    }

    #[test]
    fn loss_terms_match_hand_values() {
        let shape = small_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = NetParams::<f64>::init(shape, &mut rng);
        let obs: Vec<_> = (0..3).map(|_| random_observation(&shape, &mut rng)).collect();
        let samples: Vec<_> = obs
            .iter()
            .enumerate()
            .map(|(i, o)| TrainingSample {
                observation: o.clone(),
                action: i,
                ret: 1.5 - i as f32,
            })
            .collect();
        let (_, losses) = compute_gradients(&params, &samples, &LossConfig::default());
        let outs = super::super::forward(&params, &obs);
        let mut policy = 0.0;
        let mut value = 0.0;
        for (i, out) in outs.iter().enumerate() {
            let adv = (1.5 - i as f64) - out.value as f64;
            policy -= (out.policy[i] as f64).ln() * adv;
            value += adv * adv;
        }
        assert!((losses.policy - policy / 3.0).abs() < 1e-5);
        assert!((losses.value - value / 3.0).abs() < 1e-5);
    }

    #[test]
    fn f32_gradients_track_f64() {
        let shape = small_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = NetParams::<f64>::init(shape, &mut rng);
        let samples: Vec<_> = (0..4)
            .map(|_| TrainingSample {
                observation: random_observation(&shape, &mut rng),
                action: rng.gen_range(0..7),
                ret: rng.gen_range(-5.0..5.0),
            })
            .collect();
        let cfg = LossConfig::default();
        let (g64, _) = compute_gradients(&params, &samples, &cfg);
        let (g32, _) = compute_gradients(&params.cast::<f32>(), &samples, &cfg);
        for (a, b) in g64.tensors().iter().zip(g32.tensors()) {
            for (&x, &y) in a.iter().zip(b) {
                assert!((x - y as f64).abs() < 1e-4 * (1.0 + x.abs()), "{x} vs {y}");
            }
        }
    }
}
