//! Convolutional actor-critic network.
//!
//! ```text
//! scans (history × beams) ─ conv1 (k9, s4, ReLU) ─ conv2 (k5, s2, ReLU) ─ flatten ─┐
//!                                                       one-hot goal bearing ──────┴─ dense 256 (ReLU) ─┬─ policy (softmax, 7)
//!                                                                                                      └─ value (linear)
//! ```
//!
//! Convolutions use valid padding. Activations are stored position-major
//! (`[position][channel]`), so a convolution window is a contiguous run of
//! `kernel × channels` values and every layer is a strided GEMM.
//!
//! Weight layouts: `conv*_w` is `[tap·in_channels + channel][filter]`,
//! `dense_w` is `[input][unit]`, `policy_w` is `[unit][action]`.

mod checkpoint;
mod grad;
mod optim;
mod scalar;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sim_env::Observation;
use scalar::{gemm, View};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointMeta, CHECKPOINT_MAGIC};
pub use grad::{compute_gradients, compute_gradients_for, LossConfig, Losses, TrainingSample};
pub use optim::{apply_update, OptConfig, OptState};
pub use scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len - self.kernel) / self.stride + 1
    }
}

/// Layer sizes. The default is the full-size navigation network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub scan_len: usize,
    pub history: usize,
    pub conv1: ConvShape,
    pub conv2: ConvShape,
    pub dense: usize,
    pub bearing_bins: usize,
    pub actions: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            scan_len: 1081,
            history: 4,
            conv1: ConvShape {
                filters: 16,
                kernel: 9,
                stride: 4,
            },
            conv2: ConvShape {
                filters: 32,
                kernel: 5,
                stride: 2,
            },
            dense: 256,
            bearing_bins: 128,
            actions: 7,
        }
    }
}

impl NetShape {
    pub fn validate(&self) -> Result<(), String> {
        let dims = [
            self.scan_len,
            self.history,
            self.conv1.filters,
            self.conv1.kernel,
            self.conv1.stride,
            self.conv2.filters,
            self.conv2.kernel,
            self.conv2.stride,
            self.dense,
            self.bearing_bins,
            self.actions,
        ];
        if dims.contains(&0) {
            return Err("every network dimension must be positive".into());
        }
        if self.scan_len < self.conv1.kernel {
            return Err("scan shorter than the first kernel".into());
        }
        if self.conv1_len() < self.conv2.kernel {
            return Err("first convolution output shorter than the second kernel".into());
        }
        Ok(())
    }

    pub fn conv1_len(&self) -> usize {
        self.conv1.output_len(self.scan_len)
    }

    pub fn conv2_len(&self) -> usize {
        self.conv2.output_len(self.conv1_len())
    }

    /// Length of the flattened second convolution output.
    pub fn flat_len(&self) -> usize {
        self.conv2_len() * self.conv2.filters
    }

    pub fn dense_input_len(&self) -> usize {
        self.flat_len() + self.bearing_bins
    }

    fn conv1_window(&self) -> usize {
        self.conv1.kernel * self.history
    }

    fn conv2_window(&self) -> usize {
        self.conv2.kernel * self.conv1.filters
    }

    /// Tensor lengths in storage order.
    pub fn tensor_lens(&self) -> [usize; 10] {
        [
            self.conv1_window() * self.conv1.filters,
            self.conv1.filters,
            self.conv2_window() * self.conv2.filters,
            self.conv2.filters,
            self.dense_input_len() * self.dense,
            self.dense,
            self.dense * self.actions,
            self.actions,
            self.dense,
            1,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensor_lens().iter().sum()
    }
}

pub const TENSOR_NAMES: [&str; 10] = [
    "conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b", "policy_w", "policy_b", "value_w", "value_b",
];

/// All weights and biases. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub shape: NetShape,
    pub conv1_w: Vec<T>,
    pub conv1_b: Vec<T>,
    pub conv2_w: Vec<T>,
    pub conv2_b: Vec<T>,
    pub dense_w: Vec<T>,
    pub dense_b: Vec<T>,
    pub policy_w: Vec<T>,
    pub policy_b: Vec<T>,
    pub value_w: Vec<T>,
    pub value_b: Vec<T>,
}

impl<T: Scalar> NetParams<T> {
    pub fn zeros(shape: NetShape) -> Self {
        let [a, b, c, d, e, f, g, h, i, j] = shape.tensor_lens().map(|n| vec![T::zero(); n]);
        Self {
            shape,
            conv1_w: a,
            conv1_b: b,
            conv2_w: c,
            conv2_b: d,
            dense_w: e,
            dense_b: f,
            policy_w: g,
            policy_b: h,
            value_w: i,
            value_b: j,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let fill = |w: &mut [T], fan_in: usize, fan_out: usize, rng: &mut R| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w {
                *v = T::of(rng.gen_range(-limit..limit));
            }
        };
        let s = shape;
        fill(&mut p.conv1_w, s.conv1_window(), s.conv1.kernel * s.conv1.filters, rng);
        fill(&mut p.conv2_w, s.conv2_window(), s.conv2.kernel * s.conv2.filters, rng);
        fill(&mut p.dense_w, s.dense_input_len(), s.dense, rng);
        fill(&mut p.policy_w, s.dense, s.actions, rng);
        fill(&mut p.value_w, s.dense, 1, rng);
        p
    }

    pub fn tensors(&self) -> [&[T]; 10] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.dense_w,
            &self.dense_b,
            &self.policy_w,
            &self.policy_b,
            &self.value_w,
            &self.value_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 10] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.dense_w,
            &mut self.dense_b,
            &mut self.policy_w,
            &mut self.policy_b,
            &mut self.value_w,
            &mut self.value_b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> NetParams<U> {
        let mut out = NetParams::<U>::zeros(self.shape);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::of(s.to_f64().expect("finite"));
            }
        }
        out
    }
}

/// Policy distribution and state value for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    pub policy: Vec<f32>,
    pub value: f32,
}

impl NetOutput {
    /// Index of the most probable action; ties go to the lowest index.
    pub fn greedy_action(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.policy.iter().enumerate() {
            if p > self.policy[best] {
                best = i;
            }
        }
        best
    }
}

/// A batch of observations laid out for the network.
#[derive(Debug, Clone)]
pub struct NetInput<T> {
    pub batch: usize,
    /// `[sample][position][history]`
    scans: Vec<T>,
    /// `[sample][bin]`
    bearing: Vec<T>,
}

impl<T: Scalar> NetInput<T> {
    pub fn from_observations<'a, I>(shape: &NetShape, observations: I) -> Self
    where
        I: IntoIterator<Item = &'a Observation>,
    {
        let (l, h, bins) = (shape.scan_len, shape.history, shape.bearing_bins);
        let mut scans = Vec::new();
        let mut bearing = Vec::new();
        let mut batch = 0;
        for obs in observations {
            assert_eq!(
                obs.scan_stack.len(),
                l * h,
                "observation scan stack has the wrong length"
            );
            assert_eq!(
                obs.bearing_onehot.len(),
                bins,
                "observation bearing has the wrong length"
            );
            let base = scans.len();
            scans.resize(base + l * h, T::zero());
            for (c, channel) in obs.scan_stack.chunks_exact(l).enumerate() {
                for (pos, &v) in channel.iter().enumerate() {
                    scans[base + pos * h + c] = T::of(v as f64);
                }
            }
            bearing.extend(obs.bearing_onehot.iter().map(|&v| T::of(v as f64)));
            batch += 1;
        }
        Self { batch, scans, bearing }
    }
}

/// Intermediate activations of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub batch: usize,
    /// `[sample][conv1 position][filter]`, after ReLU
    pub conv1: Vec<T>,
    /// `[sample][flattened conv2 | bearing one-hot]`; the conv2 part is after ReLU
    pub dense_input: Vec<T>,
    /// `[sample][unit]`, after ReLU
    pub hidden: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
    pub log_probs: Vec<T>,
    pub values: Vec<T>,
    /// Smallest |pre-activation| over all ReLU units; gradient checks use it
    /// to avoid sampling points next to a kink.
    pub kink_margin: T,
}

fn bias_relu<T: Scalar>(out: &mut [T], bias: &[T], margin: &mut T) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            let pre = *v + b;
            *margin = margin.min(pre.abs());
            *v = pre.max(T::zero());
        }
    }
}

pub fn forward_cached<T: Scalar>(params: &NetParams<T>, input: &NetInput<T>) -> ForwardCache<T> {
    let s = &params.shape;
    let b = input.batch;
    let (l1, l2) = (s.conv1_len(), s.conv2_len());
    let (f1, f2) = (s.conv1.filters, s.conv2.filters);
    let din = s.dense_input_len();
    let flat = s.flat_len();
    let mut margin = T::infinity();

    let mut conv1 = vec![T::zero(); b * l1 * f1];
    let mut dense_input = vec![T::zero(); b * din];
    let in_len = s.scan_len * s.history;
    let w1 = View::dense(&params.conv1_w, s.conv1_window(), f1);
    let w2 = View::dense(&params.conv2_w, s.conv2_window(), f2);
    for i in 0..b {
        let x = &input.scans[i * in_len..(i + 1) * in_len];
        let h1 = &mut conv1[i * l1 * f1..(i + 1) * l1 * f1];
        let cols = View::new(x, l1, s.conv1_window(), s.conv1.stride * s.history, 1);
        gemm(cols, w1, T::zero(), h1, f1);
        bias_relu(h1, &params.conv1_b, &mut margin);

        let row = &mut dense_input[i * din..(i + 1) * din];
        let cols = View::new(h1, l2, s.conv2_window(), s.conv2.stride * f1, 1);
        gemm(cols, w2, T::zero(), &mut row[..flat], f2);
        bias_relu(&mut row[..flat], &params.conv2_b, &mut margin);
        row[flat..].copy_from_slice(&input.bearing[i * s.bearing_bins..(i + 1) * s.bearing_bins]);
    }

    let mut hidden = vec![T::zero(); b * s.dense];
    gemm(
        View::dense(&dense_input, b, din),
        View::dense(&params.dense_w, din, s.dense),
        T::zero(),
        &mut hidden,
        s.dense,
    );
    bias_relu(&mut hidden, &params.dense_b, &mut margin);

    let a = s.actions;
    let hv = View::dense(&hidden, b, s.dense);
    let mut logits = vec![T::zero(); b * a];
    gemm(hv, View::dense(&params.policy_w, s.dense, a), T::zero(), &mut logits, a);
    let mut values = vec![T::zero(); b];
    gemm(hv, View::dense(&params.value_w, s.dense, 1), T::zero(), &mut values, 1);
    for v in &mut values {
        *v += params.value_b[0];
    }

    let mut probs = vec![T::zero(); b * a];
    let mut log_probs = vec![T::zero(); b * a];
    for i in 0..b {
        let z = &mut logits[i * a..(i + 1) * a];
        for (v, &bias) in z.iter_mut().zip(&params.policy_b) {
            *v += bias;
        }
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let log_norm = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for k in 0..a {
            let lp = z[k] - log_norm;
            log_probs[i * a + k] = lp;
            probs[i * a + k] = lp.exp();
        }
    }

    ForwardCache {
        batch: b,
        conv1,
        dense_input,
        hidden,
        logits,
        probs,
        log_probs,
        values,
        kink_margin: margin,
    }
}

/// Policy and value for each observation.
pub fn forward<T: Scalar>(params: &NetParams<T>, observations: &[Observation]) -> Vec<NetOutput> {
    let input = NetInput::from_observations(&params.shape, observations);
    let cache = forward_cached(params, &input);
    let a = params.shape.actions;
    (0..cache.batch)
        .map(|i| NetOutput {
            policy: cache.probs[i * a..(i + 1) * a]
                .iter()
                .map(|p| p.to_f32().unwrap_or(0.0))
                .collect(),
            value: cache.values[i].to_f32().unwrap_or(0.0),
        })
        .collect()
}
