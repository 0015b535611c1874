//! GA3C-style parallel training.
//!
//! Agents step their own environments and ask a shared prediction service for
//! policies; predictors batch those requests into one forward pass. Agents cut
//! their experience into `t_max`-step segments, turn them into discounted
//! returns and push them to a training queue, where trainers accumulate
//! batches and update the single shared parameter set.

mod eval;
mod metrics;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acnet::TrainingSample;
use crate::sim_env::Observation;

pub use eval::{evaluate, EpisodeSummary, EvalReport};
pub use metrics::{plot_script, read_metrics, EpisodeRecord, MetricsWriter, UpdateRecord, METRICS_HEADER};
pub use train::{
    checkpoint_path, run_training, trainer_loop, PredictionReply, PredictionRequest, Predictor, Progress, RunOptions,
    TrainError, TrainSummary,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapEntry {
    /// Builtin map name or path to a map file.
    pub name: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// From episode `from_episode` on, sample maps with `weights` (one per map).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub from_episode: u64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub num_agents: usize,
    pub num_trainers: usize,
    pub num_predictors: usize,
    pub prediction_batch_max: usize,
    /// How long a predictor holding at least one request waits for more.
    pub prediction_wait_us: u64,
    pub training_batch_size: usize,
    pub t_max: usize,
    pub gamma: f64,
    /// Absolute target; a resumed run continues until this many episodes exist.
    pub total_episodes: u64,
    pub maps: Vec<MapEntry>,
    pub schedule: Vec<ScheduleEntry>,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Record elapsed wall time per episode. Disable for byte-reproducible logs.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_agents: 32,
            num_trainers: 8,
            num_predictors: 2,
            prediction_batch_max: 32,
            prediction_wait_us: 2000,
            training_batch_size: 32,
            t_max: 5,
            gamma: 0.99,
            total_episodes: 5000,
            maps: vec![MapEntry {
                name: "simple_room".into(),
                weight: 1.0,
            }],
            schedule: Vec::new(),
            seed: 0,
            checkpoint_every: 500,
            wall_clock: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("num_agents", self.num_agents),
            ("num_trainers", self.num_trainers),
            ("num_predictors", self.num_predictors),
            ("prediction_batch_max", self.prediction_batch_max),
            ("training_batch_size", self.training_batch_size),
            ("t_max", self.t_max),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(format!("train.{name} must be at least 1"));
            }
        }
        if self.checkpoint_every == 0 {
            return Err("train.checkpoint_every must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("train.gamma must satisfy 0 < gamma <= 1 (got {})", self.gamma));
        }
        if self.maps.is_empty() {
            return Err("train.maps must name at least one map".into());
        }
        check_weights(self.maps.iter().map(|m| m.weight), "train.maps weights")?;
        let mut last = None;
        for entry in &self.schedule {
            if entry.weights.len() != self.maps.len() {
                return Err(format!(
                    "train.schedule entry at episode {} has {} weights for {} maps",
                    entry.from_episode,
                    entry.weights.len(),
                    self.maps.len()
                ));
            }
            check_weights(entry.weights.iter().copied(), "train.schedule weights")?;
            if last.is_some_and(|l| entry.from_episode <= l) {
                return Err("train.schedule entries must have increasing from_episode".into());
            }
            last = Some(entry.from_episode);
        }
        Ok(())
    }

    /// Map sampling weights in force for an episode.
    pub fn weights_at(&self, episode: u64) -> Vec<f64> {
        self.schedule
            .iter()
            .rev()
            .find(|e| e.from_episode <= episode)
            .map(|e| e.weights.clone())
            .unwrap_or_else(|| self.maps.iter().map(|m| m.weight).collect())
    }
}

fn check_weights(weights: impl Iterator<Item = f64>, what: &str) -> Result<(), String> {
    let mut sum = 0.0;
    for w in weights {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(format!("{what} must be finite and non-negative"));
        }
        sum += w;
    }
    if sum <= 0.0 {
        return Err(format!("{what} must not all be zero"));
    }
    Ok(())
}

/// Discounted returns of one segment, computed backwards from its end.
/// `bootstrap` stands in for the value of the state after the segment and is
/// ignored when the segment ends the episode.
pub fn compute_returns(rewards: &[f64], gamma: f64, bootstrap: f64, terminal: bool) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = if terminal { 0.0 } else { bootstrap };
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Draws an action index from a probability vector.
pub fn sample_action<R: Rng + ?Sized>(policy: &[f32], rng: &mut R) -> usize {
    let total: f32 = policy.iter().sum();
    let mut u = rng.gen::<f32>() * total;
    for (i, &p) in policy.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    // rounding left u past the last bucket
    policy.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Experience of the current segment, cut every `t_max` steps.
#[derive(Debug)]
pub struct SegmentBuffer {
    t_max: usize,
    gamma: f64,
    steps: Vec<(Observation, usize, f64)>,
}

impl SegmentBuffer {
    pub fn new(t_max: usize, gamma: f64) -> Self {
        Self {
            t_max,
            gamma,
            steps: Vec::with_capacity(t_max),
        }
    }

    pub fn is_full(&self) -> bool {
        self.steps.len() >= self.t_max
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, observation: Observation, action: usize, reward: f64) {
        self.steps.push((observation, action, reward));
    }

    /// Empties the buffer into training samples.
    pub fn drain(&mut self, bootstrap: f64, terminal: bool) -> Vec<TrainingSample> {
        let rewards: Vec<f64> = self.steps.iter().map(|s| s.2).collect();
        let returns = compute_returns(&rewards, self.gamma, bootstrap, terminal);
        self.steps
            .drain(..)
            .zip(returns)
            .map(|((observation, action, _), ret)| TrainingSample {
                observation,
                action,
                ret: ret as f32,
            })
            .collect()
    }
}
