use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acnet::{forward, NetParams};
use crate::sim_env::{EnvError, Environment, EpisodeState, EpisodeStatus, Observation, TrajectoryRow};

/// Episodes stepped side by side so their forward passes share one batch.
const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub outcome: EpisodeStatus,
    pub steps: usize,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeSummary>,
    /// Per-episode trajectories, empty unless requested.
    pub trajectories: Vec<Vec<TrajectoryRow>>,
}

impl EvalReport {
    fn rate(&self, status: EpisodeStatus) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| e.outcome == status).count() as f64 / self.episodes.len() as f64
    }

    pub fn success_rate(&self) -> f64 {
        self.rate(EpisodeStatus::GoalReached)
    }

    pub fn collision_rate(&self) -> f64 {
        self.rate(EpisodeStatus::Collided)
    }

    pub fn timeout_rate(&self) -> f64 {
        self.rate(EpisodeStatus::TimedOut)
    }

    pub fn mean_steps(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.steps as f64))
    }

    pub fn mean_reward(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.total_reward))
    }

    /// `key=value` lines, one metric each.
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("episodes", self.episodes.len().to_string()),
            ("success_rate", format!("{:.4}", self.success_rate())),
            ("collision_rate", format!("{:.4}", self.collision_rate())),
            ("timeout_rate", format!("{:.4}", self.timeout_rate())),
            ("mean_steps", format!("{:.2}", self.mean_steps())),
            ("mean_reward", format!("{:.4}", self.mean_reward())),
        ]
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

struct Running {
    index: usize,
    rng: ChaCha8Rng,
    state: EpisodeState,
    obs: Observation,
    total_reward: f64,
    trajectory: Vec<TrajectoryRow>,
}

/// Runs `episodes` greedy episodes (always the most probable action).
///
/// Episode `i` draws its start, goal and sensor noise from its own stream of
/// `seed`, so results do not depend on how episodes are batched.
pub fn evaluate(
    params: &NetParams<f32>,
    env: &Environment,
    episodes: usize,
    seed: u64,
    record_trajectories: bool,
) -> Result<EvalReport, EnvError> {
    let mut summaries: Vec<Option<EpisodeSummary>> = vec![None; episodes];
    let mut trajectories: Vec<Vec<TrajectoryRow>> = Vec::new();
    if record_trajectories {
        trajectories.resize(episodes, Vec::new());
    }
    let mut next = 0;
    let mut running: Vec<Running> = Vec::new();
    loop {
        while running.len() < EVAL_BATCH && next < episodes {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(next as u64);
            let (state, obs) = env.reset(&mut rng)?;
            let mut trajectory = Vec::new();
            if record_trajectories {
                trajectory.push(TrajectoryRow {
                    step: 0,
                    pose: state.pose,
                    action: None,
                    reward: 0.0,
                    status: state.status,
                });
            }
            running.push(Running {
                index: next,
                rng,
                state,
                obs,
                total_reward: 0.0,
                trajectory,
            });
            next += 1;
        }
        if running.is_empty() {
            break;
        }
        let observations: Vec<Observation> = running.iter().map(|r| r.obs.clone()).collect();
        let outputs = forward(params, &observations);
        let mut still = Vec::with_capacity(running.len());
        for (mut r, out) in running.into_iter().zip(outputs) {
            let action = out.greedy_action();
            let step = env.step(&mut r.state, action, &mut r.rng)?;
            r.total_reward += step.reward;
            if record_trajectories {
                r.trajectory.push(TrajectoryRow {
                    step: r.state.step_count,
                    pose: r.state.pose,
                    action: Some(action),
                    reward: step.reward,
                    status: step.status,
                });
            }
            if step.terminal {
                summaries[r.index] = Some(EpisodeSummary {
                    outcome: step.status,
                    steps: r.state.step_count,
                    total_reward: r.total_reward,
                });
                if record_trajectories {
                    trajectories[r.index] = r.trajectory;
                }
            } else {
                r.obs = step.observation;
                still.push(r);
            }
        }
        running = still;
    }
    Ok(EvalReport {
        episodes: summaries
            .into_iter()
            .map(|s| s.expect("every episode finished"))
            .collect(),
        trajectories,
    })
}
