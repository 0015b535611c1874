//! Goal-reaching navigation MDP on top of the lidar simulator.
//!
//! A unicycle robot picks one of seven velocity commands every `dt` seconds.
//! It observes the last four normalized scans and a one-hot goal bearing, and
//! is rewarded for progress toward the goal and for turning toward it.

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{apply_noise, distance_to_obstacle, wrap_angle, Pose, Scan, Scanner, ScannerSpec, Vec2};
use crate::worldmap::{sample_free_point, sample_free_pose, MapError, WorldMap};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode ({0})")]
    EpisodeFinished(EpisodeStatus),
    #[error("action index {index} out of range (have {count} actions)")]
    InvalidAction { index: usize, count: usize },
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotSpec {
    pub radius: f64,
    pub v_max: f64,
    pub dt: f64,
    pub goal_radius: f64,
    pub collision_substeps: usize,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self {
            radius: 0.177,
            v_max: 0.6,
            dt: 0.5,
            goal_radius: 0.3,
            collision_substeps: 5,
        }
    }
}

/// Terminal rewards and shaping gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSpec {
    pub goal: f64,
    pub collision: f64,
    pub timeout: f64,
    /// Reward per meter of progress toward the goal.
    pub progress_gain: f64,
    /// Magnitude of the turn-toward-goal term.
    pub heading_bonus: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            goal: 20.0,
            collision: -20.0,
            timeout: -10.0,
            progress_gain: 1.0,
            heading_bonus: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    /// m/s
    pub linear: f64,
    /// rad/s, positive turns left
    pub angular: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    actions: Vec<Action>,
}

impl ActionSet {
    pub const LEN: usize = 7;

    /// Hard right to hard left: ±162, ±108, ±54, 0 °/s, with linear speed
    /// interpolated from 0.2 m/s at the extremes to 0.6 m/s straight ahead.
    pub fn standard() -> Self {
        let actions = (0..Self::LEN)
            .map(|i| {
                let k = i as f64 - 3.0;
                let straightness = (3.0 - k.abs()) / 3.0;
                Action {
                    linear: 0.2 * (1.0 - straightness) + 0.6 * straightness,
                    angular: (54.0 * k).to_radians(),
                }
            })
            .collect();
        Self { actions }
    }

    pub fn new(actions: Vec<Action>, v_max: f64) -> Result<Self, String> {
        if actions.len() != Self::LEN {
            return Err(format!("need exactly {} actions, got {}", Self::LEN, actions.len()));
        }
        for (i, a) in actions.iter().enumerate() {
            if a.linear.abs() > v_max {
                return Err(format!("action {i} exceeds v_max"));
            }
            let mirror = actions[Self::LEN - 1 - i];
            if a.linear != mirror.linear || a.angular != -mirror.angular {
                return Err(format!("actions {i} and {} are not mirror images", Self::LEN - 1 - i));
            }
        }
        Ok(Self { actions })
    }

    pub fn get(&self, index: usize) -> Option<Action> {
        self.actions.get(index).copied()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.actions.iter()
    }
}

impl Default for ActionSet {
    fn default() -> Self {
        Self::standard()
    }
}

/// Everything that parameterizes an environment besides the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSpec {
    pub robot: RobotSpec,
    pub scanner: ScannerSpec,
    pub reward: RewardSpec,
    pub max_steps: usize,
    pub history_len: usize,
    pub bearing_bins: usize,
    pub min_goal_distance: f64,
    /// Extra free space beyond the robot radius required at spawn and goal points.
    pub clearance_margin: f64,
    #[serde(skip)]
    pub actions: ActionSet,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            robot: RobotSpec::default(),
            scanner: ScannerSpec::default(),
            reward: RewardSpec::default(),
            max_steps: 1000,
            history_len: 4,
            bearing_bins: 128,
            min_goal_distance: 1.0,
            clearance_margin: 0.1,
            actions: ActionSet::standard(),
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), String> {
        self.scanner.validate().map_err(|e| e.to_string())?;
        let r = &self.robot;
        if !(r.radius > 0.0 && r.v_max > 0.0 && r.dt > 0.0 && r.goal_radius > 0.0 && r.collision_substeps > 0) {
            return Err("robot radius, v_max, dt, goal_radius and collision_substeps must be positive".into());
        }
        if self.max_steps == 0 || self.history_len == 0 || self.bearing_bins == 0 {
            return Err("max_steps, history_len and bearing_bins must be positive".into());
        }
        ActionSet::new(self.actions.actions.clone(), r.v_max)?;
        Ok(())
    }

    /// Largest magnitude a non-terminal reward can take.
    pub fn shaping_bound(&self) -> f64 {
        self.reward.progress_gain * self.robot.v_max * self.robot.dt + self.reward.heading_bonus
    }
}

/// Network input: stacked normalized scans (oldest first) and a one-hot goal bearing.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub scan_stack: Vec<f32>,
    pub bearing_onehot: Vec<f32>,
}

impl Observation {
    pub fn bearing_index(&self) -> Option<usize> {
        self.bearing_onehot.iter().position(|&v| v == 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EpisodeStatus {
    Running,
    GoalReached,
    Collided,
    TimedOut,
}

impl EpisodeStatus {
    pub fn is_terminal(self) -> bool {
        self != EpisodeStatus::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeStatus::Running => "running",
            EpisodeStatus::GoalReached => "goal",
            EpisodeStatus::Collided => "collision",
            EpisodeStatus::TimedOut => "timeout",
        }
    }
}

impl fmt::Display for EpisodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub pose: Pose,
    pub goal: Vec2,
    /// Normalized scans, oldest first.
    pub scan_history: VecDeque<Vec<f32>>,
    pub step_count: usize,
    pub prev_goal_distance: f64,
    pub prev_heading_error: f64,
    pub status: EpisodeStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminal: bool,
    pub status: EpisodeStatus,
}

/// Unicycle motion over `dt` with constant `(v, w)`, integrated exactly along the arc.
pub fn integrate_motion(pose: &Pose, v: f64, w: f64, dt: f64) -> Pose {
    let (x, y, th) = (pose.position.x, pose.position.y, pose.heading);
    if w.abs() < 1e-6 {
        let (s, c) = th.sin_cos();
        return Pose::new(x + v * dt * c, y + v * dt * s, th + w * dt);
    }
    let th2 = th + w * dt;
    let k = v / w;
    Pose::new(x + k * (th2.sin() - th.sin()), y - k * (th2.cos() - th.cos()), th2)
}

/// Bearing of `goal` in the robot frame, in `[-π, π)`.
pub fn goal_bearing(pose: &Pose, goal: Vec2) -> f64 {
    let d = goal - pose.position;
    wrap_angle(d.y.atan2(d.x) - pose.heading)
}

pub fn bearing_bin(bearing: f64, bins: usize) -> usize {
    let b = bearing.rem_euclid(TAU);
    ((b / TAU * bins as f64).floor() as usize).min(bins - 1)
}

pub fn encode_orientation(bearing: f64, bins: usize) -> Vec<f32> {
    let mut v = vec![0.0; bins];
    v[bearing_bin(bearing, bins)] = 1.0;
    v
}

pub fn normalize_scan(scan: &Scan, max_range: f64) -> Vec<f32> {
    scan.ranges
        .iter()
        .map(|&r| (r / max_range).clamp(0.0, 1.0) as f32)
        .collect()
}

/// Reward for moving from `prev` to `new_pose` and ending in `status`.
pub fn compute_reward(prev: &EpisodeState, new_pose: &Pose, status: EpisodeStatus, spec: &RewardSpec) -> f64 {
    match status {
        EpisodeStatus::GoalReached => spec.goal,
        EpisodeStatus::Collided => spec.collision,
        EpisodeStatus::TimedOut => spec.timeout,
        EpisodeStatus::Running => {
            let distance = new_pose.position.distance(prev.goal);
            let heading_error = goal_bearing(new_pose, prev.goal).abs();
            let turn = if heading_error < prev.prev_heading_error.abs() {
                spec.heading_bonus
            } else {
                -spec.heading_bonus
            };
            spec.progress_gain * (prev.prev_goal_distance - distance) + turn
        }
    }
}

/// An environment bound to one map. Cheap to clone; the map is shared.
#[derive(Debug, Clone)]
pub struct Environment {
    map: Arc<WorldMap>,
    spec: EnvSpec,
    scanner: Scanner,
}

impl Environment {
    pub fn new(map: Arc<WorldMap>, spec: EnvSpec) -> Self {
        let scanner = Scanner::new(spec.scanner.clone());
        Self { map, spec, scanner }
    }

    pub fn map(&self) -> &Arc<WorldMap> {
        &self.map
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(EpisodeState, Observation), EnvError> {
        let clearance = self.spec.robot.radius + self.spec.clearance_margin;
        let pose = sample_free_pose(&self.map, &self.map.spawn_regions, clearance, rng)?;
        let min_dist = self.spec.min_goal_distance;
        let goal = sample_free_point(&self.map, &self.map.goal_regions, clearance, rng, |g| {
            g.distance(pose.position) >= min_dist
        })?;
        Ok(self.reset_to(pose, goal, rng))
    }

    /// Starts an episode from a given pose and goal.
    pub fn reset_to<R: Rng + ?Sized>(&self, pose: Pose, goal: Vec2, rng: &mut R) -> (EpisodeState, Observation) {
        let scan = self.sense(&pose, rng);
        let state = EpisodeState {
            pose,
            goal,
            scan_history: std::iter::repeat_n(scan, self.spec.history_len).collect(),
            step_count: 0,
            prev_goal_distance: pose.position.distance(goal),
            prev_heading_error: goal_bearing(&pose, goal),
            status: EpisodeStatus::Running,
        };
        let obs = self.observe(&state);
        (state, obs)
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &mut EpisodeState,
        action_index: usize,
        rng: &mut R,
    ) -> Result<StepResult, EnvError> {
        if state.status.is_terminal() {
            return Err(EnvError::EpisodeFinished(state.status));
        }
        let action = self.spec.actions.get(action_index).ok_or(EnvError::InvalidAction {
            index: action_index,
            count: self.spec.actions.len(),
        })?;
        let robot = &self.spec.robot;
        let sub_dt = robot.dt / robot.collision_substeps as f64;
        let mut pose = state.pose;
        let mut status = EpisodeStatus::Running;
        for _ in 0..robot.collision_substeps {
            pose = integrate_motion(&pose, action.linear, action.angular, sub_dt);
            if self.collides(pose.position) {
                status = EpisodeStatus::Collided;
                break;
            }
            if pose.position.distance(state.goal) <= robot.goal_radius {
                status = EpisodeStatus::GoalReached;
                break;
            }
        }
        state.step_count += 1;
        if status == EpisodeStatus::Running && state.step_count >= self.spec.max_steps {
            status = EpisodeStatus::TimedOut;
        }
        let reward = compute_reward(state, &pose, status, &self.spec.reward);

        state.pose = pose;
        state.prev_goal_distance = pose.position.distance(state.goal);
        state.prev_heading_error = goal_bearing(&pose, state.goal);
        state.status = status;
        let scan = self.sense(&pose, rng);
        state.scan_history.pop_front();
        state.scan_history.push_back(scan);

        Ok(StepResult {
            observation: self.observe(state),
            reward,
            terminal: status.is_terminal(),
            status,
        })
    }

    /// Robot disk overlaps an obstacle, or its center has left the map.
    pub fn collides(&self, position: Vec2) -> bool {
        let radius = self.spec.robot.radius;
        !self.map.bounds.contains(position)
            || self
                .map
                .obstacles
                .iter()
                .any(|o| o.contains(position) || distance_to_obstacle(position, o) < radius)
    }

    fn sense<R: Rng + ?Sized>(&self, pose: &Pose, rng: &mut R) -> Vec<f32> {
        let spec = &self.spec.scanner;
        let clean = self.scanner.cast(pose, &self.map.obstacles);
        let noisy = apply_noise(&clean, spec.noise_sigma, spec.max_range, rng);
        normalize_scan(&noisy, spec.max_range)
    }

    pub fn observe(&self, state: &EpisodeState) -> Observation {
        let mut scan_stack = Vec::with_capacity(self.spec.history_len * self.spec.scanner.num_beams);
        for scan in &state.scan_history {
            scan_stack.extend_from_slice(scan);
        }
        Observation {
            scan_stack,
            bearing_onehot: encode_orientation(goal_bearing(&state.pose, state.goal), self.spec.bearing_bins),
        }
    }
}

/// One line of a per-episode trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub pose: Pose,
    /// `None` for the initial pose.
    pub action: Option<usize>,
    pub reward: f64,
    pub status: EpisodeStatus,
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,x,y,theta,action,reward,status")?;
    for row in rows {
        let action = row.action.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.step, row.pose.position.x, row.pose.position.y, row.pose.heading, action, row.reward, row.status
        )?;
    }
    Ok(())
}
