use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender, TryRecvError};
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::metrics::{EpisodeRecord, MetricsWriter, UpdateRecord};
use super::{sample_action, SegmentBuffer};
use crate::acnet::{
    apply_update, compute_gradients, forward, Checkpoint, CheckpointError, CheckpointMeta, Losses, NetOutput,
    NetParams, OptState, TrainingSample,
};
use crate::config::RunConfig;
use crate::sim_env::{Environment, Observation};
use crate::worldmap::{MapError, WorldMap};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("map `{name}`: {source}")]
    Map { name: String, source: MapError },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("training aborted: {0}")]
    Worker(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> TrainError {
    let context = context.into();
    move |source| TrainError::Io { context, source }
}

pub type ProgressFn = Box<dyn FnMut(&Progress) + Send>;

/// Snapshot handed to the progress callback.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub episodes: u64,
    pub updates: u64,
    /// Over the last (up to) 100 logged episodes.
    pub success_rate: f64,
    pub mean_reward: f64,
    pub elapsed: Duration,
}

pub struct RunOptions {
    pub resume: Option<Checkpoint>,
    /// Set from outside to stop training early; a final checkpoint is still written.
    pub stop: Arc<AtomicBool>,
    /// Upper bound on predictor and trainer threads each.
    pub max_threads: Option<usize>,
    pub progress: Option<ProgressFn>,
    pub progress_every: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            resume: None,
            stop: Arc::new(AtomicBool::new(false)),
            max_threads: None,
            progress: None,
            progress_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// Episodes logged in total, including those of a resumed run.
    pub episodes: u64,
    pub updates: u64,
    pub samples_enqueued: u64,
    pub samples_consumed: u64,
    pub final_checkpoint: PathBuf,
    pub interrupted: bool,
    pub elapsed: Duration,
    /// Config hash stored in the checkpoint that was resumed, when it differs.
    pub config_warning: Option<String>,
}

pub struct PredictionRequest {
    pub agent_id: usize,
    pub observation: Observation,
}

#[derive(Debug, Clone)]
pub struct PredictionReply {
    pub agent_id: usize,
    pub output: NetOutput,
}

enum LogEvent {
    Episode(EpisodeRecord),
    Update(UpdateRecord),
}

/// Counts samples the trainers are done with; single-agent runs wait on it
/// so every update lands at a reproducible point of the agent's timeline.
struct Consumed {
    count: Mutex<u64>,
    changed: Condvar,
}

struct Shared {
    params: RwLock<NetParams<f32>>,
    opt: Mutex<OptState>,
    in_update: AtomicBool,
    stop: Arc<AtomicBool>,
    failed: AtomicBool,
    next_episode: AtomicU64,
    total_episodes: u64,
    samples_in: AtomicU64,
    consumed: Consumed,
    last_losses: Mutex<Option<Losses>>,
    active_agents: AtomicUsize,
    lockstep: bool,
    start: Instant,
    wall_clock: bool,
}

impl Shared {
    fn halted(&self) -> bool {
        self.stop.load(Ordering::Relaxed) || self.failed.load(Ordering::Relaxed)
    }

    fn mark_consumed(&self, n: u64) {
        *self.consumed.count.lock().expect("consumed lock") += n;
        self.consumed.changed.notify_all();
    }

    /// Blocks until trainers have taken `target` samples, or the run halts.
    fn wait_consumed(&self, target: u64) {
        let mut count = self.consumed.count.lock().expect("consumed lock");
        while *count < target && !self.halted() {
            count = self
                .consumed
                .changed
                .wait_timeout(count, Duration::from_millis(50))
                .expect("consumed lock")
                .0;
        }
    }

    fn snapshot(&self, config_hash: u64, episodes: u64) -> Checkpoint {
        let params = self.params.read().expect("params lock");
        let opt = self.opt.lock().expect("optimizer lock");
        Checkpoint {
            meta: CheckpointMeta { config_hash, episodes },
            params: params.clone(),
            opt: opt.clone(),
        }
    }
}

/// Flags the run as failed if the owning worker unwinds.
struct PanicGuard<'a>(&'a Shared);

impl Drop for PanicGuard<'_> {
    fn drop(&mut self) {
        if thread::panicking() {
            self.0.failed.store(true, Ordering::SeqCst);
        }
    }
}

/// Batches prediction requests. Once one request is in hand it keeps
/// collecting for at most `wait`, or until `batch_max` requests are pending
/// or every live agent is already in the batch.
pub struct Predictor {
    pub batch_max: usize,
    pub wait: Duration,
}

impl Predictor {
    pub fn run<F>(
        &self,
        requests: &Receiver<PredictionRequest>,
        replies: &[Sender<PredictionReply>],
        active_agents: &AtomicUsize,
        mut model: F,
    ) where
        F: FnMut(&[Observation]) -> Vec<NetOutput>,
    {
        while let Ok(first) = requests.recv() {
            let mut batch = vec![first];
            let deadline = Instant::now() + self.wait;
            while batch.len() < self.batch_max {
                match requests.try_recv() {
                    Ok(r) => {
                        batch.push(r);
                        continue;
                    }
                    Err(TryRecvError::Disconnected) => break,
                    Err(TryRecvError::Empty) => {}
                }
                if batch.len() >= active_agents.load(Ordering::Relaxed) {
                    break;
                }
                match requests.recv_deadline(deadline) {
                    Ok(r) => batch.push(r),
                    Err(_) => break,
                }
            }
            let (ids, observations): (Vec<usize>, Vec<Observation>) =
                batch.into_iter().map(|r| (r.agent_id, r.observation)).unzip();
            let outputs = model(&observations);
            assert_eq!(outputs.len(), ids.len(), "model returned a wrong-sized batch");
            for (agent_id, output) in ids.into_iter().zip(outputs) {
                // an agent that already quit has nobody listening
                let _ = replies[agent_id].send(PredictionReply { agent_id, output });
            }
        }
    }
}

/// Accumulates samples into batches of `batch_size` and hands each to
/// `update`. When the queue closes, a partial batch is still trained on.
/// `consumed` is told about every sample once it is buffered or trained on.
pub fn trainer_loop<U, C>(samples: &Receiver<TrainingSample>, batch_size: usize, mut update: U, mut consumed: C)
where
    U: FnMut(&[TrainingSample]),
    C: FnMut(u64),
{
    let mut batch = Vec::with_capacity(batch_size);
    while let Ok(sample) = samples.recv() {
        batch.push(sample);
        if batch.len() == batch_size {
            update(&batch);
            batch.clear();
        }
        consumed(1);
    }
    if !batch.is_empty() {
        update(&batch);
    }
}

struct AgentContext<'a> {
    id: usize,
    shared: &'a Shared,
    config: &'a RunConfig,
    envs: &'a [Environment],
    map_names: &'a [String],
    requests: Sender<PredictionRequest>,
    replies: Receiver<PredictionReply>,
    samples: Sender<TrainingSample>,
    log: Sender<LogEvent>,
}

impl AgentContext<'_> {
    fn predict(&self, observation: &Observation) -> Result<NetOutput, String> {
        self.requests
            .send(PredictionRequest {
                agent_id: self.id,
                observation: observation.clone(),
            })
            .map_err(|_| "prediction queue closed".to_string())?;
        let reply = self
            .replies
            .recv()
            .map_err(|_| "prediction service stopped".to_string())?;
        assert_eq!(reply.agent_id, self.id, "prediction reply delivered to the wrong agent");
        Ok(reply.output)
    }

    fn push_samples(&self, samples: Vec<TrainingSample>) -> Result<(), String> {
        let n = samples.len() as u64;
        let target = self.shared.samples_in.fetch_add(n, Ordering::SeqCst) + n;
        for s in samples {
            self.samples.send(s).map_err(|_| "training queue closed".to_string())?;
        }
        if self.shared.lockstep {
            self.shared.wait_consumed(target);
        }
        Ok(())
    }

    fn run(self) -> Result<(), String> {
        let _guard = PanicGuard(self.shared);
        let result = self.episodes();
        self.shared.active_agents.fetch_sub(1, Ordering::SeqCst);
        result
    }

    fn episodes(&self) -> Result<(), String> {
        let train = &self.config.train;
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        rng.set_stream(self.id as u64);
        let mut buffer = SegmentBuffer::new(train.t_max, train.gamma);
        'episodes: loop {
            if self.shared.halted() {
                return Ok(());
            }
            let episode = self.shared.next_episode.fetch_add(1, Ordering::SeqCst);
            if episode >= self.shared.total_episodes {
                return Ok(());
            }
            let map = if self.envs.len() == 1 {
                0
            } else {
                WeightedIndex::new(train.weights_at(episode))
                    .map_err(|e| format!("map weights: {e}"))?
                    .sample(&mut rng)
            };
            let env = &self.envs[map];
            let (mut state, mut obs) = env.reset(&mut rng).map_err(|e| e.to_string())?;
            let mut total_reward = 0.0;
            loop {
                if self.shared.halted() {
                    break 'episodes Ok(());
                }
                let prediction = self.predict(&obs)?;
                if buffer.is_full() {
                    self.push_samples(buffer.drain(prediction.value as f64, false))?;
                }
                let action = sample_action(&prediction.policy, &mut rng);
                let step = env.step(&mut state, action, &mut rng).map_err(|e| e.to_string())?;
                total_reward += step.reward;
                buffer.push(obs, action, step.reward);
                if step.terminal {
                    self.push_samples(buffer.drain(0.0, true))?;
                    let losses = *self.shared.last_losses.lock().expect("loss lock");
                    let wall_ms = if self.shared.wall_clock {
                        self.shared.start.elapsed().as_millis() as u64
                    } else {
                        0
                    };
                    let record = EpisodeRecord {
                        episode,
                        map: self.map_names[map].clone(),
                        outcome: step.status,
                        total_reward,
                        steps: state.step_count,
                        losses,
                        wall_ms,
                    };
                    self.log
                        .send(LogEvent::Episode(record))
                        .map_err(|_| "metrics logger stopped".to_string())?;
                    break;
                }
                obs = step.observation;
            }
        }
    }
}

struct Logger<'a> {
    shared: &'a Shared,
    writer: MetricsWriter,
    next: u64,
    pending: BTreeMap<u64, EpisodeRecord>,
    recent: VecDeque<(bool, f64)>,
    updates: u64,
    output_dir: PathBuf,
    checkpoint_every: u64,
    config_hash: u64,
    progress: Option<ProgressFn>,
    progress_every: u64,
}

impl Logger<'_> {
    fn run(mut self, events: Receiver<LogEvent>) -> Result<u64, String> {
        let _guard = PanicGuard(self.shared);
        let result = self.drain(events);
        if result.is_err() {
            self.shared.failed.store(true, Ordering::SeqCst);
        }
        result
    }

    fn drain(&mut self, events: Receiver<LogEvent>) -> Result<u64, String> {
        for event in events {
            match event {
                LogEvent::Update(u) => {
                    self.updates = self.updates.max(u.update);
                    self.writer.update(&u).map_err(|e| format!("writing update log: {e}"))?;
                }
                LogEvent::Episode(r) => {
                    self.pending.insert(r.episode, r);
                    while let Some(r) = self.pending.remove(&self.next) {
                        self.write(r)?;
                    }
                }
            }
        }
        // episodes lost to an early stop leave gaps; keep what arrived
        for (_, r) in std::mem::take(&mut self.pending) {
            self.write(r)?;
        }
        self.writer.flush().map_err(|e| format!("writing metrics: {e}"))?;
        Ok(self.next)
    }

    fn write(&mut self, r: EpisodeRecord) -> Result<(), String> {
        self.writer.episode(&r).map_err(|e| format!("writing metrics: {e}"))?;
        self.next = r.episode + 1;
        self.recent
            .push_back((r.outcome == crate::sim_env::EpisodeStatus::GoalReached, r.total_reward));
        if self.recent.len() > 100 {
            self.recent.pop_front();
        }
        if self.next.is_multiple_of(self.checkpoint_every) {
            self.writer.flush().map_err(|e| format!("writing metrics: {e}"))?;
            let path = checkpoint_path(&self.output_dir, self.next);
            self.shared
                .snapshot(self.config_hash, self.next)
                .save(&path)
                .map_err(|e| format!("writing {}: {e}", path.display()))?;
        }
        if self.progress_every > 0 && self.next.is_multiple_of(self.progress_every) {
            if let Some(cb) = self.progress.as_mut() {
                let n = self.recent.len().max(1) as f64;
                cb(&Progress {
                    episodes: self.next,
                    updates: self.updates,
                    success_rate: self.recent.iter().filter(|r| r.0).count() as f64 / n,
                    mean_reward: self.recent.iter().map(|r| r.1).sum::<f64>() / n,
                    elapsed: self.shared.start.elapsed(),
                });
            }
        }
        Ok(())
    }
}

fn load_maps(config: &RunConfig) -> Result<(Vec<Environment>, Vec<String>), TrainError> {
    let mut envs = Vec::new();
    let mut names = Vec::new();
    for entry in &config.train.maps {
        let map = WorldMap::resolve(&entry.name).map_err(|source| TrainError::Map {
            name: entry.name.clone(),
            source,
        })?;
        names.push(map.name.clone());
        envs.push(Environment::new(Arc::new(map), config.env.clone()));
    }
    Ok((envs, names))
}

fn join_error(what: String, payload: Box<dyn std::any::Any + Send>) -> String {
    let msg = payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into());
    format!("{what} panicked: {msg}")
}

/// Trains until `train.total_episodes` episodes have been logged (counting a
/// resumed checkpoint's episodes) or `options.stop` is raised.
///
/// Writes `metrics.csv`, `updates.csv`, periodic checkpoints under
/// `checkpoints/` and `final.ckpt` into the configured output directory.
pub fn run_training(config: &RunConfig, mut options: RunOptions) -> Result<TrainSummary, TrainError> {
    config.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    let tc = &config.train;
    let (envs, map_names) = load_maps(config)?;
    let shape = config.net_shape();
    let config_hash = config.hash();

    let out = config.output_dir.clone();
    let checkpoint_dir = out.join("checkpoints");
    fs::create_dir_all(&checkpoint_dir).map_err(io_err(format!("creating {}", checkpoint_dir.display())))?;
    let writer = MetricsWriter::open(&out.join("metrics.csv"), &out.join("updates.csv"))
        .map_err(io_err(format!("opening metrics in {}", out.display())))?;

    let (params, opt, start_episode, config_warning) = match options.resume.take() {
        Some(ckpt) => {
            ckpt.ensure_shape(&shape)?;
            let warning = ckpt.config_warning(config_hash);
            let mut opt = ckpt.opt;
            opt.config = config.optimizer;
            (ckpt.params, opt, ckpt.meta.episodes, warning)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
            rng.set_stream(u64::MAX);
            (
                NetParams::init(shape, &mut rng),
                OptState::new(shape, config.optimizer),
                0,
                None,
            )
        }
    };

    let cap = options.max_threads.unwrap_or(usize::MAX).max(1);
    let num_predictors = tc.num_predictors.min(cap);
    let num_trainers = tc.num_trainers.min(cap);
    let lockstep = tc.num_agents == 1 && num_trainers == 1 && num_predictors == 1;

    let shared = Shared {
        params: RwLock::new(params),
        opt: Mutex::new(opt),
        in_update: AtomicBool::new(false),
        stop: options.stop.clone(),
        failed: AtomicBool::new(false),
        next_episode: AtomicU64::new(start_episode),
        total_episodes: tc.total_episodes,
        samples_in: AtomicU64::new(0),
        consumed: Consumed {
            count: Mutex::new(0),
            changed: Condvar::new(),
        },
        last_losses: Mutex::new(None),
        active_agents: AtomicUsize::new(tc.num_agents),
        lockstep,
        start: Instant::now(),
        wall_clock: tc.wall_clock,
    };

    let (req_tx, req_rx) = bounded::<PredictionRequest>(2 * tc.prediction_batch_max);
    let (sample_tx, sample_rx) = bounded::<TrainingSample>(2 * tc.training_batch_size);
    let (log_tx, log_rx) = bounded::<LogEvent>(4 * tc.num_agents.max(64));
    let (reply_txs, reply_rxs): (Vec<_>, Vec<_>) = (0..tc.num_agents).map(|_| bounded::<PredictionReply>(1)).unzip();

    let logger = Logger {
        shared: &shared,
        writer,
        next: start_episode,
        pending: BTreeMap::new(),
        recent: VecDeque::new(),
        updates: shared.opt.lock().expect("optimizer lock").updates,
        output_dir: out.clone(),
        checkpoint_every: tc.checkpoint_every,
        config_hash,
        progress: options.progress.take(),
        progress_every: options.progress_every,
    };

    let mut errors = Vec::new();
    let logged = thread::scope(|scope| {
        let shared = &shared;
        let logger = thread::Builder::new()
            .name("logger".into())
            .spawn_scoped(scope, move || logger.run(log_rx))
            .expect("spawn logger");

        let mut workers = Vec::new();
        for t in 0..num_trainers {
            let rx = sample_rx.clone();
            let log = log_tx.clone();
            let loss_cfg = config.loss;
            let batch = tc.training_batch_size;
            let handle = thread::Builder::new()
                .name(format!("trainer-{t}"))
                .spawn_scoped(scope, move || {
                    let _guard = PanicGuard(shared);
                    let mut failure = None;
                    trainer_loop(
                        &rx,
                        batch,
                        |samples| {
                            if failure.is_some() {
                                return;
                            }
                            let (grads, losses) = {
                                let p = shared.params.read().expect("params lock");
                                compute_gradients(&p, samples, &loss_cfg)
                            };
                            if !grads.is_finite() {
                                failure = Some("non-finite gradient".to_string());
                                shared.failed.store(true, Ordering::SeqCst);
                                return;
                            }
                            let update = {
                                let mut p = shared.params.write().expect("params lock");
                                let mut opt = shared.opt.lock().expect("optimizer lock");
                                assert!(
                                    !shared.in_update.swap(true, Ordering::SeqCst),
                                    "two trainers inside apply_update"
                                );
                                apply_update(&mut p, &mut opt, &grads);
                                *shared.last_losses.lock().expect("loss lock") = Some(losses);
                                shared.in_update.store(false, Ordering::SeqCst);
                                opt.updates
                            };
                            let _ = log.send(LogEvent::Update(UpdateRecord {
                                update,
                                samples: samples.len(),
                                losses,
                            }));
                        },
                        |n| shared.mark_consumed(n),
                    );
                    failure.map_or(Ok(()), Err)
                })
                .expect("spawn trainer");
            workers.push((format!("trainer {t}"), handle));
        }

        for p in 0..num_predictors {
            let rx = req_rx.clone();
            let replies = reply_txs.clone();
            let predictor = Predictor {
                batch_max: tc.prediction_batch_max,
                wait: Duration::from_micros(tc.prediction_wait_us),
            };
            let handle = thread::Builder::new()
                .name(format!("predictor-{p}"))
                .spawn_scoped(scope, move || {
                    let _guard = PanicGuard(shared);
                    predictor.run(&rx, &replies, &shared.active_agents, |obs| {
                        let params = shared.params.read().expect("params lock");
                        forward(&params, obs)
                    });
                    Ok(())
                })
                .expect("spawn predictor");
            workers.push((format!("predictor {p}"), handle));
        }

        for (id, replies) in reply_rxs.into_iter().enumerate() {
            let ctx = AgentContext {
                id,
                shared,
                config,
                envs: &envs,
                map_names: &map_names,
                requests: req_tx.clone(),
                replies,
                samples: sample_tx.clone(),
                log: log_tx.clone(),
            };
            let handle = thread::Builder::new()
                .name(format!("agent-{id}"))
                .spawn_scoped(scope, move || ctx.run())
                .expect("spawn agent");
            workers.push((format!("agent {id}"), handle));
        }
        // workers hold their own ends now; closing ours lets queues drain and close
        drop((req_tx, req_rx, sample_tx, sample_rx, log_tx, reply_txs));

        for (name, handle) in workers {
            match handle.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => errors.push(format!("{name}: {e}")),
                Err(payload) => errors.push(join_error(name, payload)),
            }
        }
        match logger.join() {
            Ok(Ok(n)) => n,
            Ok(Err(e)) => {
                errors.push(format!("logger: {e}"));
                start_episode
            }
            Err(payload) => {
                errors.push(join_error("logger".into(), payload));
                start_episode
            }
        }
    });

    if !errors.is_empty() {
        return Err(TrainError::Worker(errors.join("; ")));
    }

    let final_checkpoint = out.join("final.ckpt");
    let ckpt = shared.snapshot(config_hash, logged);
    ckpt.save(&final_checkpoint)
        .map_err(io_err(format!("writing {}", final_checkpoint.display())))?;
    let consumed = *shared.consumed.count.lock().expect("consumed lock");
    Ok(TrainSummary {
        episodes: logged,
        updates: ckpt.opt.updates,
        samples_enqueued: shared.samples_in.load(Ordering::SeqCst),
        samples_consumed: consumed,
        final_checkpoint,
        interrupted: shared.stop.load(Ordering::SeqCst),
        elapsed: shared.start.elapsed(),
        config_warning,
    })
}

/// Path of the periodic checkpoint written after `episodes` episodes.
pub fn checkpoint_path(output_dir: &Path, episodes: u64) -> PathBuf {
    output_dir
        .join("checkpoints")
        .join(format!("episode_{episodes:06}.ckpt"))
}
