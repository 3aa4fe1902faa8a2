//! Training orchestration: rollout workers, the per-iteration barrier,
//! evaluation and checkpoints.
//!
//! Workers hold an environment and their own RNG streams. Every iteration
//! they act against the same read-only parameter snapshot; learners then
//! update and the snapshot is swapped in one step.

use crate::env::{action_from_index, CoopEnv, EnvError, Observation};
use crate::marl::{
    act, make_policies, route_experience, stream_values, ActMode, JointStep, JointTrajectory,
    MarlError, PolicySet, StrategyKind, ACTIONS_PER_AGENT,
};
use crate::metrics::{
    append_metrics, mean_std, truncate_metrics, write_metrics_header, IterationMetrics,
};
use crate::policy::{ModelSpec, PolicyError};
use crate::ppo::{build_samples, AdamState, Learner, LossComponents, PpoConfig, PpoError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

pub const RUN_STATE_VERSION: u32 = 1;

/// Top bit marks evaluation episode seeds; training seeds never have it.
const EVAL_SEED_BIT: u64 = 1 << 63;

const ACTION_STREAM: u64 = 0;
const EPISODE_STREAM: u64 = 1;
const LEARNER_STREAM_BASE: u64 = 16;
const EVAL_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("worker {worker} failed twice: {reason}")]
    WorkerFailed { worker: usize, reason: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Marl(#[from] MarlError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("bad checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, RuntimeError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RuntimeError + '_ {
    move |source| RuntimeError::Io {
        path: path.to_owned(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> RuntimeError + '_ {
    move |source| RuntimeError::Csv {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_workers: usize,
    pub steps_per_worker_per_iter: usize,
    pub seed: u64,
    pub strategy: StrategyKind,
    /// Per-agent network template. Input shape and action count are filled
    /// in from the environment and strategy.
    pub model: ModelSpec,
    pub ppo: PpoConfig,
    /// Evaluate every this many iterations; 0 disables periodic evaluation.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Checkpoint every this many iterations; 0 means only at the end of
    /// [`Trainer::run`].
    pub checkpoint_every: usize,
    pub output_dir: Option<PathBuf>,
    /// Fixed seeds, ordered merge and a zero `wall_time_s` column, so the
    /// metrics CSV is a pure function of the config.
    pub deterministic: bool,
    /// Worker pool size; 0 lets rayon decide.
    pub threads: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(RuntimeError::Config(m.to_owned()));
        if self.n_workers == 0 {
            return fail("n_workers must be at least 1");
        }
        if self.steps_per_worker_per_iter == 0 {
            return fail("steps_per_worker_per_iter must be at least 1");
        }
        if self.n_workers * self.steps_per_worker_per_iter < self.ppo.batch_size {
            return Err(RuntimeError::Config(format!(
                "n_workers x steps_per_worker_per_iter = {} is below batch_size {}",
                self.n_workers * self.steps_per_worker_per_iter,
                self.ppo.batch_size
            )));
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return fail("eval_episodes must be positive when eval_every is set");
        }
        self.ppo.validate()?;
        Ok(())
    }

    /// Actor template for this strategy given one agent's frame shape.
    pub fn actor_spec(&self, half_obs: (usize, usize)) -> ModelSpec {
        self.model.with_io(
            self.strategy.actor_obs_shape(half_obs),
            self.strategy.actor_actions(),
        )
    }
}

/// One rollout worker: an environment plus independent RNG streams for
/// action sampling and episode seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerState<E> {
    pub index: usize,
    pub env: E,
    pub action_rng: ChaCha8Rng,
    pub episode_rng: ChaCha8Rng,
    /// Frames of the running episode; `None` when the next step must reset.
    pub current: Option<[Observation; 2]>,
    pub episode_len: usize,
    pub episode_return: f64,
}

impl<E: CoopEnv> WorkerState<E> {
    /// Worker `index` of a run seeded with `seed`: streams keyed by `seed ^ index`.
    pub fn new(index: usize, env: E, seed: u64) -> Self {
        let key = seed ^ index as u64;
        let mut action_rng = ChaCha8Rng::seed_from_u64(key);
        action_rng.set_stream(ACTION_STREAM);
        let mut episode_rng = ChaCha8Rng::seed_from_u64(key);
        episode_rng.set_stream(EPISODE_STREAM);
        Self {
            index,
            env,
            action_rng,
            episode_rng,
            current: None,
            episode_len: 0,
            episode_return: 0.0,
        }
    }

    /// Steps the environment `steps` times under `policies`, resetting
    /// finished episodes. Unfinished work is cut and bootstrapped.
    pub fn collect(&mut self, policies: &PolicySet, steps: usize) -> Result<WorkerRollout> {
        let mut out = WorkerRollout::default();
        let mut piece = JointTrajectory::default();
        for _ in 0..steps {
            let obs = match self.current.take() {
                Some(o) => o,
                None => {
                    let seed = self.episode_rng.gen::<u64>() & !EVAL_SEED_BIT;
                    self.episode_len = 0;
                    self.episode_return = 0.0;
                    self.env.reset(seed)
                }
            };
            let choice = act(policies, &obs, &mut self.action_rng, ActMode::Sample)?;
            let tr = self.env.step(choice.actions)?;
            let team = 0.5 * (tr.rewards[0] + tr.rewards[1]);
            out.step_rewards.push(team);
            self.episode_len += 1;
            self.episode_return += team;
            piece.steps.push(JointStep {
                observations: obs,
                actions: choice.actions,
                decisions: choice.decisions,
                rewards: tr.rewards,
                done: tr.done,
            });
            if tr.done {
                out.episodes.push(EpisodeStat {
                    len: self.episode_len,
                    ret: self.episode_return,
                });
                out.pieces.push(std::mem::take(&mut piece));
            } else {
                self.current = Some(tr.observations);
            }
        }
        if !piece.steps.is_empty() {
            let last = self
                .current
                .as_ref()
                .expect("unfinished episode keeps its frames");
            piece.bootstrap = stream_values(policies, last)?;
            out.pieces.push(piece);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStat {
    pub len: usize,
    pub ret: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorkerRollout {
    pub pieces: Vec<JointTrajectory>,
    /// Episodes that finished during this rollout.
    pub episodes: Vec<EpisodeStat>,
    /// Team reward (mean over agents) of every step.
    pub step_rewards: Vec<f64>,
}

/// Every worker's rollout, concatenated in worker-index order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergedRollout {
    pub pieces: Vec<JointTrajectory>,
    pub episodes: Vec<EpisodeStat>,
    pub step_rewards: Vec<f64>,
}

impl MergedRollout {
    fn merge(parts: Vec<WorkerRollout>) -> Self {
        let mut m = Self::default();
        for p in parts {
            m.pieces.extend(p.pieces);
            m.episodes.extend(p.episodes);
            m.step_rewards.extend(p.step_rewards);
        }
        m
    }
}

fn attempt<E: CoopEnv>(
    workers: &mut [WorkerState<E>],
    policies: &PolicySet,
    steps: usize,
) -> std::result::Result<Vec<WorkerRollout>, (usize, String)> {
    workers
        .par_iter_mut()
        .map(|w| {
            let index = w.index;
            match catch_unwind(AssertUnwindSafe(|| w.collect(policies, steps))) {
                Ok(Ok(r)) => Ok(r),
                Ok(Err(e)) => Err((index, e.to_string())),
                Err(panic) => {
                    let msg = panic
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| panic.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "panic".into());
                    Err((index, format!("panicked: {msg}")))
                }
            }
        })
        .collect()
}

/// Runs every worker for `steps` steps against `policies` on the current
/// rayon pool and merges the results in worker order.
///
/// If any worker fails, the whole rollout is discarded and retried once from
/// the same worker states; a second failure is returned and the workers are
/// left as they were before the call.
pub fn run_rollouts<E: CoopEnv>(
    workers: &mut [WorkerState<E>],
    policies: &PolicySet,
    steps: usize,
) -> Result<MergedRollout> {
    if steps == 0 {
        return Err(RuntimeError::Config(
            "steps_per_worker_per_iter must be at least 1".into(),
        ));
    }
    let saved: Vec<WorkerState<E>> = workers.to_vec();
    match attempt(workers, policies, steps) {
        Ok(parts) => Ok(MergedRollout::merge(parts)),
        Err(_) => {
            workers.clone_from_slice(&saved);
            match attempt(workers, policies, steps) {
                Ok(parts) => Ok(MergedRollout::merge(parts)),
                Err((worker, reason)) => {
                    workers.clone_from_slice(&saved);
                    Err(RuntimeError::WorkerFailed { worker, reason })
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub episodes: usize,
    pub mean_episode_len: f64,
    pub mean_return: f64,
}

/// Seeds of the evaluation episodes for a run seed. Disjoint from training
/// seeds, which always have the top bit clear.
pub fn eval_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_STREAM);
    (0..n).map(|_| rng.gen::<u64>() | EVAL_SEED_BIT).collect()
}

fn run_episode<E: CoopEnv, F>(env: &E, seed: u64, mut choose: F) -> Result<EpisodeStat>
where
    F: FnMut(&[Observation; 2]) -> Result<[i8; 2]>,
{
    let mut env = env.clone();
    let mut obs = env.reset(seed);
    let mut stat = EpisodeStat { len: 0, ret: 0.0 };
    loop {
        let tr = env.step(choose(&obs)?)?;
        stat.len += 1;
        stat.ret += 0.5 * (tr.rewards[0] + tr.rewards[1]);
        if tr.done {
            return Ok(stat);
        }
        obs = tr.observations;
    }
}

fn summarize(stats: Vec<EpisodeStat>) -> EvalResult {
    let n = stats.len();
    EvalResult {
        episodes: n,
        mean_episode_len: stats.iter().map(|s| s.len as f64).sum::<f64>() / n as f64,
        mean_return: stats.iter().map(|s| s.ret).sum::<f64>() / n as f64,
    }
}

/// Greedy evaluation of `policies` on the given episode seeds.
pub fn evaluate<E: CoopEnv>(policies: &PolicySet, env: &E, seeds: &[u64]) -> Result<EvalResult> {
    let stats = seeds
        .par_iter()
        .map(|&seed| {
            run_episode(env, seed, |obs| {
                // Greedy mode never touches the RNG.
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                Ok(act(policies, obs, &mut rng, ActMode::Greedy)?.actions)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(stats))
}

/// The uniform-random policy on the given episode seeds.
pub fn random_baseline<E: CoopEnv>(env: &E, seeds: &[u64]) -> Result<EvalResult> {
    let stats = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_episode(env, seed, |_| {
                Ok([
                    action_from_index(rng.gen_range(0..ACTIONS_PER_AGENT)),
                    action_from_index(rng.gen_range(0..ACTIONS_PER_AGENT)),
                ])
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(stats))
}

/// Saved state of one learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerCheckpoint {
    pub format_version: u32,
    pub actor_spec: ModelSpec,
    pub critic_spec: Option<ModelSpec>,
    pub params: Vec<f64>,
    pub optimizer: AdamState,
    pub rng: ChaCha8Rng,
}

/// Everything besides the learners needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "E: DeserializeOwned"))]
pub struct RunState<E> {
    pub format_version: u32,
    /// Iterations completed.
    pub iteration: usize,
    pub config: RunConfig,
    pub workers: Vec<WorkerState<E>>,
    pub env: E,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LATEST_FILE: &str = "LATEST";

pub fn checkpoint_name(iteration: usize) -> String {
    format!("iter_{iteration:06}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, value).map_err(|e| RuntimeError::Checkpoint {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    use std::io::Write;
    w.flush().map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| RuntimeError::Checkpoint {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}

/// Directory named by `output_dir/checkpoints/LATEST`, if any.
pub fn latest_checkpoint(output_dir: &Path) -> Result<Option<PathBuf>> {
    let root = output_dir.join(CHECKPOINT_DIR);
    let pointer = root.join(LATEST_FILE);
    if !pointer.exists() {
        return Ok(None);
    }
    let name = fs::read_to_string(&pointer).map_err(io_err(&pointer))?;
    Ok(Some(root.join(name.trim())))
}

/// Reads the learner files of a checkpoint directory.
pub fn read_learner_checkpoints(dir: &Path, n: usize) -> Result<Vec<LearnerCheckpoint>> {
    (0..n)
        .map(|k| {
            let path = dir.join(format!("learner_{k}.json"));
            let ck: LearnerCheckpoint = read_json(&path)?;
            if ck.format_version != RUN_STATE_VERSION {
                return Err(RuntimeError::Checkpoint {
                    path,
                    reason: format!("unsupported format version {}", ck.format_version),
                });
            }
            Ok(ck)
        })
        .collect()
}

pub fn read_run_state<E: CoopEnv>(dir: &Path) -> Result<RunState<E>> {
    let path = dir.join("run_state.json");
    let state: RunState<E> = read_json(&path)?;
    if state.format_version != RUN_STATE_VERSION {
        return Err(RuntimeError::Checkpoint {
            path,
            reason: format!("unsupported format version {}", state.format_version),
        });
    }
    Ok(state)
}

/// Owns the whole training run.
pub struct Trainer<E: CoopEnv> {
    pub config: RunConfig,
    pub policies: PolicySet,
    pub learners: Vec<Learner>,
    learner_rngs: Vec<ChaCha8Rng>,
    workers: Vec<WorkerState<E>>,
    env: E,
    iteration: usize,
    pool: rayon::ThreadPool,
}

impl<E: CoopEnv> Trainer<E> {
    /// Fresh run. Parameters are drawn from a generator seeded with `seed`.
    pub fn new(config: RunConfig, env: E) -> Result<Self> {
        config.validate()?;
        let half = env.obs_shape();
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let policies = make_policies(
            config.strategy,
            &config.actor_spec(half),
            half,
            &mut init_rng,
        )?;
        let learners = policies
            .models
            .iter()
            .zip(&policies.snapshot)
            .map(|(m, p)| Learner::new(m.clone(), p.as_ref().clone(), config.ppo.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let learner_rngs = (0..learners.len())
            .map(|k| {
                let mut r = ChaCha8Rng::seed_from_u64(config.seed);
                r.set_stream(LEARNER_STREAM_BASE + k as u64);
                r
            })
            .collect();
        let workers = (0..config.n_workers)
            .map(|k| WorkerState::new(k, env.clone(), config.seed))
            .collect();
        let pool = build_pool(config.threads)?;
        Ok(Self {
            config,
            policies,
            learners,
            learner_rngs,
            workers,
            env,
            iteration: 0,
            pool,
        })
    }

    /// Continues the run whose latest checkpoint lives under `output_dir`.
    /// Metrics rows past the checkpoint are dropped.
    pub fn resume(output_dir: &Path) -> Result<Self> {
        let dir = latest_checkpoint(output_dir)?.ok_or_else(|| RuntimeError::Checkpoint {
            path: output_dir.join(CHECKPOINT_DIR).join(LATEST_FILE),
            reason: "no checkpoint to resume from".into(),
        })?;
        Self::from_checkpoint(&dir, Some(output_dir))
    }

    /// Rebuilds a trainer from one checkpoint directory. With `output_dir`
    /// the metrics files there are truncated to the checkpoint.
    pub fn from_checkpoint(dir: &Path, output_dir: Option<&Path>) -> Result<Self> {
        let state: RunState<E> = read_run_state(dir)?;
        let mut trainer = Self::new(state.config.clone(), state.env.clone())?;
        let cks = read_learner_checkpoints(dir, trainer.learners.len())?;
        for (k, ck) in cks.into_iter().enumerate() {
            let learner = &mut trainer.learners[k];
            let path = dir.join(format!("learner_{k}.json"));
            if &ck.actor_spec != learner.model.actor.spec()
                || ck.critic_spec.as_ref() != learner.model.critic.as_ref().map(|c| c.spec())
            {
                return Err(RuntimeError::Checkpoint {
                    path,
                    reason: "network spec does not match the run config".into(),
                });
            }
            if ck.params.len() != learner.params.len() || ck.optimizer.m.len() != ck.params.len() {
                return Err(RuntimeError::Checkpoint {
                    path,
                    reason: "parameter count does not match the network".into(),
                });
            }
            learner.params = ck.params;
            learner.optimizer = ck.optimizer;
            trainer.learner_rngs[k] = ck.rng;
        }
        trainer
            .policies
            .publish(trainer.learners.iter().map(|l| l.params.clone()).collect());
        trainer.workers = state.workers;
        trainer.iteration = state.iteration;
        trainer.config.output_dir = output_dir.map(Path::to_owned);
        if let Some(out) = output_dir {
            let metrics = out.join(METRICS_FILE);
            if metrics.exists() {
                truncate_metrics(&metrics, state.iteration).map_err(csv_err(&metrics))?;
            }
            let eval = out.join(EVAL_FILE);
            if eval.exists() {
                truncate_eval(&eval, state.iteration)?;
            }
        }
        Ok(trainer)
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn workers(&self) -> &[WorkerState<E>] {
        &self.workers
    }

    /// Collects one iteration of experience without learning from it.
    pub fn rollouts(&mut self) -> Result<MergedRollout> {
        let steps = self.config.steps_per_worker_per_iter;
        let policies = &self.policies;
        let workers = &mut self.workers;
        self.pool.install(|| run_rollouts(workers, policies, steps))
    }

    /// One full iteration: rollouts, routing, learner updates and the
    /// snapshot swap. On error nothing is published.
    pub fn train_iteration(&mut self) -> Result<IterationMetrics> {
        let start = Instant::now();
        let workers_before = self.workers.clone();
        let merged = self.rollouts()?;
        let routed = route_experience(self.config.strategy, &merged.pieces)?;
        let cfg = &self.config.ppo;
        let learners = &mut self.learners;
        let rngs = &mut self.learner_rngs;
        let result: Result<Vec<(Learner, ChaCha8Rng, LossComponents)>> = self.pool.install(|| {
            learners
                .par_iter()
                .zip(rngs.par_iter())
                .zip(routed.par_iter())
                .map(|((learner, rng), trajs)| {
                    let samples = build_samples(trajs, cfg)?;
                    let mut next = learner.clone();
                    let mut rng = rng.clone();
                    let loss = next.train(&samples, &mut rng)?;
                    Ok((next, rng, loss))
                })
                .collect()
        });
        let updated = match result {
            Ok(u) => u,
            Err(e) => {
                self.workers = workers_before;
                return Err(e);
            }
        };
        let mut losses = Vec::with_capacity(updated.len());
        for (k, (learner, rng, loss)) in updated.into_iter().enumerate() {
            self.learners[k] = learner;
            self.learner_rngs[k] = rng;
            losses.push(loss);
        }
        self.policies
            .publish(self.learners.iter().map(|l| l.params.clone()).collect());

        let (mean_reward, std_reward) = mean_std(&merged.step_rewards);
        let lens: Vec<f64> = merged.episodes.iter().map(|e| e.len as f64).collect();
        let mean_episode_len = mean_std(&lens).0;
        let k = losses.len() as f64;
        let avg = |f: fn(&LossComponents) -> f64| losses.iter().map(f).sum::<f64>() / k;
        let row = IterationMetrics {
            iteration: self.iteration,
            mean_reward,
            std_reward,
            mean_episode_len,
            policy_loss: avg(|l| l.policy),
            value_loss: avg(|l| l.value),
            entropy: avg(|l| l.entropy),
            kl: avg(|l| l.kl),
            wall_time_s: if self.config.deterministic {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            },
        };
        self.iteration += 1;
        Ok(row)
    }

    /// Greedy evaluation on this run's evaluation seeds.
    pub fn evaluate(&self, n_episodes: usize) -> Result<EvalResult> {
        let seeds = eval_seeds(self.config.seed, n_episodes);
        self.pool
            .install(|| evaluate(&self.policies, &self.env, &seeds))
    }

    /// Uniform-random play on the same evaluation seeds.
    pub fn random_baseline(&self, n_episodes: usize) -> Result<EvalResult> {
        let seeds = eval_seeds(self.config.seed, n_episodes);
        self.pool.install(|| random_baseline(&self.env, &seeds))
    }

    /// Writes `checkpoints/iter_XXXXXX` under `output_dir` and repoints
    /// `LATEST` at it. The directory is complete before the pointer moves.
    pub fn save_checkpoint(&self, output_dir: &Path) -> Result<PathBuf> {
        let root = output_dir.join(CHECKPOINT_DIR);
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let name = checkpoint_name(self.iteration);
        let final_dir = root.join(&name);
        let tmp = root.join(format!("{name}.partial"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
        for (k, learner) in self.learners.iter().enumerate() {
            let ck = LearnerCheckpoint {
                format_version: RUN_STATE_VERSION,
                actor_spec: learner.model.actor.spec().clone(),
                critic_spec: learner.model.critic.as_ref().map(|c| c.spec().clone()),
                params: learner.params.clone(),
                optimizer: learner.optimizer.clone(),
                rng: self.learner_rngs[k].clone(),
            };
            write_json(&tmp.join(format!("learner_{k}.json")), &ck)?;
        }
        let state = RunState {
            format_version: RUN_STATE_VERSION,
            iteration: self.iteration,
            config: self.config.clone(),
            workers: self.workers.clone(),
            env: self.env.clone(),
        };
        write_json(&tmp.join("run_state.json"), &state)?;
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir).map_err(io_err(&final_dir))?;
        }
        fs::rename(&tmp, &final_dir).map_err(io_err(&final_dir))?;
        let pointer_tmp = root.join(format!("{LATEST_FILE}.tmp"));
        fs::write(&pointer_tmp, &name).map_err(io_err(&pointer_tmp))?;
        let pointer = root.join(LATEST_FILE);
        fs::rename(&pointer_tmp, &pointer).map_err(io_err(&pointer))?;
        Ok(final_dir)
    }

    /// Trains until `iterations` iterations have completed in total,
    /// appending metrics and evaluations under `output_dir` when set.
    /// `on_row` sees every metrics row as it is produced.
    pub fn run<F: FnMut(&IterationMetrics)>(
        &mut self,
        iterations: usize,
        mut on_row: F,
    ) -> Result<Vec<IterationMetrics>> {
        let out = self.config.output_dir.clone();
        if let Some(dir) = &out {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let metrics = dir.join(METRICS_FILE);
            if self.iteration == 0 || !metrics.exists() {
                write_metrics_header(&metrics).map_err(csv_err(&metrics))?;
            }
            let eval = dir.join(EVAL_FILE);
            if self.iteration == 0 || !eval.exists() {
                write_eval_header(&eval)?;
            }
            // Untrained reference point.
            if self.iteration == 0 && self.config.eval_every > 0 {
                let r = self.evaluate(self.config.eval_episodes)?;
                append_eval(&eval, 0, &r)?;
            }
        }
        let mut rows = Vec::new();
        while self.iteration < iterations {
            let row = self.train_iteration()?;
            on_row(&row);
            if let Some(dir) = &out {
                let metrics = dir.join(METRICS_FILE);
                append_metrics(&metrics, &row).map_err(csv_err(&metrics))?;
                let every = self.config.eval_every;
                if every > 0 && self.iteration % every == 0 {
                    let r = self.evaluate(self.config.eval_episodes)?;
                    append_eval(&dir.join(EVAL_FILE), self.iteration, &r)?;
                }
                let every = self.config.checkpoint_every;
                if (every > 0 && self.iteration % every == 0) || self.iteration == iterations {
                    self.save_checkpoint(dir)?;
                }
            }
            rows.push(row);
        }
        Ok(rows)
    }
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RuntimeError::Config(format!("cannot start worker pool: {e}")))
}

pub const EVAL_COLUMNS: [&str; 4] = ["iteration", "episodes", "mean_episode_len", "mean_return"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: usize,
    pub episodes: usize,
    pub mean_episode_len: f64,
    pub mean_return: f64,
}

fn write_eval_header(path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(EVAL_COLUMNS).map_err(csv_err(path))?;
    w.flush().map_err(io_err(path))
}

fn append_eval(path: &Path, iteration: usize, r: &EvalResult) -> Result<()> {
    let f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    w.serialize(EvalRow {
        iteration,
        episodes: r.episodes,
        mean_episode_len: r.mean_episode_len,
        mean_return: r.mean_return,
    })
    .map_err(csv_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_eval(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<csv::Result<Vec<_>>>()
        .map_err(csv_err(path))
}

fn truncate_eval(path: &Path, up_to_iteration: usize) -> Result<()> {
    let rows = read_eval(path)?;
    write_eval_header(path)?;
    for row in rows.into_iter().filter(|r| r.iteration <= up_to_iteration) {
        let r = EvalResult {
            episodes: row.episodes,
            mean_episode_len: row.mean_episode_len,
            mean_return: row.mean_return,
        };
        append_eval(path, row.iteration, &r)?;
    }
    Ok(())
}
