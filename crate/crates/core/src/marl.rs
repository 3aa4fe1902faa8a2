//! Policy ownership and experience routing for the three training strategies.
//!
//! * `joint`: one policy sees the whole frame and picks one of 9 joint actions.
//! * `shared`: both agents act through one actor (own half-frame each); a
//!   centralized critic scores the whole frame.
//! * `independent`: each agent owns a separate actor-critic over its half.

use crate::env::{action_from_index, action_index, Action, Observation};
use crate::policy::{greedy_action, sample_action, ModelSpec, Network, PolicyError};
use crate::ppo::{ActorCritic, PpoError, Step, Trajectory};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

pub const N_AGENTS: usize = 2;
pub const ACTIONS_PER_AGENT: usize = 3;
pub const JOINT_ACTIONS: usize = ACTIONS_PER_AGENT * ACTIONS_PER_AGENT;

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("model does not fit the {strategy} strategy: {reason}")]
    Incompatible {
        strategy: StrategyKind,
        reason: String,
    },
    #[error("observation scope mismatch: {0}")]
    Scope(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
}

pub type Result<T> = std::result::Result<T, MarlError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Joint,
    Shared,
    Independent,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [Self::Joint, Self::Shared, Self::Independent];

    pub fn name(self) -> &'static str {
        match self {
            Self::Joint => "joint",
            Self::Shared => "shared",
            Self::Independent => "independent",
        }
    }

    pub fn n_learners(self) -> usize {
        match self {
            Self::Independent => N_AGENTS,
            Self::Joint | Self::Shared => 1,
        }
    }

    pub fn actor_actions(self) -> usize {
        match self {
            Self::Joint => JOINT_ACTIONS,
            _ => ACTIONS_PER_AGENT,
        }
    }

    /// Actor input shape given one agent's `(h, w)` frame.
    pub fn actor_obs_shape(self, half: (usize, usize)) -> (usize, usize) {
        match self {
            Self::Joint => full_shape(half),
            _ => half,
        }
    }
}

fn full_shape(half: (usize, usize)) -> (usize, usize) {
    (half.0, 2 * half.1)
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                format!("unknown strategy {s:?} (expected joint, shared or independent)")
            })
    }
}

/// Joint action index for per-agent head indices: `a₁·3 + a₂`.
pub fn encode_joint(first: usize, second: usize) -> usize {
    first * ACTIONS_PER_AGENT + second
}

pub fn decode_joint(index: usize) -> (usize, usize) {
    (index / ACTIONS_PER_AGENT, index % ACTIONS_PER_AGENT)
}

/// Whole frame: the left agent's half followed by the right agent's.
pub fn full_frame(obs: &[Observation; 2]) -> Observation {
    obs[0].hconcat(&obs[1])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ownership {
    pub learner: usize,
    pub agents: Vec<usize>,
}

/// Networks plus the read-only parameter snapshot workers act with.
#[derive(Debug, Clone)]
pub struct PolicySet {
    pub strategy: StrategyKind,
    pub models: Vec<ActorCritic>,
    pub snapshot: Vec<Arc<Vec<f64>>>,
    pub ownership: Vec<Ownership>,
}

/// Builds the networks a strategy needs from a per-agent model template and
/// initializes their parameters.
pub fn make_policies<R: Rng + ?Sized>(
    strategy: StrategyKind,
    model: &ModelSpec,
    half_obs: (usize, usize),
    rng: &mut R,
) -> Result<PolicySet> {
    let expected_actions = strategy.actor_actions();
    if model.n_actions != expected_actions {
        return Err(MarlError::Incompatible {
            strategy,
            reason: format!(
                "policy head has {} actions, strategy needs {expected_actions}",
                model.n_actions
            ),
        });
    }
    let expected_obs = strategy.actor_obs_shape(half_obs);
    if model.obs_shape != expected_obs {
        return Err(MarlError::Incompatible {
            strategy,
            reason: format!(
                "actor input is {:?}, strategy needs {:?}",
                model.obs_shape, expected_obs
            ),
        });
    }
    let actor = || Network::new(model);
    let (models, ownership) = match strategy {
        StrategyKind::Joint => (
            vec![ActorCritic {
                actor: actor()?,
                critic: None,
            }],
            vec![Ownership {
                learner: 0,
                agents: vec![0, 1],
            }],
        ),
        StrategyKind::Shared => {
            let critic = Network::new(&model.with_io(full_shape(half_obs), model.n_actions))?;
            (
                vec![ActorCritic {
                    actor: actor()?,
                    critic: Some(critic),
                }],
                vec![Ownership {
                    learner: 0,
                    agents: vec![0, 1],
                }],
            )
        }
        StrategyKind::Independent => (
            vec![
                ActorCritic {
                    actor: actor()?,
                    critic: None,
                },
                ActorCritic {
                    actor: actor()?,
                    critic: None,
                },
            ],
            (0..N_AGENTS)
                .map(|i| Ownership {
                    learner: i,
                    agents: vec![i],
                })
                .collect(),
        ),
    };
    let snapshot = models
        .iter()
        .map(|m| Arc::new(m.init_params(rng)))
        .collect();
    Ok(PolicySet {
        strategy,
        models,
        snapshot,
        ownership,
    })
}

impl PolicySet {
    pub fn learner_of(&self, agent: usize) -> usize {
        self.ownership
            .iter()
            .find(|o| o.agents.contains(&agent))
            .map(|o| o.learner)
            .expect("every agent has an owner")
    }

    /// Actor parameters agent `agent` acts with. Under `shared` both agents
    /// get the same slice of the same allocation.
    pub fn actor_view(&self, agent: usize) -> &[f64] {
        let l = self.learner_of(agent);
        self.models[l].split(&self.snapshot[l]).0
    }

    /// Swaps in new parameters for every learner at once.
    pub fn publish(&mut self, params: Vec<Vec<f64>>) {
        assert_eq!(params.len(), self.snapshot.len());
        self.snapshot = params.into_iter().map(Arc::new).collect();
    }

    /// Order-sensitive hash of every snapshot bit.
    pub fn checksum(&self) -> u64 {
        self.snapshot
            .iter()
            .flat_map(|p| p.iter())
            .fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
                (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// One actor decision, routed to `learner`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub learner: usize,
    /// `None` for the joint policy, which acts for both agents at once.
    pub agent: Option<usize>,
    pub action: usize,
    pub log_prob: f64,
    pub logits: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOutcome {
    pub actions: [Action; 2],
    pub decisions: Vec<Decision>,
    /// `log Pr(a | s)` of the joint action.
    pub joint_log_prob: f64,
}

/// Picks the joint action for the current frames.
pub fn act<R: Rng + ?Sized>(
    policies: &PolicySet,
    observations: &[Observation; 2],
    rng: &mut R,
    mode: ActMode,
) -> Result<ActOutcome> {
    let pick = |out: &crate::policy::PolicyOutput, rng: &mut R| match mode {
        ActMode::Sample => sample_action(out, rng),
        ActMode::Greedy => greedy_action(out),
    };
    match policies.strategy {
        StrategyKind::Joint => {
            let model = &policies.models[0];
            let frame = full_frame(observations);
            let out = model.actor.forward(policies.actor_view(0), &frame)?;
            let (a, lp) = pick(&out, rng);
            let (a1, a2) = decode_joint(a);
            Ok(ActOutcome {
                actions: [action_from_index(a1), action_from_index(a2)],
                decisions: vec![Decision {
                    learner: 0,
                    agent: None,
                    action: a,
                    log_prob: lp,
                    logits: out.logits,
                    value: out.value,
                }],
                joint_log_prob: lp,
            })
        }
        StrategyKind::Shared | StrategyKind::Independent => {
            let shared_value = match policies.strategy {
                StrategyKind::Shared => {
                    let model = &policies.models[0];
                    let (_, critic_params) = model.split(&policies.snapshot[0]);
                    let critic = model.critic.as_ref().expect("shared strategy has a critic");
                    Some(
                        critic
                            .forward(critic_params, &full_frame(observations))?
                            .value,
                    )
                }
                _ => None,
            };
            let mut decisions = Vec::with_capacity(N_AGENTS);
            let mut actions = [0; 2];
            for (agent, obs) in observations.iter().enumerate() {
                let learner = policies.learner_of(agent);
                let out = policies.models[learner]
                    .actor
                    .forward(policies.actor_view(agent), obs)?;
                let (a, lp) = pick(&out, rng);
                actions[agent] = action_from_index(a);
                decisions.push(Decision {
                    learner,
                    agent: Some(agent),
                    action: a,
                    log_prob: lp,
                    value: shared_value.unwrap_or(out.value),
                    logits: out.logits,
                });
            }
            let joint_log_prob = decisions[0].log_prob + decisions[1].log_prob;
            Ok(ActOutcome {
                actions,
                decisions,
                joint_log_prob,
            })
        }
    }
}

/// Value estimate of every decision stream at `observations`, in the order
/// [`act`] emits decisions. Used to bootstrap cut trajectories.
pub fn stream_values(policies: &PolicySet, observations: &[Observation; 2]) -> Result<Vec<f64>> {
    match policies.strategy {
        StrategyKind::Joint => {
            let model = &policies.models[0];
            Ok(vec![
                model
                    .actor
                    .forward(policies.actor_view(0), &full_frame(observations))?
                    .value,
            ])
        }
        StrategyKind::Shared => {
            let model = &policies.models[0];
            let (_, critic_params) = model.split(&policies.snapshot[0]);
            let critic = model.critic.as_ref().expect("shared strategy has a critic");
            let v = critic
                .forward(critic_params, &full_frame(observations))?
                .value;
            Ok(vec![v; N_AGENTS])
        }
        StrategyKind::Independent => (0..N_AGENTS)
            .map(|i| {
                Ok(policies.models[i]
                    .actor
                    .forward(policies.actor_view(i), &observations[i])?
                    .value)
            })
            .collect(),
    }
}

/// A single environment step as seen by every decision stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointStep {
    /// Frames the decisions were made on.
    pub observations: [Observation; 2],
    pub actions: [Action; 2],
    pub decisions: Vec<Decision>,
    pub rewards: [f64; 2],
    pub done: bool,
}

/// Contiguous joint steps of one episode. `bootstrap` holds one value per
/// decision stream when the piece was cut short; it is empty when the
/// episode finished.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub steps: Vec<JointStep>,
    pub bootstrap: Vec<f64>,
}

/// Splits joint experience into per-learner trajectories.
pub fn route_experience(
    strategy: StrategyKind,
    pieces: &[JointTrajectory],
) -> Result<Vec<Vec<Trajectory>>> {
    let mut out: Vec<Vec<Trajectory>> = vec![Vec::new(); strategy.n_learners()];
    let n_streams = match strategy {
        StrategyKind::Joint => 1,
        _ => N_AGENTS,
    };
    for piece in pieces.iter().filter(|p| !p.steps.is_empty()) {
        let mut streams: Vec<Trajectory> = (0..n_streams)
            .map(|s| Trajectory {
                steps: Vec::with_capacity(piece.steps.len()),
                bootstrap_value: piece.bootstrap.get(s).copied().unwrap_or(0.0),
            })
            .collect();
        for js in &piece.steps {
            if js.decisions.len() != n_streams {
                return Err(MarlError::Scope(format!(
                    "{strategy} step carries {} decisions, expected {n_streams}",
                    js.decisions.len()
                )));
            }
            let critic_obs =
                (strategy == StrategyKind::Shared).then(|| full_frame(&js.observations));
            for (s, d) in js.decisions.iter().enumerate() {
                let (obs, reward) = match strategy {
                    StrategyKind::Joint => (
                        full_frame(&js.observations),
                        0.5 * (js.rewards[0] + js.rewards[1]),
                    ),
                    _ => (js.observations[s].clone(), js.rewards[s]),
                };
                streams[s].steps.push(Step {
                    obs,
                    critic_obs: critic_obs.clone(),
                    action: d.action,
                    reward,
                    log_prob_old: d.log_prob,
                    logits_old: d.logits.clone(),
                    value_pred: d.value,
                    done: js.done,
                });
            }
        }
        for (s, traj) in streams.into_iter().enumerate() {
            let learner = match strategy {
                StrategyKind::Independent => s,
                _ => 0,
            };
            out[learner].push(traj);
        }
    }
    Ok(out)
}

/// Head index each agent took in `step`, whatever the strategy.
pub fn agent_action_indices(step: &JointStep) -> [usize; 2] {
    [action_index(step.actions[0]), action_index(step.actions[1])]
}
