//! Two-agent cooperative environments.

mod observation;
pub mod pong;
pub mod record;
pub mod stub;

pub use observation::Observation;
pub use pong::{EnvConfig, EnvState, PongEnv};
pub use stub::ConstantEnv;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Paddle command: `-1` moves toward row 0, `+1` away from it.
pub type Action = i8;

pub const ACTIONS: [Action; 3] = [-1, 0, 1];

/// Maps a policy-head index in `0..3` onto an [`Action`].
pub fn action_from_index(index: usize) -> Action {
    ACTIONS[index]
}

pub fn action_index(action: Action) -> usize {
    (action + 1) as usize
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode is over; reset before stepping")]
    EpisodeOver,
    #[error("action {0} is not one of -1, 0, 1")]
    InvalidAction(Action),
    #[error("agent id {0} is not 0 or 1")]
    InvalidAgent(usize),
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTransition {
    pub observations: [Observation; 2],
    pub actions: [Action; 2],
    pub rewards: [f64; 2],
    pub done: bool,
}

/// A cooperative environment with two agents, each seeing its own frame.
///
/// Implementations are plain values so rollout workers can own them and
/// checkpoints can capture them mid-episode.
pub trait CoopEnv: Clone + Send + Sync + Serialize + DeserializeOwned + 'static {
    /// Shape of one agent's frame.
    fn obs_shape(&self) -> (usize, usize);

    fn max_cycles(&self) -> usize;

    fn reset(&mut self, seed: u64) -> [Observation; 2];

    fn step(&mut self, actions: [Action; 2]) -> Result<JointTransition, EnvError>;

    fn observations(&self) -> [Observation; 2];
}
