//! Trivial environment with a fixed reward and episode length, for exercising
//! the training loop without game physics.

use super::{Action, CoopEnv, EnvError, JointTransition, Observation};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEnv {
    pub reward: f64,
    pub episode_len: usize,
    pub obs_size: usize,
    pub t: usize,
    /// Seed of the current episode; the frames are filled with a value
    /// derived from it so different episodes look different.
    pub seed: u64,
}

impl ConstantEnv {
    pub fn new(reward: f64, episode_len: usize, obs_size: usize) -> Self {
        Self {
            reward,
            episode_len,
            obs_size,
            t: 0,
            seed: 0,
        }
    }

    fn frame(&self, agent: usize) -> Observation {
        let base = (self.seed % 7) as f64 / 7.0;
        let v = (base + 0.1 * agent as f64 + 0.01 * self.t as f64).fract();
        Observation::filled(self.obs_size, self.obs_size, v)
    }
}

impl CoopEnv for ConstantEnv {
    fn obs_shape(&self) -> (usize, usize) {
        (self.obs_size, self.obs_size)
    }

    fn max_cycles(&self) -> usize {
        self.episode_len
    }

    fn reset(&mut self, seed: u64) -> [Observation; 2] {
        self.t = 0;
        self.seed = seed;
        self.observations()
    }

    fn step(&mut self, actions: [Action; 2]) -> Result<JointTransition, EnvError> {
        if self.t >= self.episode_len {
            return Err(EnvError::EpisodeOver);
        }
        if let Some(&bad) = actions.iter().find(|a| !(-1..=1).contains(*a)) {
            return Err(EnvError::InvalidAction(bad));
        }
        self.t += 1;
        Ok(JointTransition {
            observations: self.observations(),
            actions,
            rewards: [self.reward; 2],
            done: self.t >= self.episode_len,
        })
    }

    fn observations(&self) -> [Observation; 2] {
        [self.frame(0), self.frame(1)]
    }
}
