//! Per-step episode dumps for debugging and replay.

use super::{Action, EnvState};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub ball_x: f64,
    pub ball_y: f64,
    pub paddle_left: f64,
    pub paddle_right: f64,
    pub action_left: Action,
    pub action_right: Action,
    pub reward_left: f64,
    pub reward_right: f64,
}

impl StepRecord {
    /// Record for the step that produced `state`.
    pub fn after(state: &EnvState, actions: [Action; 2], rewards: [f64; 2]) -> Self {
        Self {
            step: state.t,
            ball_x: state.ball_pos[0],
            ball_y: state.ball_pos[1],
            paddle_left: state.paddle_pos[0],
            paddle_right: state.paddle_pos[1],
            action_left: actions[0],
            action_right: actions[1],
            reward_left: rewards[0],
            reward_right: rewards[1],
        }
    }
}

pub fn write_episode_csv<W: Write>(out: W, records: &[StepRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episode_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<StepRecord>> {
    csv::Reader::from_reader(input).deserialize().collect()
}
