//! Line-delimited JSON logs.

use std::io::{self, Write};

use evrl_core::env::{Action, StepInfo};
use evrl_core::trainer::{EvalRecord, TrainEpisode};
use serde::{Deserialize, Serialize};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrainRecord {
    /// A finished training episode.
    Episode {
        /// Episode index.
        episode: usize,
        /// Undiscounted return.
        return_sum: f64,
        /// Steps taken.
        steps: usize,
        /// `collision` or `step_limit`.
        terminal: String,
        /// Mean loss of this episode's updates.
        mean_loss: Option<f64>,
        /// Exploration rate.
        epsilon: f64,
        /// Gradient steps so far.
        grad_steps: u64,
        /// Wall-clock time per environment step, microseconds.
        wall_us_per_step: f64,
    },
    /// A periodic greedy evaluation.
    Eval {
        /// Training episodes completed.
        after_episode: usize,
        /// Mean return.
        mean: f64,
        /// Standard error of the mean.
        std_error: f64,
        /// Per-episode returns.
        returns: Vec<f64>,
    },
}

impl TrainRecord {
    /// Record of a training episode.
    pub fn episode(e: &TrainEpisode, wall_us_per_step: f64) -> Self {
        TrainRecord::Episode {
            episode: e.stats.episode,
            return_sum: e.stats.return_sum,
            steps: e.stats.steps,
            terminal: e.stats.terminal.name().into(),
            mean_loss: e.mean_loss,
            epsilon: e.epsilon,
            grad_steps: e.grad_steps,
            wall_us_per_step,
        }
    }

    /// Record of an evaluation.
    pub fn eval(e: &EvalRecord) -> Self {
        TrainRecord::Eval {
            after_episode: e.after_episode,
            mean: e.summary.mean,
            std_error: e.summary.std_error,
            returns: e.episodes.iter().map(|s| s.return_sum).collect(),
        }
    }
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Episode index.
    pub episode: usize,
    /// Step index within the episode, from 1.
    pub step: usize,
    /// Action name.
    pub action: String,
    /// Reward of the step.
    pub reward: f64,
    /// Agent–sphere distance, m.
    pub distance: f64,
    /// Bearing to the sphere, rad.
    pub bearing: f64,
    /// The agent touched the sphere.
    pub collision: bool,
    /// The episode ended.
    pub done: bool,
}

impl StepRecord {
    /// Record of one environment step.
    pub fn new(episode: usize, step: usize, action: Action, reward: f64, info: &StepInfo, done: bool) -> Self {
        StepRecord {
            episode,
            step,
            action: action.name().into(),
            reward,
            distance: info.distance,
            bearing: info.bearing,
            collision: info.collision,
            done,
        }
    }
}

/// Writes `value` as one JSON line.
pub fn write_line<W: Write + ?Sized, T: Serialize>(w: &mut W, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}
