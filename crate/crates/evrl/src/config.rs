//! Run configuration shared by the CLI flags and the optional TOML file.

use std::path::Path;

use clap::{Args, ValueEnum};
use evrl_core::env::{EnvConfig, Task};
use evrl_core::qnet::{AdamConfig, NetworkConfig};
use evrl_core::trainer::TrainerConfig;
use serde::Deserialize;

/// Task selector for flags and files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskName {
    /// Stop before a falling sphere.
    Avoidance,
    /// Keep a thrown sphere centered.
    Tracking,
}

impl From<TaskName> for Task {
    fn from(t: TaskName) -> Task {
        match t {
            TaskName::Avoidance => Task::Avoidance,
            TaskName::Tracking => Task::Tracking,
        }
    }
}

/// Every tunable of a run. Unset fields fall back to the file, then to the
/// module defaults.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Task to run [default: avoidance].
    #[arg(long, value_enum)]
    pub task: Option<TaskName>,
    /// Sensor width in pixels [default: 240].
    #[arg(long)]
    pub width: Option<usize>,
    /// Sensor height in pixels [default: 180].
    #[arg(long)]
    pub height: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Impulse-noise probability per pixel and frame [default: 0.001].
    #[arg(long)]
    pub noise: Option<f64>,
    /// Event threshold on log intensity [default: 0.2].
    #[arg(long)]
    pub threshold: Option<f32>,
    /// Episode length limit [default: 100].
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Discount factor [default: 0.95].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Exploration rate [default: 0.1].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Minibatch size [default: 32].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Environment steps before the first update [default: 1000].
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Gradient steps between target syncs [default: 200].
    #[arg(long)]
    pub target_update_interval: Option<u64>,
    /// Episodes between greedy evaluations, 0 to disable [default: 25].
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Episodes per greedy evaluation [default: 10].
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    /// Replay capacity [default: 1000000].
    #[arg(long)]
    pub replay_capacity: Option<usize>,
    /// Convolution stride [default: 4].
    #[arg(long)]
    pub stride: Option<usize>,
    /// Convolution padding [default: 1].
    #[arg(long)]
    pub padding: Option<usize>,
    /// Hidden units of the first fully connected layer [default: 100].
    #[arg(long)]
    pub hidden: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $over:ident, $($f:ident),*) => {
        RunConfig { $($f: $over.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    /// Reads a TOML file.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: RunConfig) -> RunConfig {
        let base = self;
        overlay!(
            base,
            over,
            task,
            width,
            height,
            seed,
            episodes,
            noise,
            threshold,
            max_steps,
            gamma,
            epsilon,
            learning_rate,
            batch_size,
            warmup_steps,
            target_update_interval,
            eval_every,
            eval_episodes,
            replay_capacity,
            stride,
            padding,
            hidden
        )
    }

    /// Selected task.
    pub fn task(&self) -> Task {
        self.task.unwrap_or(TaskName::Avoidance).into()
    }

    /// Seed.
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Environment configuration, validated.
    pub fn env_config(&self) -> evrl_core::Result<EnvConfig> {
        let mut c = EnvConfig::new(self.task());
        if self.width.is_some() || self.height.is_some() {
            c = c.with_resolution(
                self.width.unwrap_or(c.camera.width),
                self.height.unwrap_or(c.camera.height),
            );
        }
        if let Some(p) = self.noise {
            c.emulator.noise_prob = p;
        }
        if let Some(t) = self.threshold {
            c.emulator.threshold = t;
        }
        if let Some(m) = self.max_steps {
            c.max_steps = m;
        }
        c.validate()?;
        Ok(c)
    }

    /// Network configuration for the environment's input and action count, validated.
    pub fn network_config(&self, env: &EnvConfig) -> evrl_core::Result<NetworkConfig> {
        let mut n = NetworkConfig::new(env.camera.width, env.camera.height, env.task.actions().len());
        if let Some(s) = self.stride {
            n.stride = s;
        }
        if let Some(p) = self.padding {
            n.padding = p;
        }
        if let Some(h) = self.hidden {
            n.hidden = h;
        }
        n.validate()?;
        Ok(n)
    }

    /// Trainer configuration, validated.
    pub fn trainer_config(&self) -> evrl_core::Result<TrainerConfig> {
        let d = TrainerConfig::default();
        let c = TrainerConfig {
            gamma: self.gamma.unwrap_or(d.gamma),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            target_update_interval: self.target_update_interval.unwrap_or(d.target_update_interval),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            warmup_steps: self.warmup_steps.unwrap_or(d.warmup_steps),
            episodes: self.episodes.unwrap_or(d.episodes),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            eval_episodes: self.eval_episodes.unwrap_or(d.eval_episodes),
            seed: self.seed(),
            replay_capacity: self.replay_capacity.unwrap_or(d.replay_capacity),
            adam: AdamConfig {
                learning_rate: self.learning_rate.unwrap_or(d.adam.learning_rate),
                ..d.adam
            },
        };
        c.validate()?;
        Ok(c)
    }
}
