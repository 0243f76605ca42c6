//! Per-stage latency of the observation and inference pipeline.

use std::time::Instant;

use evrl_core::env::{EnvConfig, Environment, EventEnv};
use evrl_core::event::{emulate_frame, inject_impulse_noise};
use evrl_core::qnet::{argmax, QNetwork};
use evrl_core::trainer::episode_seed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Nearest-rank percentiles in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Percentiles {
    /// Median.
    pub p50: f64,
    /// 90th percentile.
    pub p90: f64,
    /// 99th percentile.
    pub p99: f64,
}

/// Nearest-rank percentile `q` in (0, 100] of unsorted samples.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    assert!(!samples.is_empty(), "no samples");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl Percentiles {
    /// Percentiles of the samples.
    pub fn of(samples: &[f64]) -> Self {
        Percentiles {
            p50: percentile(samples, 50.0),
            p90: percentile(samples, 90.0),
            p99: percentile(samples, 99.0),
        }
    }
}

/// Raw per-step timings, microseconds.
#[derive(Debug, Clone, Default)]
pub struct StageSamples {
    /// Rendering the current state.
    pub render: Vec<f64>,
    /// Frame differencing.
    pub emulate: Vec<f64>,
    /// Impulse noise.
    pub noise: Vec<f64>,
    /// Eval-mode forward and argmax.
    pub forward: Vec<f64>,
    /// The whole step, timed separately.
    pub total: Vec<f64>,
}

/// Percentiles of every stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchReport {
    /// Steps measured.
    pub steps: usize,
    /// Rendering.
    pub render: Percentiles,
    /// Frame differencing.
    pub emulate: Percentiles,
    /// Impulse noise.
    pub noise: Percentiles,
    /// Forward pass.
    pub forward: Percentiles,
    /// Whole step.
    pub total: Percentiles,
}

impl StageSamples {
    /// Summarizes the samples.
    pub fn report(&self) -> BenchReport {
        BenchReport {
            steps: self.total.len(),
            render: Percentiles::of(&self.render),
            emulate: Percentiles::of(&self.emulate),
            noise: Percentiles::of(&self.noise),
            forward: Percentiles::of(&self.forward),
            total: Percentiles::of(&self.total),
        }
    }
}

fn micros(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e6
}

/// Times `steps` pipeline steps (render, emulate, noise, forward) while the
/// greedy policy drives the environment.
pub fn bench_pipeline(
    config: EnvConfig,
    network: &QNetwork<f32>,
    steps: usize,
    seed: u64,
) -> evrl_core::Result<StageSamples> {
    let mut env = EventEnv::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episode = 0;
    env.reset(episode_seed(seed, episode));
    let mut prev = env.render_current();
    let mut s = StageSamples::default();
    for _ in 0..steps {
        let start = Instant::now();
        let t = Instant::now();
        let curr = env.render_current();
        s.render.push(micros(t));
        let t = Instant::now();
        let mut obs = emulate_frame(&prev, &curr, config.emulator.threshold)?;
        s.emulate.push(micros(t));
        let t = Instant::now();
        inject_impulse_noise(&mut obs, config.emulator.noise_prob, &mut rng);
        s.noise.push(micros(t));
        let t = Instant::now();
        let action = argmax(&network.q_values(&obs)?).expect("at least one action");
        s.forward.push(micros(t));
        s.total.push(micros(start));

        prev = curr;
        if env.step(action)?.done {
            episode += 1;
            env.reset(episode_seed(seed, episode));
            prev = env.render_current();
        }
    }
    Ok(s)
}
