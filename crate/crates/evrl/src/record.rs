//! Simulator rollouts turned into event streams for replay.

use evrl_core::env::{episode_return, Environment, EventEnv, StepResult};
use evrl_core::event::{Event, EventFrame, Polarity};
use evrl_core::trainer::{EpisodeStats, TerminalCause};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::io::EventStream;

/// One recorded episode.
#[derive(Debug, Clone)]
pub struct RecordedEpisode {
    /// Events of every acted-on observation, window `n` spanning `[n·dt, (n+1)·dt)`.
    pub stream: EventStream,
    /// Observation each action was chosen from.
    pub frames: Vec<EventFrame>,
    /// Action chosen in each window.
    pub actions: Vec<usize>,
    /// Every step result.
    pub steps: Vec<StepResult>,
    /// Episode summary.
    pub stats: EpisodeStats,
}

/// One event per nonzero pixel, stamped uniformly inside `[start, start + dt)`
/// and sorted by time.
pub fn frame_to_events<R: Rng + ?Sized>(frame: &EventFrame, start: u64, dt_us: u64, rng: &mut R) -> Vec<Event> {
    let w = frame.width();
    let mut events: Vec<Event> = frame
        .values()
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| {
            let p = Polarity::from_i8(v)?;
            Some(Event::new(start + rng.gen_range(0..dt_us), (i % w) as u16, (i / w) as u16, p))
        })
        .collect();
    events.sort_by_key(|e| e.t);
    events
}

/// Rolls out `policy` from `env.reset(seed)` for at most `max_steps` steps and
/// records the observations as an event stream starting at t = 0.
pub fn record_episode<P>(
    env: &mut EventEnv,
    seed: u64,
    episode: usize,
    dt_us: u64,
    max_steps: Option<usize>,
    mut policy: P,
) -> evrl_core::Result<RecordedEpisode>
where
    P: FnMut(&EventFrame) -> evrl_core::Result<usize>,
{
    let (w, h) = env.observation_size();
    let mut stamp_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let mut obs = env.reset(seed);
    let mut out = RecordedEpisode {
        stream: EventStream::empty(w as u16, h as u16),
        frames: Vec::new(),
        actions: Vec::new(),
        steps: Vec::new(),
        stats: EpisodeStats {
            episode,
            return_sum: 0.0,
            steps: 0,
            terminal: TerminalCause::StepLimit,
        },
    };
    let limit = max_steps.unwrap_or(usize::MAX);
    while out.actions.len() < limit {
        let n = out.actions.len() as u64;
        let action = policy(&obs)?;
        out.stream
            .events
            .extend(frame_to_events(&obs, n * dt_us, dt_us, &mut stamp_rng));
        let step = env.step(action)?;
        out.frames.push(obs);
        out.actions.push(action);
        obs = step.observation.clone();
        let done = step.done;
        if done && step.info.collision {
            out.stats.terminal = TerminalCause::Collision;
        }
        out.steps.push(step);
        if done {
            break;
        }
    }
    out.stats.steps = out.actions.len();
    out.stats.return_sum = episode_return(&out.steps.iter().map(|s| s.reward).collect::<Vec<_>>());
    Ok(out)
}
