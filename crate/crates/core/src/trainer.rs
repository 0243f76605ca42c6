//! Double DQN: ε-greedy acting, uniform replay, online-selects /
//! target-evaluates bootstrap targets, periodic target sync, and greedy
//! evaluation reporting the undiscounted episode return.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Environment, StepInfo};
use crate::event::EventFrame;
use crate::math::Real;
use crate::qnet::{adam_step, argmax, AdamConfig, AdamState, Mode, NetworkConfig, QNetwork, Tensor};
use crate::{Error, Result};

/// One stored interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Observation the action was chosen from.
    pub state: EventFrame,
    /// Index of the action taken.
    pub action: usize,
    /// Reward received.
    pub reward: f64,
    /// Observation after the step (kept even when `done`).
    pub next_state: EventFrame,
    /// The step ended the episode.
    pub done: bool,
}

/// Event frames are sparse; the buffer keeps only nonzero pixels, with the
/// polarity in the top bit of the pixel index.
#[derive(Debug, Clone)]
struct SparseFrame(Vec<u32>);

const NEGATIVE_BIT: u32 = 1 << 31;

impl SparseFrame {
    fn encode(frame: &EventFrame) -> Self {
        SparseFrame(
            frame
                .values()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0)
                .map(|(i, &v)| if v < 0 { i as u32 | NEGATIVE_BIT } else { i as u32 })
                .collect(),
        )
    }

    fn write_into<T: Real>(&self, out: &mut [T]) {
        out.fill(T::ZERO);
        for &code in &self.0 {
            let i = (code & !NEGATIVE_BIT) as usize;
            out[i] = if code & NEGATIVE_BIT != 0 { -T::ONE } else { T::ONE };
        }
    }

    fn decode(&self, width: usize, height: usize) -> EventFrame {
        let mut values = vec![0i8; width * height];
        for &code in &self.0 {
            let i = (code & !NEGATIVE_BIT) as usize;
            values[i] = if code & NEGATIVE_BIT != 0 { -1 } else { 1 };
        }
        EventFrame::from_values(width, height, values).expect("decoded values are ternary")
    }
}

#[derive(Debug, Clone)]
struct Stored {
    state: SparseFrame,
    action: usize,
    reward: f64,
    next_state: SparseFrame,
    done: bool,
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    dims: Option<(usize, usize)>,
    storage: Vec<Stored>,
    cursor: usize,
}

impl ReplayBuffer {
    /// Empty buffer holding at most `capacity` transitions.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            dims: None,
            storage: Vec::new(),
            cursor: 0,
        }
    }

    /// Maximum number of transitions.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Transitions currently stored.
    pub fn len(&self) -> usize {
        self.storage.len()
    }

    /// Nothing stored yet.
    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Appends a transition, evicting the oldest once full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        let d = (t.state.width(), t.state.height());
        if d != (t.next_state.width(), t.next_state.height()) || *self.dims.get_or_insert(d) != d {
            return Err(Error::invalid("transition frames must share the buffer's dimensions"));
        }
        let stored = Stored {
            state: SparseFrame::encode(&t.state),
            action: t.action,
            reward: t.reward,
            next_state: SparseFrame::encode(&t.next_state),
            done: t.done,
        };
        if self.storage.len() < self.capacity {
            self.storage.push(stored);
        } else {
            self.storage[self.cursor] = stored;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Transition at storage slot `i`.
    pub fn get(&self, i: usize) -> Option<Transition> {
        let (w, h) = self.dims?;
        self.storage.get(i).map(|s| Transition {
            state: s.state.decode(w, h),
            action: s.action,
            reward: s.reward,
            next_state: s.next_state.decode(w, h),
            done: s.done,
        })
    }

    /// Storage slots drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch_size == 0 || self.len() < batch_size {
            return Err(Error::state(format!(
                "cannot sample {batch_size} from a buffer holding {}",
                self.len()
            )));
        }
        Ok((0..batch_size).map(|_| rng.gen_range(0..self.len())).collect())
    }

    /// Transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| self.get(i).expect("index in range"))
            .collect())
    }

    fn batch<T: Real>(&self, indices: &[usize]) -> Minibatch<T> {
        let (w, h) = self.dims.expect("sampled buffer is non-empty");
        let plane = w * h;
        let n = indices.len();
        let mut states = vec![T::ZERO; n * plane];
        let mut next = vec![T::ZERO; n * plane];
        let mut mb = Minibatch {
            states: Tensor::zeros(vec![0]),
            next_states: Tensor::zeros(vec![0]),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
        };
        for (b, &i) in indices.iter().enumerate() {
            let s = &self.storage[i];
            s.state.write_into(&mut states[b * plane..(b + 1) * plane]);
            s.next_state.write_into(&mut next[b * plane..(b + 1) * plane]);
            mb.actions.push(s.action);
            mb.rewards.push(s.reward);
            mb.dones.push(s.done);
        }
        mb.states = Tensor::new(vec![n, 1, h, w], states).expect("sized above");
        mb.next_states = Tensor::new(vec![n, 1, h, w], next).expect("sized above");
        mb
    }
}

struct Minibatch<T> {
    states: Tensor<T>,
    next_states: Tensor<T>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

/// With probability `epsilon` a uniform action, otherwise the argmax with
/// ties going to the lowest index.
pub fn epsilon_greedy<T: Real, R: Rng + ?Sized>(q_values: &[T], epsilon: f64, rng: &mut R) -> Result<usize> {
    if q_values.is_empty() {
        return Err(Error::invalid("no actions to choose from"));
    }
    if rng.gen::<f64>() < epsilon {
        Ok(rng.gen_range(0..q_values.len()))
    } else {
        Ok(argmax(q_values).expect("non-empty"))
    }
}

/// Double DQN targets for a batch of next states: the online network picks
/// the action, the target network scores it; terminal rows get the reward.
pub fn double_dqn_targets<T: Real>(
    rewards: &[f64],
    next_states: &Tensor<T>,
    dones: &[bool],
    online: &QNetwork<T>,
    target: &QNetwork<T>,
    gamma: f64,
) -> Result<Vec<T>> {
    let q_online = online.predict(next_states)?;
    let q_target = target.predict(next_states)?;
    if rewards.len() != q_online.shape()[0] || dones.len() != rewards.len() {
        return Err(Error::invalid("rewards, dones and next states must have equal length"));
    }
    Ok(rewards
        .iter()
        .zip(dones)
        .enumerate()
        .map(|(b, (&r, &done))| {
            if done {
                T::from_f64(r)
            } else {
                let a = argmax(q_online.row(b)).expect("at least one action");
                T::from_f64(r) + T::from_f64(gamma) * q_target.row(b)[a]
            }
        })
        .collect())
}

/// Single-transition form of [`double_dqn_targets`].
pub fn double_dqn_target<T: Real>(
    reward: f64,
    next_state: &EventFrame,
    done: bool,
    online: &QNetwork<T>,
    target: &QNetwork<T>,
    gamma: f64,
) -> Result<T> {
    let next = Tensor::from_frames([next_state])?;
    Ok(double_dqn_targets(&[reward], &next, &[done], online, target, gamma)?[0])
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerConfig {
    /// Discount factor.
    pub gamma: f64,
    /// Exploration probability, constant.
    pub epsilon: f64,
    /// Gradient steps between target-network syncs.
    pub target_update_interval: u64,
    /// Minibatch size.
    pub batch_size: usize,
    /// Environment steps collected before the first update.
    pub warmup_steps: usize,
    /// Training episodes.
    pub episodes: usize,
    /// Run a greedy evaluation after every this many episodes (0 disables).
    pub eval_every: usize,
    /// Episodes per greedy evaluation.
    pub eval_episodes: usize,
    /// Master seed.
    pub seed: u64,
    /// Replay buffer capacity.
    pub replay_capacity: usize,
    /// Optimizer settings.
    pub adam: AdamConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.95,
            epsilon: 0.1,
            target_update_interval: 200,
            batch_size: 32,
            warmup_steps: 1000,
            episodes: 500,
            eval_every: 25,
            eval_episodes: 10,
            seed: 0,
            replay_capacity: 1_000_000,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainerConfig {
    /// Checks ranges.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid("epsilon must lie in [0, 1]"));
        }
        if self.target_update_interval == 0 || self.batch_size == 0 || self.replay_capacity == 0 {
            return Err(Error::invalid(
                "target interval, batch size and replay capacity must be positive",
            ));
        }
        if self.batch_size > self.replay_capacity {
            return Err(Error::invalid("batch size exceeds replay capacity"));
        }
        self.adam.validate()
    }
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminalCause {
    /// The agent touched the sphere.
    Collision,
    /// The step limit was reached.
    StepLimit,
}

impl TerminalCause {
    /// Lower-case name.
    pub fn name(self) -> &'static str {
        match self {
            TerminalCause::Collision => "collision",
            TerminalCause::StepLimit => "step_limit",
        }
    }
}

/// Result of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    /// Episode index within its run.
    pub episode: usize,
    /// Undiscounted sum of rewards.
    pub return_sum: f64,
    /// Steps taken.
    pub steps: usize,
    /// Why it ended.
    pub terminal: TerminalCause,
}

/// Mean and standard error of a set of returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    /// Number of episodes.
    pub count: usize,
    /// Mean return.
    pub mean: f64,
    /// Sample standard deviation over `sqrt(count)`; zero for one episode.
    pub std_error: f64,
}

/// Mean and standard error of the episode returns.
pub fn summarize(stats: &[EpisodeStats]) -> Summary {
    let n = stats.len();
    if n == 0 {
        return Summary {
            count: 0,
            mean: 0.0,
            std_error: 0.0,
        };
    }
    let mean = stats.iter().map(|s| s.return_sum).sum::<f64>() / n as f64;
    let std_error = if n > 1 {
        let var = stats.iter().map(|s| (s.return_sum - mean) * (s.return_sum - mean)).sum::<f64>() / (n - 1) as f64;
        libm::sqrt(var / n as f64)
    } else {
        0.0
    };
    Summary { count: n, mean, std_error }
}

/// Everything observed during one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Summary statistics.
    pub stats: EpisodeStats,
    /// Action index chosen at each step.
    pub actions: Vec<usize>,
    /// Reward of each step.
    pub rewards: Vec<f64>,
    /// Diagnostics of each step.
    pub infos: Vec<StepInfo>,
}

/// Runs one episode from `env.reset(seed)`, asking `policy` for an action
/// given each observation.
pub fn rollout<E, P>(env: &mut E, seed: u64, episode: usize, mut policy: P) -> Result<Rollout>
where
    E: Environment + ?Sized,
    P: FnMut(&EventFrame) -> Result<usize>,
{
    let mut obs = env.reset(seed);
    let mut out = Rollout {
        stats: EpisodeStats {
            episode,
            return_sum: 0.0,
            steps: 0,
            terminal: TerminalCause::StepLimit,
        },
        actions: Vec::new(),
        rewards: Vec::new(),
        infos: Vec::new(),
    };
    loop {
        let a = policy(&obs)?;
        let r = env.step(a)?;
        out.actions.push(a);
        out.rewards.push(r.reward);
        out.infos.push(r.info);
        if r.done {
            if r.info.collision {
                out.stats.terminal = TerminalCause::Collision;
            }
            break;
        }
        obs = r.observation;
    }
    out.stats.steps = out.actions.len();
    out.stats.return_sum = crate::env::episode_return(&out.rewards);
    Ok(out)
}

/// Seed of the `i`-th episode of an evaluation with base `seed`.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).gen()
}

/// Greedy (ε = 0) rollouts of `network`.
pub fn evaluate<E: Environment + ?Sized>(
    env: &mut E,
    network: &QNetwork<f32>,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeStats>> {
    (0..episodes)
        .map(|i| rollout(env, episode_seed(seed, i), i, |obs| network.greedy_action(obs)).map(|r| r.stats))
        .collect()
}

/// Uniform-random rollouts, the baseline the learned policy is compared to.
pub fn evaluate_random<E: Environment + ?Sized>(env: &mut E, episodes: usize, seed: u64) -> Result<Vec<EpisodeStats>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let n = env.action_count();
    (0..episodes)
        .map(|i| rollout(env, episode_seed(seed, i), i, |_| Ok(rng.gen_range(0..n))).map(|r| r.stats))
        .collect()
}

/// Per-episode training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainEpisode {
    /// Return, length and terminal cause of the ε-greedy episode.
    pub stats: EpisodeStats,
    /// Mean loss over this episode's gradient steps.
    pub mean_loss: Option<f64>,
    /// Exploration rate in effect.
    pub epsilon: f64,
    /// Gradient steps taken so far.
    pub grad_steps: u64,
}

/// Greedy evaluation run during training.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    /// Training episodes completed before this evaluation.
    pub after_episode: usize,
    /// Per-episode results.
    pub episodes: Vec<EpisodeStats>,
    /// Mean and standard error.
    pub summary: Summary,
}

/// Progress notifications from [`train_with`].
#[derive(Debug, Clone, Copy)]
pub enum TrainEvent<'a> {
    /// A training episode finished.
    Episode(&'a TrainEpisode),
    /// A periodic evaluation finished.
    Evaluation(&'a EvalRecord),
}

/// Trained network and logs.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Online network after the last update.
    pub network: QNetwork<f32>,
    /// One record per training episode.
    pub episodes: Vec<TrainEpisode>,
    /// Periodic greedy evaluations.
    pub evaluations: Vec<EvalRecord>,
    /// Gradient steps taken.
    pub grad_steps: u64,
}

/// [`train_with`] without progress callbacks.
pub fn train<E: Environment + ?Sized>(
    env: &mut E,
    config: &TrainerConfig,
    network: NetworkConfig,
) -> Result<TrainOutcome> {
    train_with(env, config, network, |_| {})
}

/// Runs Double DQN on `env`, deterministic for a given seed.
pub fn train_with<E, F>(env: &mut E, config: &TrainerConfig, net_config: NetworkConfig, mut observer: F) -> Result<TrainOutcome>
where
    E: Environment + ?Sized,
    F: FnMut(TrainEvent<'_>),
{
    config.validate()?;
    net_config.validate()?;
    if (net_config.width, net_config.height) != env.observation_size() || net_config.actions != env.action_count() {
        return Err(Error::invalid(format!(
            "network expects {}x{} with {} actions, environment gives {:?} with {}",
            net_config.width,
            net_config.height,
            net_config.actions,
            env.observation_size(),
            env.action_count()
        )));
    }

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut online = QNetwork::<f32>::new(net_config, &mut master)?;
    let mut target = online.clone();
    let mut adam = AdamState::new(online.params());
    let mut act_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut sample_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let eval_seed: u64 = master.gen();
    let mut replay = ReplayBuffer::new(config.replay_capacity);

    let mut out = TrainOutcome {
        network: online.clone(),
        episodes: Vec::with_capacity(config.episodes),
        evaluations: Vec::new(),
        grad_steps: 0,
    };
    let mut env_steps = 0usize;

    for episode in 0..config.episodes {
        let mut obs = env.reset(master.gen());
        let mut rewards = Vec::new();
        let mut terminal = TerminalCause::StepLimit;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        loop {
            let q = online.q_values(&obs)?;
            let action = epsilon_greedy(&q, config.epsilon, &mut act_rng)?;
            let step = env.step(action)?;
            rewards.push(step.reward);
            env_steps += 1;
            let done = step.done;
            if done && step.info.collision {
                terminal = TerminalCause::Collision;
            }
            replay.push(Transition {
                state: obs,
                action,
                reward: step.reward,
                next_state: step.observation.clone(),
                done,
            })?;
            obs = step.observation;

            if env_steps >= config.warmup_steps && replay.len() >= config.batch_size {
                let idx = replay.sample_indices(config.batch_size, &mut sample_rng)?;
                let mb = replay.batch::<f32>(&idx);
                let targets = double_dqn_targets(&mb.rewards, &mb.next_states, &mb.dones, &online, &target, config.gamma)?;
                let (loss, grads) = online.loss_and_gradients(&mb.states, &mb.actions, &targets, Mode::Train)?;
                adam_step(online.params_mut(), &grads, &mut adam, &config.adam)?;
                out.grad_steps += 1;
                loss_sum += loss as f64;
                loss_count += 1;
                if out.grad_steps % config.target_update_interval == 0 {
                    target.copy_from(&online);
                }
            }
            if done {
                break;
            }
        }
        let record = TrainEpisode {
            stats: EpisodeStats {
                episode,
                return_sum: crate::env::episode_return(&rewards),
                steps: rewards.len(),
                terminal,
            },
            mean_loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
            epsilon: config.epsilon,
            grad_steps: out.grad_steps,
        };
        observer(TrainEvent::Episode(&record));
        out.episodes.push(record);

        if config.eval_every > 0 && config.eval_episodes > 0 && (episode + 1) % config.eval_every == 0 {
            let episodes = evaluate(env, &online, config.eval_episodes, eval_seed)?;
            let record = EvalRecord {
                after_episode: episode + 1,
                summary: summarize(&episodes),
                episodes,
            };
            observer(TrainEvent::Evaluation(&record));
            out.evaluations.push(record);
        }
    }
    out.network = online;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{StepResult, StepInfo};
    use crate::event::Polarity;

    fn frame_with(w: usize, h: usize, k: usize) -> EventFrame {
        let mut f = EventFrame::zeros(w, h);
        f.set(k % w, (k / w) % h, if k % 2 == 0 { Polarity::On } else { Polarity::Off });
        f
    }

    fn transition(k: usize) -> Transition {
        Transition {
            state: frame_with(4, 3, k),
            action: k % 2,
            reward: k as f64,
            next_state: frame_with(4, 3, k + 1),
            done: k % 3 == 0,
        }
    }

    #[test]
    fn replay_evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(3);
        for k in 0..4 {
            buf.push(transition(k)).unwrap();
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| buf.get(i).unwrap().reward).collect();
        assert!(!rewards.contains(&0.0));
        for k in 1..4 {
            assert!(rewards.contains(&(k as f64)));
        }
    }

    #[test]
    fn replay_round_trips_transitions() {
        let mut buf = ReplayBuffer::new(10);
        for k in 0..5 {
            buf.push(transition(k)).unwrap();
        }
        for k in 0..5 {
            assert_eq!(buf.get(k).unwrap(), transition(k));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sample = buf.sample(5, &mut rng).unwrap();
        assert!(sample.iter().all(|t| (0..5).any(|k| transition(k) == *t)));
    }

    #[test]
    fn underfilled_sample_is_state_error() {
        let mut buf = ReplayBuffer::new(10);
        buf.push(transition(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample(2, &mut rng), Err(Error::State(_))));
    }

    #[test]
    fn replay_rejects_mismatched_frames() {
        let mut buf = ReplayBuffer::new(10);
        buf.push(transition(0)).unwrap();
        let mut t = transition(1);
        t.state = EventFrame::zeros(5, 3);
        t.next_state = EventFrame::zeros(5, 3);
        assert!(buf.push(t).is_err());
    }

    #[test]
    fn greedy_without_exploration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(epsilon_greedy(&[0.1f32, 0.7, 0.3], 0.0, &mut rng).unwrap(), 1);
            assert_eq!(epsilon_greedy(&[1.0f32, 1.0], 0.0, &mut rng).unwrap(), 0);
        }
        assert!(epsilon_greedy::<f32, _>(&[], 0.5, &mut rng).is_err());
    }

    #[test]
    fn summary_of_single_episode_has_zero_error() {
        let s = EpisodeStats {
            episode: 0,
            return_sum: -3.5,
            steps: 10,
            terminal: TerminalCause::StepLimit,
        };
        let sum = summarize(&[s]);
        assert_eq!((sum.mean, sum.std_error), (-3.5, 0.0));
        let two = summarize(&[s, EpisodeStats { return_sum: -1.5, ..s }]);
        assert!((two.mean - -2.5).abs() < 1e-12 && (two.std_error - 1.0).abs() < 1e-12);
    }

    /// Two-armed bandit: action 1 pays 1, action 0 pays 0, one step per episode.
    struct Bandit {
        obs: EventFrame,
    }

    impl Environment for Bandit {
        fn action_count(&self) -> usize {
            2
        }
        fn observation_size(&self) -> (usize, usize) {
            (8, 8)
        }
        fn reset(&mut self, _seed: u64) -> EventFrame {
            self.obs.clone()
        }
        fn step(&mut self, action: usize) -> Result<StepResult> {
            Ok(StepResult {
                observation: self.obs.clone(),
                reward: action as f64,
                done: true,
                info: StepInfo {
                    distance: 0.0,
                    bearing: 0.0,
                    collision: false,
                },
            })
        }
    }

    fn bandit() -> Bandit {
        let mut obs = EventFrame::zeros(8, 8);
        obs.set(2, 3, Polarity::On);
        obs.set(5, 5, Polarity::Off);
        Bandit { obs }
    }

    fn bandit_config(episodes: usize) -> TrainerConfig {
        TrainerConfig {
            batch_size: 8,
            warmup_steps: 16,
            episodes,
            eval_every: 0,
            seed: 3,
            replay_capacity: 1000,
            target_update_interval: 20,
            adam: AdamConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn zero_episodes_returns_initial_network() {
        let mut env = bandit();
        let out = train(&mut env, &bandit_config(0), NetworkConfig::new(8, 8, 2)).unwrap();
        assert!(out.episodes.is_empty() && out.evaluations.is_empty());
        let fresh = QNetwork::<f32>::new(NetworkConfig::new(8, 8, 2), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(out.network, fresh);
    }

    #[test]
    fn training_is_reproducible_and_learns_bandit() {
        let cfg = bandit_config(400);
        let a = train(&mut bandit(), &cfg, NetworkConfig::new(8, 8, 2)).unwrap();
        let b = train(&mut bandit(), &cfg, NetworkConfig::new(8, 8, 2)).unwrap();
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.network, b.network);
        let env = bandit();
        assert_eq!(a.network.greedy_action(&env.obs).unwrap(), 1);
    }

    #[test]
    fn mismatched_network_rejected() {
        let r = train(&mut bandit(), &bandit_config(1), NetworkConfig::new(8, 8, 3));
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn evaluations_logged_on_schedule() {
        let cfg = TrainerConfig {
            eval_every: 5,
            eval_episodes: 3,
            ..bandit_config(12)
        };
        let out = train(&mut bandit(), &cfg, NetworkConfig::new(8, 8, 2)).unwrap();
        let at: Vec<usize> = out.evaluations.iter().map(|e| e.after_episode).collect();
        assert_eq!(at, [5, 10]);
        assert!(out.evaluations.iter().all(|e| e.episodes.len() == 3));
    }
}
