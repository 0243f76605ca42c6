//! Step-based environments for the collision-avoidance and tracking tasks.
//!
//! Each step advances the world by `dt`, renders the new state, and emits the
//! thresholded difference against the previous render (plus impulse noise)
//! as the observation.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::event::{emulate_frame, inject_impulse_noise, EmulatorConfig, EventFrame};
use crate::math::wrap_angle;
use crate::scene::{render, Background, CameraModel, IntensityFrame, SceneObject, Vec3, OBJECT_INTENSITY};
use crate::{Error, Result};

/// Gravitational acceleration in m/s².
pub const GRAVITY: f64 = 9.81;

/// Reward given on collision in the avoidance task.
pub const COLLISION_REWARD: f64 = -50.0;

/// Bonus added to the avoidance reward for moving forward.
pub const FORWARD_BONUS: f64 = 0.2;

/// Agent motion primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    /// Drive forward at the configured speed.
    Forward,
    /// Drive backward. Not enabled in either task.
    Backward,
    /// Stand still.
    Stop,
    /// Rotate clockwise in place.
    Right,
    /// Rotate counter-clockwise in place.
    Left,
}

impl Action {
    /// Lower-case name used in logs and on the wire.
    pub fn name(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::Backward => "backward",
            Action::Stop => "stop",
            Action::Right => "right",
            Action::Left => "left",
        }
    }
}

/// The two training tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Stop before a sphere falling in front of the agent.
    Avoidance,
    /// Keep a thrown sphere centered in view.
    Tracking,
}

impl Task {
    /// Enabled actions, indexed by the network's output position.
    pub fn actions(self) -> &'static [Action] {
        match self {
            Task::Avoidance => &[Action::Forward, Action::Stop],
            Task::Tracking => &[Action::Forward, Action::Right, Action::Left],
        }
    }

    /// Lower-case task name.
    pub fn name(self) -> &'static str {
        match self {
            Task::Avoidance => "avoidance",
            Task::Tracking => "tracking",
        }
    }
}

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    /// Lower bound.
    pub lo: f64,
    /// Upper bound.
    pub hi: f64,
}

impl Span {
    /// Builds `[lo, hi]`.
    pub const fn new(lo: f64, hi: f64) -> Self {
        Span { lo, hi }
    }

    /// Uniform sample; returns `lo` for a degenerate span.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    /// `lo <= v <= hi`.
    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::invalid(format!("{what}: invalid range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

/// Agent kinematics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentDynamics {
    /// Speed while driving forward, m/s.
    pub forward_speed: f64,
    /// Yaw rate while turning, rad/s.
    pub turn_rate: f64,
    /// Collision radius, m.
    pub radius: f64,
}

impl Default for AgentDynamics {
    fn default() -> Self {
        AgentDynamics {
            forward_speed: 1.0,
            turn_rate: 60f64.to_radians(),
            radius: 0.15,
        }
    }
}

/// Sampling ranges for the falling sphere of the avoidance task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvoidanceSpawn {
    /// Sphere radius, m.
    pub radius: Span,
    /// Distance ahead of the agent's start, m.
    pub distance: Span,
    /// Sideways offset from the agent's path, m.
    pub lateral: Span,
    /// Center height when released, m.
    pub drop_height: Span,
    /// Step index at which the sphere is released.
    pub trigger_step: Span,
}

impl Default for AvoidanceSpawn {
    fn default() -> Self {
        AvoidanceSpawn {
            radius: Span::new(0.2, 0.5),
            distance: Span::new(1.5, 3.5),
            lateral: Span::new(-0.3, 0.3),
            drop_height: Span::new(1.5, 3.0),
            trigger_step: Span::new(10.0, 50.0),
        }
    }
}

/// Sampling ranges for the thrown sphere of the tracking task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingSpawn {
    /// Sphere radius, m.
    pub radius: Span,
    /// Launch distance from the agent, m.
    pub distance: Span,
    /// Launch bearing relative to the agent heading, rad.
    pub bearing: Span,
    /// Launch speed, m/s.
    pub speed: Span,
    /// Launch elevation, rad.
    pub elevation: Span,
}

impl Default for TrackingSpawn {
    fn default() -> Self {
        TrackingSpawn {
            radius: Span::new(0.2, 0.4),
            distance: Span::new(2.0, 4.0),
            bearing: Span::new(-60f64.to_radians(), 60f64.to_radians()),
            speed: Span::new(2.0, 4.0),
            elevation: Span::new(20f64.to_radians(), 60f64.to_radians()),
        }
    }
}

/// Everything that defines an environment instance except the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    /// Which task to run.
    pub task: Task,
    /// Control period in seconds.
    pub dt: f64,
    /// Episode length limit.
    pub max_steps: usize,
    /// Intrinsics and mounting of the sensor; the pose is overwritten each step.
    pub camera: CameraModel,
    /// Sky and ground intensities.
    pub background: Background,
    /// Linear intensity of the sphere.
    pub sphere_intensity: f64,
    /// Threshold and noise of the emulated sensor.
    pub emulator: EmulatorConfig,
    /// Agent kinematics.
    pub agent: AgentDynamics,
    /// Avoidance-task spawn ranges.
    pub avoidance: AvoidanceSpawn,
    /// Tracking-task spawn ranges.
    pub tracking: TrackingSpawn,
}

impl EnvConfig {
    /// Defaults for a task at the full 240×180 sensor resolution.
    pub fn new(task: Task) -> Self {
        EnvConfig {
            task,
            dt: 0.01,
            max_steps: 100,
            camera: CameraModel::default(),
            background: Background::default(),
            sphere_intensity: OBJECT_INTENSITY,
            emulator: EmulatorConfig::default(),
            agent: AgentDynamics::default(),
            avoidance: AvoidanceSpawn::default(),
            tracking: TrackingSpawn::default(),
        }
    }

    /// Same configuration rendered at another resolution.
    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.camera = self.camera.with_resolution(width, height);
        self
    }

    /// Same configuration with another noise probability.
    pub fn with_noise(mut self, noise_prob: f64) -> Self {
        self.emulator.noise_prob = noise_prob;
        self
    }

    /// Checks every field against its invariant.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        self.camera.validate()?;
        self.emulator.validate()?;
        SceneObject::sphere(Vec3::ZERO, 1.0)
            .with_intensity(self.sphere_intensity)
            .validate(&self.background)?;
        let a = &self.agent;
        if !(a.forward_speed >= 0.0 && a.turn_rate >= 0.0 && a.radius > 0.0) {
            return Err(Error::invalid("agent dynamics must be non-negative with positive radius"));
        }
        let s = &self.avoidance;
        for (span, what) in [
            (s.radius, "avoidance radius"),
            (s.distance, "avoidance distance"),
            (s.lateral, "avoidance lateral"),
            (s.drop_height, "avoidance drop height"),
            (s.trigger_step, "avoidance trigger step"),
        ] {
            span.validate(what)?;
        }
        let t = &self.tracking;
        for (span, what) in [
            (t.radius, "tracking radius"),
            (t.distance, "tracking distance"),
            (t.bearing, "tracking bearing"),
            (t.speed, "tracking speed"),
            (t.elevation, "tracking elevation"),
        ] {
            span.validate(what)?;
        }
        if s.radius.lo <= 0.0 || t.radius.lo <= 0.0 {
            return Err(Error::invalid("sphere radius must be positive"));
        }
        if s.trigger_step.lo < 0.0 {
            return Err(Error::invalid("trigger step must be non-negative"));
        }
        Ok(())
    }
}

/// Pose and speed of the agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    /// Ground position.
    pub position: Vec3,
    /// Heading, rad, counter-clockwise from +x.
    pub yaw: f64,
    /// Current forward speed, m/s.
    pub forward_speed: f64,
}

/// The single sphere of either task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleState {
    /// Center position.
    pub position: Vec3,
    /// Velocity, m/s.
    pub velocity: Vec3,
    /// Radius, m.
    pub radius: f64,
    /// Visible and moving; an avoidance sphere stays inactive until released.
    pub active: bool,
    /// Resting on the ground.
    pub landed: bool,
}

impl ObstacleState {
    /// One explicit Euler step of ballistic motion; comes to rest on touching the ground.
    fn advance(&mut self, dt: f64) {
        if !self.active || self.landed {
            return;
        }
        self.position = self.position + self.velocity * dt;
        self.velocity.z -= GRAVITY * dt;
        if self.position.z <= self.radius {
            self.position.z = self.radius;
            self.velocity = Vec3::ZERO;
            self.landed = true;
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// 3D distance between agent and sphere centers, m.
    pub distance: f64,
    /// Signed bearing of the sphere from the agent heading, rad, in `[-π, π]`.
    pub bearing: f64,
    /// The agent touched the sphere this step.
    pub collision: bool,
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Event frame accumulated over the step.
    pub observation: EventFrame,
    /// Scalar reward.
    pub reward: f64,
    /// Episode ended; further steps fail until reset.
    pub done: bool,
    /// Diagnostics.
    pub info: StepInfo,
}

/// Interface the trainer drives.
pub trait Environment {
    /// Size of the discrete action set.
    fn action_count(&self) -> usize;
    /// Observation `(width, height)`.
    fn observation_size(&self) -> (usize, usize);
    /// Starts a new episode and returns its first observation.
    fn reset(&mut self, seed: u64) -> EventFrame;
    /// Applies the action with the given index.
    fn step(&mut self, action: usize) -> Result<StepResult>;
}

/// Collision test shared by both tasks.
pub fn collides(distance: f64, agent_radius: f64, sphere_radius: f64) -> bool {
    distance < agent_radius + sphere_radius
}

/// Avoidance reward: `-d²/10`, plus the forward bonus, or the collision penalty.
pub fn avoidance_reward(distance: f64, action: Action, collided: bool) -> f64 {
    if collided {
        return COLLISION_REWARD;
    }
    let bonus = if action == Action::Forward { FORWARD_BONUS } else { 0.0 };
    -distance * distance / 10.0 + bonus
}

/// Tracking reward `10 (1 - |θ|)` with θ in radians.
pub fn tracking_reward(bearing: f64) -> f64 {
    10.0 * (1.0 - bearing.abs())
}

/// Undiscounted sum of rewards.
pub fn episode_return(rewards: &[f64]) -> f64 {
    rewards.iter().sum()
}

/// Signed horizontal bearing of `target` seen from `from` with heading `yaw`.
pub fn bearing(from: Vec3, yaw: f64, target: Vec3) -> f64 {
    wrap_angle(libm::atan2(target.y - from.y, target.x - from.x) - yaw)
}

/// Simulated event-camera environment for either task.
#[derive(Debug, Clone)]
pub struct EventEnv {
    config: EnvConfig,
    rng: ChaCha8Rng,
    agent: AgentState,
    obstacle: ObstacleState,
    trigger_step: usize,
    steps: usize,
    done: bool,
    last_frame: IntensityFrame,
}

impl EventEnv {
    /// Builds an environment; call [`Environment::reset`] before stepping.
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let camera = config.camera;
        let mut env = EventEnv {
            config,
            rng: ChaCha8Rng::seed_from_u64(0),
            agent: AgentState {
                position: Vec3::ZERO,
                yaw: 0.0,
                forward_speed: 0.0,
            },
            obstacle: ObstacleState {
                position: Vec3::ZERO,
                velocity: Vec3::ZERO,
                radius: 1.0,
                active: false,
                landed: false,
            },
            trigger_step: 0,
            steps: 0,
            done: true,
            last_frame: IntensityFrame::filled(camera.width, camera.height, 0.0),
        };
        env.reset(0);
        Ok(env)
    }

    /// Configuration in use.
    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Current agent state.
    pub fn agent(&self) -> &AgentState {
        &self.agent
    }

    /// Current sphere state.
    pub fn obstacle(&self) -> &ObstacleState {
        &self.obstacle
    }

    /// Step at which the avoidance sphere is released.
    pub fn trigger_step(&self) -> usize {
        self.trigger_step
    }

    /// Steps taken in the current episode.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// The episode has ended.
    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Overrides agent and sphere state, e.g. to stage a specific situation.
    pub fn set_state(&mut self, agent: AgentState, obstacle: ObstacleState) {
        self.agent = agent;
        self.obstacle = obstacle;
        self.last_frame = self.render_current();
    }

    /// Objects visible in the current state.
    pub fn scene(&self) -> Vec<SceneObject> {
        let mut objects = Vec::with_capacity(1);
        if self.obstacle.active {
            objects.push(
                SceneObject::sphere(self.obstacle.position, self.obstacle.radius)
                    .with_intensity(self.config.sphere_intensity),
            );
        }
        objects
    }

    /// Camera at the current agent pose.
    pub fn camera(&self) -> CameraModel {
        CameraModel {
            position: self.agent.position,
            yaw: self.agent.yaw,
            ..self.config.camera
        }
    }

    /// Log-intensity render of the current state.
    pub fn render_current(&self) -> IntensityFrame {
        render(&self.scene(), &self.camera(), &self.config.background)
    }

    fn agent_center(&self) -> Vec3 {
        self.agent.position + Vec3::new(0.0, 0.0, self.config.agent.radius)
    }

    /// Distance and bearing diagnostics for the current state.
    pub fn info(&self) -> StepInfo {
        let center = self.agent_center();
        let distance = center.distance(self.obstacle.position);
        let collision = self.obstacle.active
            && collides(distance, self.config.agent.radius, self.obstacle.radius);
        StepInfo {
            distance,
            bearing: bearing(self.agent.position, self.agent.yaw, self.obstacle.position),
            collision,
        }
    }

    fn spawn(&mut self) {
        let rng = &mut self.rng;
        match self.config.task {
            Task::Avoidance => {
                let s = self.config.avoidance;
                let radius = s.radius.sample(rng);
                let distance = s.distance.sample(rng);
                let lateral = s.lateral.sample(rng);
                let height = s.drop_height.sample(rng).max(radius);
                self.trigger_step = libm::round(s.trigger_step.sample(rng)) as usize;
                self.obstacle = ObstacleState {
                    position: Vec3::new(distance, lateral, height),
                    velocity: Vec3::ZERO,
                    radius,
                    active: false,
                    landed: false,
                };
            }
            Task::Tracking => {
                let s = self.config.tracking;
                let radius = s.radius.sample(rng);
                let distance = s.distance.sample(rng);
                let bearing = s.bearing.sample(rng);
                let speed = s.speed.sample(rng);
                let elevation = s.elevation.sample(rng);
                let azimuth = rng.gen_range(0.0..2.0 * PI);
                let horizontal = speed * libm::cos(elevation);
                self.trigger_step = 0;
                self.obstacle = ObstacleState {
                    position: Vec3::new(
                        distance * libm::cos(bearing),
                        distance * libm::sin(bearing),
                        radius,
                    ),
                    velocity: Vec3::new(
                        horizontal * libm::cos(azimuth),
                        horizontal * libm::sin(azimuth),
                        speed * libm::sin(elevation),
                    ),
                    radius,
                    active: true,
                    landed: false,
                };
            }
        }
    }

    fn observe(&mut self) -> Result<EventFrame> {
        let frame = self.render_current();
        let mut obs = emulate_frame(&self.last_frame, &frame, self.config.emulator.threshold)?;
        inject_impulse_noise(&mut obs, self.config.emulator.noise_prob, &mut self.rng);
        self.last_frame = frame;
        Ok(obs)
    }

    /// Applies one of the task's enabled actions.
    pub fn step_action(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::state("episode is done; call reset"));
        }
        if !self.config.task.actions().contains(&action) {
            return Err(Error::invalid(format!(
                "action {} is not enabled for {}",
                action.name(),
                self.config.task.name()
            )));
        }
        let dt = self.config.dt;
        let dyn_ = self.config.agent;
        match action {
            Action::Forward => self.agent.forward_speed = dyn_.forward_speed,
            Action::Backward => self.agent.forward_speed = -dyn_.forward_speed,
            Action::Stop => self.agent.forward_speed = 0.0,
            Action::Right => {
                self.agent.forward_speed = 0.0;
                self.agent.yaw = wrap_angle(self.agent.yaw - dyn_.turn_rate * dt);
            }
            Action::Left => {
                self.agent.forward_speed = 0.0;
                self.agent.yaw = wrap_angle(self.agent.yaw + dyn_.turn_rate * dt);
            }
        }
        let heading = Vec3::new(libm::cos(self.agent.yaw), libm::sin(self.agent.yaw), 0.0);
        self.agent.position = self.agent.position + heading * (self.agent.forward_speed * dt);

        self.steps += 1;
        if self.config.task == Task::Avoidance && !self.obstacle.active {
            self.obstacle.active = self.steps >= self.trigger_step;
        }
        self.obstacle.advance(dt);

        let info = self.info();
        let reward = match self.config.task {
            Task::Avoidance => avoidance_reward(info.distance, action, info.collision),
            Task::Tracking => tracking_reward(info.bearing),
        };
        let observation = self.observe()?;
        self.done = info.collision || self.steps >= self.config.max_steps;
        Ok(StepResult {
            observation,
            reward,
            done: self.done,
            info,
        })
    }
}

impl Environment for EventEnv {
    fn action_count(&self) -> usize {
        self.config.task.actions().len()
    }

    fn observation_size(&self) -> (usize, usize) {
        (self.config.camera.width, self.config.camera.height)
    }

    fn reset(&mut self, seed: u64) -> EventFrame {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.agent = AgentState {
            position: Vec3::ZERO,
            yaw: 0.0,
            forward_speed: 0.0,
        };
        self.spawn();
        self.steps = 0;
        self.done = false;
        self.last_frame = self.render_current();
        self.observe().expect("frames of one camera always match")
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        let actions = self.config.task.actions();
        let a = *actions.get(action).ok_or_else(|| {
            Error::invalid(format!("action index {action} out of range 0..{}", actions.len()))
        })?;
        self.step_action(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(task: Task) -> EnvConfig {
        EnvConfig::new(task).with_resolution(64, 48)
    }

    #[test]
    fn reward_formulas() {
        assert!((avoidance_reward(2.0, Action::Stop, false) - -0.4).abs() < 1e-12);
        assert!((avoidance_reward(2.0, Action::Forward, false) - -0.2).abs() < 1e-12);
        assert_eq!(avoidance_reward(0.1, Action::Forward, true), -50.0);
        assert_eq!(tracking_reward(0.0), 10.0);
        assert!((tracking_reward(0.5) - 5.0).abs() < 1e-12);
        assert_eq!(tracking_reward(-1.0), 0.0);
    }

    #[test]
    fn episode_return_sums() {
        assert_eq!(episode_return(&[]), 0.0);
        assert_eq!(episode_return(&[1.0, 2.0, 3.0]), 6.0);
        let forward_at_two = [avoidance_reward(2.0, Action::Forward, false); 100];
        assert!((episode_return(&forward_at_two) - -20.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_episode() {
        let mut a = EventEnv::new(small(Task::Avoidance)).unwrap();
        let mut b = EventEnv::new(small(Task::Avoidance)).unwrap();
        assert_eq!(a.reset(42), b.reset(42));
        assert_eq!(a.obstacle(), b.obstacle());
        for i in 0..100 {
            let ra = a.step(i % 2).unwrap();
            let rb = b.step(i % 2).unwrap();
            assert_eq!(ra, rb);
            if ra.done {
                break;
            }
        }
    }

    #[test]
    fn noiseless_reset_is_blank() {
        for task in [Task::Avoidance, Task::Tracking] {
            let mut env = EventEnv::new(small(task).with_noise(0.0)).unwrap();
            for seed in 0..5 {
                assert_eq!(env.reset(seed).count_nonzero(), 0);
            }
        }
    }

    #[test]
    fn spawn_within_configured_range() {
        let cfg = small(Task::Avoidance);
        let mut env = EventEnv::new(cfg).unwrap();
        for seed in 0..1000 {
            env.reset(seed);
            let o = env.obstacle();
            let ahead = o.position.x;
            assert!(cfg.avoidance.distance.contains(ahead), "seed {seed}: {ahead}");
            assert!(cfg.avoidance.lateral.contains(o.position.y));
            assert!(cfg.avoidance.radius.contains(o.radius));
            assert!(!o.active);
        }
    }

    #[test]
    fn step_after_done_is_state_error() {
        let mut cfg = small(Task::Tracking);
        cfg.max_steps = 3;
        let mut env = EventEnv::new(cfg).unwrap();
        env.reset(1);
        let mut last = None;
        for _ in 0..3 {
            last = Some(env.step(0).unwrap());
        }
        assert!(last.unwrap().done);
        assert!(matches!(env.step(0), Err(Error::State(_))));
        env.reset(2);
        assert!(env.step(0).is_ok());
    }

    #[test]
    fn disabled_action_rejected() {
        let mut env = EventEnv::new(small(Task::Avoidance)).unwrap();
        env.reset(0);
        assert!(env.step_action(Action::Left).is_err());
        assert!(env.step(2).is_err());
    }

    #[test]
    fn staged_collision_ends_episode_with_penalty() {
        let mut env = EventEnv::new(small(Task::Avoidance)).unwrap();
        env.reset(0);
        let agent = *env.agent();
        let obstacle = ObstacleState {
            position: Vec3::new(0.4, 0.0, 0.3),
            velocity: Vec3::ZERO,
            radius: 0.3,
            active: true,
            landed: true,
        };
        env.set_state(agent, obstacle);
        let r = env.step_action(Action::Forward).unwrap();
        assert!(r.info.collision && r.done);
        assert_eq!(r.reward, -50.0);
    }

    #[test]
    fn staged_distance_gives_formula_reward() {
        let mut env = EventEnv::new(small(Task::Avoidance).with_noise(0.0)).unwrap();
        env.reset(0);
        let agent = *env.agent();
        // Sphere center 2 m from the agent center after a stop step.
        let center = Vec3::new(2.0, 0.0, 0.15);
        env.set_state(
            agent,
            ObstacleState {
                position: center,
                velocity: Vec3::ZERO,
                radius: 0.3,
                active: true,
                landed: true,
            },
        );
        let r = env.step_action(Action::Stop).unwrap();
        assert!((r.info.distance - 2.0).abs() < 1e-12);
        assert!((r.reward - -0.4).abs() < 1e-9);
        // Static scene and static agent: no events.
        assert_eq!(r.observation.count_nonzero(), 0);
    }

    #[test]
    fn turning_changes_bearing_by_turn_rate() {
        let cfg = small(Task::Tracking);
        let mut env = EventEnv::new(cfg).unwrap();
        env.reset(5);
        let agent = *env.agent();
        let obstacle = ObstacleState {
            position: Vec3::new(3.0, 0.0, 0.3),
            velocity: Vec3::ZERO,
            radius: 0.3,
            active: true,
            landed: true,
        };
        env.set_state(agent, obstacle);
        let r = env.step_action(Action::Left).unwrap();
        let expected = -cfg.agent.turn_rate * cfg.dt;
        assert!((r.info.bearing - expected).abs() < 1e-12);
        assert!((r.reward - tracking_reward(expected)).abs() < 1e-12);
    }

    #[test]
    fn bearing_wraps_and_is_rotation_invariant() {
        let from = Vec3::new(1.0, -2.0, 0.0);
        let target = Vec3::new(-3.0, -2.5, 0.2);
        let yaw = 2.9;
        let b = bearing(from, yaw, target);
        assert!((-PI..=PI).contains(&b));
        let rot = |v: Vec3, a: f64| {
            Vec3::new(
                v.x * libm::cos(a) - v.y * libm::sin(a),
                v.x * libm::sin(a) + v.y * libm::cos(a),
                v.z,
            )
        };
        for a in [0.3, -1.7, 3.0] {
            let b2 = bearing(rot(from, a), yaw + a, rot(target, a));
            assert!((b - b2).abs() < 1e-9);
        }
    }

    #[test]
    fn falling_sphere_produces_events() {
        let mut env = EventEnv::new(small(Task::Avoidance).with_noise(0.0)).unwrap();
        env.reset(11);
        let mut saw_events = false;
        let trigger = env.trigger_step();
        for _ in 0..100 {
            let r = env.step_action(Action::Stop).unwrap();
            if env.steps() > trigger && r.observation.count_nonzero() > 0 {
                saw_events = true;
            }
            if env.steps() < trigger {
                assert_eq!(r.observation.count_nonzero(), 0);
            }
            if r.done {
                break;
            }
        }
        assert!(saw_events);
    }
}
