//! Seeded toy pixel-grid control tasks.
//!
//! Both environments render a 16×16 grayscale frame and expose the last three
//! frames (oldest first) as the observation. Actions are two components in
//! `[-1, 1]`, repeated `action_repeat` times per call to [`Env::step`].

mod lane_drive;
mod point_reach;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use lane_drive::LaneDrive;
pub use point_reach::PointReach;

use crate::error::{CovrError, Result};
use crate::numcore::RngStream;

pub const GRID: usize = 16;
pub const FRAME_LEN: usize = GRID * GRID;
pub const STACK: usize = 3;
pub const OBS_LEN: usize = FRAME_LEN * STACK;
pub const ACTION_DIM: usize = 2;

/// Intensity of a collision, in the units the reward's λ2 multiplies.
pub const COLLISION_INTENSITY: f64 = 100.0;

pub const INTENSITY_LANE: f64 = 0.5;
pub const INTENSITY_AGENT: f64 = 1.0;
pub const INTENSITY_OBSTACLE: f64 = 0.8;
pub const INTENSITY_GOAL: f64 = 0.9;

/// A stack of rendered frames. Frames are shared, so consecutive
/// observations cost one frame of storage each.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    frames: [Arc<[f64]>; STACK],
}

impl Observation {
    fn from_frames(frames: [Arc<[f64]>; STACK]) -> Self {
        Observation { frames }
    }

    /// Builds an observation from a flat `768`-entry pixel array.
    pub fn from_pixels(pixels: &[f64]) -> Result<Self> {
        if pixels.len() != OBS_LEN {
            return Err(CovrError::dimension("observation", OBS_LEN, pixels.len()));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(CovrError::non_finite("observation pixel outside [0,1]", i));
        }
        let frames = std::array::from_fn(|k| Arc::from(&pixels[k * FRAME_LEN..(k + 1) * FRAME_LEN]));
        Ok(Observation { frames })
    }

    pub fn pixels(&self) -> Vec<f64> {
        let mut out = vec![0.0; OBS_LEN];
        self.write_into(&mut out);
        out
    }

    pub fn write_into(&self, dst: &mut [f64]) {
        for (k, f) in self.frames.iter().enumerate() {
            dst[k * FRAME_LEN..(k + 1) * FRAME_LEN].copy_from_slice(f);
        }
    }

    pub fn latest_frame(&self) -> &[f64] {
        &self.frames[STACK - 1]
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        &self.frames[k]
    }
}

/// Two-component action, every component clamped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionVec(pub [f64; ACTION_DIM]);

impl ActionVec {
    pub fn new(a: f64, b: f64) -> Self {
        let clamp = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        ActionVec([clamp(a), clamp(b)])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        ActionVec::new(v[0], v[1])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn uniform(rng: &mut RngStream) -> Self {
        ActionVec::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepInfo {
    pub collision: bool,
    pub speed: f64,
    pub progress: f64,
    /// Episode hit `max_steps` without a terminal event.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    /// True once the episode is over, whether terminal or truncated.
    pub done: bool,
    /// True only for terminal events (collision, lane departure, goal reached).
    pub terminated: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    LaneDrive,
    PointReach,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::LaneDrive => "lane_drive",
            EnvKind::PointReach => "point_reach",
        })
    }
}

impl FromStr for EnvKind {
    type Err = CovrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lane_drive" => Ok(EnvKind::LaneDrive),
            "point_reach" => Ok(EnvKind::PointReach),
            other => Err(CovrError::config("env.name", format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub name: EnvKind,
    pub max_steps: usize,
    pub action_repeat: usize,
    pub dt: f64,
    /// Simultaneous obstacles in LaneDrive, 0–3.
    pub obstacles: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            name: EnvKind::LaneDrive,
            max_steps: 200,
            action_repeat: 4,
            dt: 0.1,
            obstacles: 2,
            lambda1: 1.0,
            lambda2: 1e-4,
            lambda3: 1.0,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn lane_drive(obstacles: usize) -> Self {
        EnvConfig {
            obstacles,
            ..EnvConfig::default()
        }
    }

    pub fn point_reach() -> Self {
        EnvConfig {
            name: EnvKind::PointReach,
            obstacles: 0,
            ..EnvConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps < 1 {
            return Err(CovrError::config("env.max_steps", "must be at least 1"));
        }
        if self.action_repeat < 1 {
            return Err(CovrError::config("env.action_repeat", "must be at least 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(CovrError::config("env.dt", "must be positive"));
        }
        if self.obstacles > 3 {
            return Err(CovrError::config("env.obstacles", "must be between 0 and 3"));
        }
        for (name, v) in [
            ("env.lambda1", self.lambda1),
            ("env.lambda2", self.lambda2),
            ("env.lambda3", self.lambda3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CovrError::config(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Task-specific state.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvState {
    LaneDrive(LaneDrive),
    PointReach(PointReach),
}

/// A running episode.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    state: EnvState,
    stack: VecDeque<Arc<[f64]>>,
    steps: usize,
    ticks: u64,
    done: bool,
    rng: RngStream,
}

impl Env {
    /// Starts an episode. The scene is drawn from a stream seeded by one draw
    /// of `rng`; the frame stack holds the initial frame repeated.
    pub fn reset(config: &EnvConfig, rng: &mut RngStream) -> Result<(Env, Observation)> {
        config.validate()?;
        let mut scene_rng = RngStream::new(rng.next_u64());
        let state = match config.name {
            EnvKind::LaneDrive => EnvState::LaneDrive(LaneDrive::new(config.obstacles, &mut scene_rng)),
            EnvKind::PointReach => EnvState::PointReach(PointReach::new(&mut scene_rng)),
        };
        let mut env = Env {
            config: config.clone(),
            state,
            stack: VecDeque::with_capacity(STACK),
            steps: 0,
            ticks: 0,
            done: false,
            rng: scene_rng,
        };
        let frame: Arc<[f64]> = Arc::from(env.render());
        for _ in 0..STACK {
            env.stack.push_back(frame.clone());
        }
        let obs = env.observation();
        Ok((env, obs))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Direct state access for tests and scripted setups. The frame stack is
    /// not re-rendered until the next step or [`Env::refresh_frames`].
    pub fn state_mut(&mut self) -> &mut EnvState {
        &mut self.state
    }

    /// Re-renders the current state into every slot of the frame stack.
    pub fn refresh_frames(&mut self) {
        let frame: Arc<[f64]> = Arc::from(self.render());
        for slot in self.stack.iter_mut() {
            *slot = frame.clone();
        }
    }

    pub fn observation(&self) -> Observation {
        let frames = std::array::from_fn(|k| self.stack[k].clone());
        Observation::from_frames(frames)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Simulated time: inner ticks × dt.
    pub fn elapsed(&self) -> f64 {
        self.ticks as f64 * self.config.dt
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Distance driven (LaneDrive) or distance closed toward the goal (PointReach).
    pub fn progress(&self) -> f64 {
        match &self.state {
            EnvState::LaneDrive(s) => s.progress,
            EnvState::PointReach(s) => s.initial_distance - s.distance(),
        }
    }

    /// Applies `action` for `action_repeat` inner ticks, summing rewards.
    /// Stops early on a terminal event.
    pub fn step(&mut self, action: ActionVec) -> Result<StepResult> {
        if self.done {
            return Err(CovrError::Usage("step called after the episode ended".into()));
        }
        let action = ActionVec::new(action.0[0], action.0[1]);
        let mut reward = 0.0;
        let mut terminated = false;
        let mut collision = false;
        for _ in 0..self.config.action_repeat {
            self.ticks += 1;
            let tick = match &mut self.state {
                EnvState::LaneDrive(s) => s.tick(&self.config, action, &mut self.rng),
                EnvState::PointReach(s) => s.tick(&self.config, action),
            };
            reward += tick.reward;
            collision |= tick.collision;
            if tick.terminal {
                terminated = true;
                break;
            }
        }
        self.steps += 1;
        let truncated = !terminated && self.steps >= self.config.max_steps;
        self.done = terminated || truncated;
        self.stack.pop_front();
        self.stack.push_back(Arc::from(self.render()));
        let speed = match &self.state {
            EnvState::LaneDrive(s) => s.speed,
            EnvState::PointReach(s) => s.last_speed,
        };
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            terminated,
            info: StepInfo {
                collision,
                speed,
                progress: self.progress(),
                truncated,
            },
        })
    }

    /// Rasterizes the current state into a 256-entry frame.
    pub fn render(&self) -> Vec<f64> {
        match &self.state {
            EnvState::LaneDrive(s) => s.render(),
            EnvState::PointReach(s) => s.render(),
        }
    }

    /// Hand-written controller used as a reference policy and teacher label source.
    pub fn expert_action(&self) -> ActionVec {
        match &self.state {
            EnvState::LaneDrive(s) => s.expert(&self.config),
            EnvState::PointReach(s) => s.expert(),
        }
    }
}

/// Outcome of one inner tick.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tick {
    pub reward: f64,
    pub collision: bool,
    pub terminal: bool,
}

/// Runs one episode with `policy` and returns its undiscounted return and final progress.
pub fn rollout<F>(config: &EnvConfig, rng: &mut RngStream, mut policy: F) -> Result<(f64, f64)>
where
    F: FnMut(&Env, &Observation) -> ActionVec,
{
    let (mut env, mut obs) = Env::reset(config, rng)?;
    let mut total = 0.0;
    while !env.is_done() {
        let a = policy(&env, &obs);
        let step = env.step(a)?;
        total += step.reward;
        obs = step.observation;
    }
    Ok((total, env.progress()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_components_are_clamped() {
        let a = ActionVec::new(3.0, -7.0);
        assert_eq!(a.0, [1.0, -1.0]);
        assert_eq!(ActionVec::new(f64::NAN, 0.5).0, [0.0, 0.5]);
    }

    #[test]
    fn invalid_config_names_field() {
        let cfg = EnvConfig {
            action_repeat: 0,
            ..EnvConfig::default()
        };
        let err = Env::reset(&cfg, &mut RngStream::new(0)).unwrap_err();
        assert!(err.to_string().contains("env.action_repeat"));
        let cfg = EnvConfig {
            lambda2: -1.0,
            ..EnvConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("lambda2"));
        let cfg = EnvConfig {
            obstacles: 4,
            ..EnvConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn reset_is_deterministic() {
        for cfg in [EnvConfig::lane_drive(3), EnvConfig::point_reach()] {
            let (_, a) = Env::reset(&cfg, &mut RngStream::new(11)).unwrap();
            let (_, b) = Env::reset(&cfg, &mut RngStream::new(11)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.frame(0), a.frame(2));
        }
    }

    #[test]
    fn observation_length_and_range() {
        let (_, obs) = Env::reset(&EnvConfig::lane_drive(2), &mut RngStream::new(1)).unwrap();
        let px = obs.pixels();
        assert_eq!(px.len(), OBS_LEN);
        assert!(px.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(Observation::from_pixels(&px).unwrap(), obs);
        assert!(Observation::from_pixels(&px[1..]).is_err());
    }

    #[test]
    fn step_after_done_is_usage_error() {
        let cfg = EnvConfig {
            max_steps: 1,
            ..EnvConfig::point_reach()
        };
        let (mut env, _) = Env::reset(&cfg, &mut RngStream::new(0)).unwrap();
        let r = env.step(ActionVec::new(0.0, 0.0)).unwrap();
        assert!(r.done && r.info.truncated && !r.terminated);
        assert!(matches!(env.step(ActionVec::new(0.0, 0.0)), Err(CovrError::Usage(_))));
    }

    #[test]
    fn step_advances_time_by_repeat_dt() {
        let cfg = EnvConfig::lane_drive(0);
        let (mut env, _) = Env::reset(&cfg, &mut RngStream::new(2)).unwrap();
        for k in 1..=10u64 {
            let r = env.step(ActionVec::new(0.0, 0.5)).unwrap();
            assert!(!r.terminated);
            assert_eq!(env.ticks(), k * cfg.action_repeat as u64);
            assert_eq!(env.elapsed(), (k * 4) as f64 * cfg.dt);
        }
    }
}
