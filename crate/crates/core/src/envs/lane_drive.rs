use super::{
    ActionVec, EnvConfig, Tick, COLLISION_INTENSITY, FRAME_LEN, GRID, INTENSITY_AGENT,
    INTENSITY_LANE, INTENSITY_OBSTACLE,
};
use crate::numcore::RngStream;

/// Row the car is drawn in; rows above it look ahead, one world unit per row.
pub const AGENT_ROW: usize = 13;
pub const LEFT_EDGE_COL: usize = 2;
pub const RIGHT_EDGE_COL: usize = 13;
pub const FIRST_LANE_COL: usize = 3;
pub const LANE_COLS: usize = 10;
pub const MAX_SPEED: f64 = 5.0;
pub const STEER_RATE: f64 = 0.5;
pub const ACCEL_RATE: f64 = 2.0;
pub const EXPERT_GAIN: f64 = 0.8;
/// Rows ahead the expert scans for obstacles.
pub const EXPERT_LOOKAHEAD: i64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub col: usize,
    /// Longitudinal world position.
    pub position: f64,
}

/// Kinematic car on a straight lane. `lateral` is in lane half-widths, so
/// `|lateral| > 1` is off the road.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneDrive {
    pub lateral: f64,
    pub speed: f64,
    pub progress: f64,
    pub obstacles: Vec<Obstacle>,
}

pub fn lateral_to_col(lateral: f64) -> usize {
    let idx = ((lateral + 1.0) / 2.0 * LANE_COLS as f64).floor();
    FIRST_LANE_COL + idx.clamp(0.0, (LANE_COLS - 1) as f64) as usize
}

fn random_lane_col(rng: &mut RngStream) -> usize {
    FIRST_LANE_COL + rng.below(LANE_COLS)
}

impl LaneDrive {
    pub fn new(obstacle_count: usize, rng: &mut RngStream) -> Self {
        let obstacles = (0..obstacle_count)
            .map(|i| Obstacle {
                col: random_lane_col(rng),
                position: 8.0 + 7.0 * i as f64 + rng.uniform_range(0.0, 3.0),
            })
            .collect();
        LaneDrive {
            lateral: 0.0,
            speed: 0.0,
            progress: 0.0,
            obstacles,
        }
    }

    pub fn agent_col(&self) -> usize {
        lateral_to_col(self.lateral)
    }

    /// Rows ahead of the car (negative: behind), rounded to the raster.
    fn row_offset(&self, o: &Obstacle) -> i64 {
        (o.position - self.progress).round() as i64
    }

    fn overlaps_obstacle(&self) -> bool {
        let col = self.agent_col();
        self.obstacles
            .iter()
            .any(|o| o.col == col && self.row_offset(o) == 0)
    }

    pub(crate) fn tick(&mut self, cfg: &EnvConfig, action: ActionVec, rng: &mut RngStream) -> Tick {
        let [steer, throttle] = action.0;
        let dt = cfg.dt;
        self.lateral += STEER_RATE * steer * dt;
        self.speed = (self.speed + ACCEL_RATE * throttle * dt).clamp(0.0, MAX_SPEED);
        self.progress += self.speed * dt;
        let collision = self.lateral.abs() > 1.0 || self.overlaps_obstacle();
        let intensity = if collision { COLLISION_INTENSITY } else { 0.0 };
        let reward = cfg.lambda1 * self.speed * dt - cfg.lambda2 * intensity - cfg.lambda3 * steer.abs();
        if !collision {
            self.respawn_passed(rng);
        }
        Tick {
            reward,
            collision,
            terminal: collision,
        }
    }

    fn respawn_passed(&mut self, rng: &mut RngStream) {
        for i in 0..self.obstacles.len() {
            if self.obstacles[i].position < self.progress - 3.0 {
                let furthest = self
                    .obstacles
                    .iter()
                    .map(|o| o.position)
                    .fold(self.progress + GRID as f64 - 3.0, f64::max);
                self.obstacles[i] = Obstacle {
                    col: random_lane_col(rng),
                    position: furthest + 5.0 + rng.uniform_range(0.0, 4.0),
                };
            }
        }
    }

    pub fn render(&self) -> Vec<f64> {
        let mut frame = vec![0.0; FRAME_LEN];
        for row in 0..GRID {
            frame[row * GRID + LEFT_EDGE_COL] = INTENSITY_LANE;
            frame[row * GRID + RIGHT_EDGE_COL] = INTENSITY_LANE;
        }
        for o in &self.obstacles {
            let row = AGENT_ROW as i64 - self.row_offset(o);
            if (0..GRID as i64).contains(&row) {
                frame[row as usize * GRID + o.col] = INTENSITY_OBSTACLE;
            }
        }
        frame[AGENT_ROW * GRID + self.agent_col()] = INTENSITY_AGENT;
        frame
    }

    /// An obstacle in `col` that the car will share a row with within the lookahead.
    fn threatened(&self, col: usize) -> bool {
        self.obstacles.iter().any(|o| {
            let k = self.row_offset(o);
            o.col == col && (0..=EXPERT_LOOKAHEAD).contains(&k)
        })
    }

    /// Lane keeping `steer = −0.8·lateral` at full throttle; when an obstacle is
    /// ahead in the current column, full steer toward the freer side at throttle
    /// 0.2. The centering correction is held off while it would carry the car
    /// into a column with an obstacle alongside.
    pub(crate) fn expert(&self, cfg: &EnvConfig) -> ActionVec {
        let col = self.agent_col();
        if self.threatened(col) {
            let left_ok = col > FIRST_LANE_COL && !self.threatened(col - 1);
            let right_ok = col < FIRST_LANE_COL + LANE_COLS - 1 && !self.threatened(col + 1);
            let room_left = self.lateral + 1.0;
            let room_right = 1.0 - self.lateral;
            let go_left = match (left_ok, right_ok) {
                (true, false) => true,
                (false, true) => false,
                _ => room_left >= room_right,
            };
            return ActionVec::new(if go_left { -1.0 } else { 1.0 }, 0.2);
        }
        let mut steer = (-EXPERT_GAIN * self.lateral).clamp(-1.0, 1.0);
        let drift = STEER_RATE * steer * cfg.dt * cfg.action_repeat as f64;
        let next_col = lateral_to_col(self.lateral + drift);
        if next_col != col && self.threatened(next_col) {
            steer = 0.0;
        }
        ActionVec::new(steer, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, EnvState};

    fn lane(env: &mut Env) -> &mut LaneDrive {
        match env.state_mut() {
            EnvState::LaneDrive(s) => s,
            _ => unreachable!(),
        }
    }

    #[test]
    fn single_tick_reward_matches_hand_value() {
        let cfg = EnvConfig {
            action_repeat: 1,
            ..EnvConfig::lane_drive(0)
        };
        let (mut env, _) = Env::reset(&cfg, &mut RngStream::new(0)).unwrap();
        lane(&mut env).speed = 5.0;
        let r = env.step(ActionVec::new(0.2, 1.0)).unwrap();
        assert!((r.reward - 0.3).abs() < 1e-12, "{}", r.reward);
    }

    #[test]
    fn rest_state_earns_nothing() {
        let (mut env, _) = Env::reset(&EnvConfig::lane_drive(0), &mut RngStream::new(0)).unwrap();
        let r = env.step(ActionVec::new(0.0, 0.0)).unwrap();
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn empty_scene_raster_counts() {
        let (env, _) = Env::reset(&EnvConfig::lane_drive(0), &mut RngStream::new(5)).unwrap();
        let f = env.render();
        assert_eq!(f.iter().filter(|&&v| v == 0.5).count(), 2 * 16);
        assert_eq!(f.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(f.iter().filter(|&&v| v == 0.0).count(), 256 - 33);
    }

    #[test]
    fn obstacles_differ_across_seeds() {
        let cfg = EnvConfig::lane_drive(3);
        let mut differ = 0;
        for pair in 0..100u64 {
            let (a, _) = Env::reset(&cfg, &mut RngStream::new(2 * pair)).unwrap();
            let (b, _) = Env::reset(&cfg, &mut RngStream::new(2 * pair + 1)).unwrap();
            let cols = |e: &Env| match e.state() {
                EnvState::LaneDrive(s) => s.obstacles.iter().map(|o| o.col).collect::<Vec<_>>(),
                _ => unreachable!(),
            };
            if cols(&a) != cols(&b) {
                differ += 1;
            }
        }
        assert!(differ >= 97, "only {differ} of 100 seed pairs differ");
    }

    #[test]
    fn leaving_the_lane_terminates_with_penalty() {
        let cfg = EnvConfig {
            action_repeat: 1,
            ..EnvConfig::lane_drive(0)
        };
        let (mut env, _) = Env::reset(&cfg, &mut RngStream::new(0)).unwrap();
        lane(&mut env).lateral = 0.999;
        let r = env.step(ActionVec::new(1.0, 0.0)).unwrap();
        assert!(r.terminated && r.info.collision);
        assert!((r.reward - (0.0 - 1e-4 * 100.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn obstacle_overlap_terminates() {
        let cfg = EnvConfig {
            action_repeat: 1,
            ..EnvConfig::lane_drive(1)
        };
        let (mut env, _) = Env::reset(&cfg, &mut RngStream::new(0)).unwrap();
        let s = lane(&mut env);
        let col = s.agent_col();
        s.obstacles[0] = Obstacle { col, position: 0.2 };
        let r = env.step(ActionVec::new(0.0, 1.0)).unwrap();
        assert!(r.terminated && r.info.collision);
    }

    #[test]
    fn expert_fixtures() {
        let (mut env, _) = Env::reset(&EnvConfig::lane_drive(0), &mut RngStream::new(0)).unwrap();
        assert_eq!(env.expert_action().0, [0.0, 1.0]);
        lane(&mut env).lateral = 0.5;
        let a = env.expert_action();
        assert!((a.0[0] + 0.40).abs() < 1e-12 && a.0[1] == 1.0);
    }

    #[test]
    fn expert_dodges_obstacle_ahead() {
        let (mut env, _) = Env::reset(&EnvConfig::lane_drive(1), &mut RngStream::new(0)).unwrap();
        let s = lane(&mut env);
        s.lateral = 0.3;
        let col = s.agent_col();
        s.obstacles[0] = Obstacle { col, position: 2.0 };
        let a = env.expert_action();
        assert_eq!(a.0, [-1.0, 0.2]);
    }

    #[test]
    fn identical_pose_identical_frame() {
        let (mut a, _) = Env::reset(&EnvConfig::lane_drive(2), &mut RngStream::new(3)).unwrap();
        let b = a.clone();
        lane(&mut a).speed = 4.0;
        assert_eq!(a.render(), b.render());
    }
}
