use super::{ActionVec, EnvConfig, Tick, FRAME_LEN, GRID, INTENSITY_AGENT, INTENSITY_GOAL};
use crate::numcore::RngStream;

/// Arena is the unit square; one raster cell is 1/16 wide.
pub const CELL: f64 = 1.0 / GRID as f64;
pub const MAX_SPEED: f64 = 0.5;
pub const GOAL_RADIUS: f64 = 0.05;
pub const START_CELL: (usize, usize) = (8, 8);
const MIN_GOAL_DIST: f64 = 0.2;
const MAX_GOAL_DIST: f64 = 0.45;

fn cell_center(i: usize) -> f64 {
    (i as f64 + 0.5) * CELL
}

fn to_cell(v: f64) -> usize {
    ((v / CELL).floor().max(0.0) as usize).min(GRID - 1)
}

/// Point mass steered by a force vector toward a goal placed on a cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct PointReach {
    pub pos: [f64; 2],
    pub goal: [f64; 2],
    pub initial_distance: f64,
    pub last_speed: f64,
}

impl PointReach {
    pub fn new(rng: &mut RngStream) -> Self {
        let pos = [cell_center(START_CELL.0), cell_center(START_CELL.1)];
        let goal = loop {
            let g = [cell_center(rng.below(GRID)), cell_center(rng.below(GRID))];
            let d = ((g[0] - pos[0]).powi(2) + (g[1] - pos[1]).powi(2)).sqrt();
            if (MIN_GOAL_DIST..=MAX_GOAL_DIST).contains(&d) {
                break g;
            }
        };
        let mut s = PointReach {
            pos,
            goal,
            initial_distance: 0.0,
            last_speed: 0.0,
        };
        s.initial_distance = s.distance();
        s
    }

    pub fn distance(&self) -> f64 {
        ((self.goal[0] - self.pos[0]).powi(2) + (self.goal[1] - self.pos[1]).powi(2)).sqrt()
    }

    pub(crate) fn tick(&mut self, cfg: &EnvConfig, action: ActionVec) -> Tick {
        let [fx, fy] = action.0;
        let before = self.pos;
        self.pos[0] = (self.pos[0] + MAX_SPEED * fx * cfg.dt).clamp(0.0, 1.0);
        self.pos[1] = (self.pos[1] + MAX_SPEED * fy * cfg.dt).clamp(0.0, 1.0);
        self.last_speed =
            ((self.pos[0] - before[0]).powi(2) + (self.pos[1] - before[1]).powi(2)).sqrt() / cfg.dt;
        let d = self.distance();
        Tick {
            reward: -d * cfg.dt,
            collision: false,
            terminal: d < GOAL_RADIUS,
        }
    }

    /// Row = y cell, column = x cell.
    pub fn render(&self) -> Vec<f64> {
        let mut frame = vec![0.0; FRAME_LEN];
        frame[to_cell(self.goal[1]) * GRID + to_cell(self.goal[0])] = INTENSITY_GOAL;
        frame[to_cell(self.pos[1]) * GRID + to_cell(self.pos[0])] = INTENSITY_AGENT;
        frame
    }

    /// Unit vector toward the goal.
    pub(crate) fn expert(&self) -> ActionVec {
        let dx = self.goal[0] - self.pos[0];
        let dy = self.goal[1] - self.pos[1];
        let n = (dx * dx + dy * dy).sqrt();
        if n < 1e-12 {
            return ActionVec::new(0.0, 0.0);
        }
        ActionVec::new(dx / n, dy / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, EnvState};

    fn reach(env: &mut Env) -> &mut PointReach {
        match env.state_mut() {
            EnvState::PointReach(s) => s,
            _ => unreachable!(),
        }
    }

    #[test]
    fn at_goal_is_done_with_zero_reward() {
        let (mut env, _) = Env::reset(&EnvConfig::point_reach(), &mut RngStream::new(0)).unwrap();
        let s = reach(&mut env);
        s.pos = s.goal;
        let r = env.step(ActionVec::new(0.0, 0.0)).unwrap();
        assert!(r.done && r.terminated);
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn expert_points_east() {
        let (mut env, _) = Env::reset(&EnvConfig::point_reach(), &mut RngStream::new(0)).unwrap();
        let s = reach(&mut env);
        s.goal = [s.pos[0] + 0.3, s.pos[1]];
        assert_eq!(env.expert_action().0, [1.0, 0.0]);
    }

    #[test]
    fn goal_cell_rendered() {
        let (env, _) = Env::reset(&EnvConfig::point_reach(), &mut RngStream::new(4)).unwrap();
        let f = env.render();
        assert_eq!(f.iter().filter(|&&v| v == INTENSITY_GOAL).count(), 1);
        assert_eq!(f.iter().filter(|&&v| v == INTENSITY_AGENT).count(), 1);
    }

    #[test]
    fn inside_goal_cell_is_within_radius() {
        // Half-diagonal of a cell is below the goal radius.
        assert!((CELL / 2.0) * 2f64.sqrt() < GOAL_RADIUS);
    }

    #[test]
    fn expert_reaches_goal_quickly() {
        let cfg = EnvConfig::point_reach();
        for seed in 0..20 {
            let (mut env, _) = Env::reset(&cfg, &mut RngStream::new(seed)).unwrap();
            while !env.is_done() {
                env.step(env.expert_action()).unwrap();
            }
            assert!(env.steps() <= 5, "seed {seed}: {} steps", env.steps());
        }
    }
}
