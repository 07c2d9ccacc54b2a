//! U-shaped point maze on `[0, 3]²`.
//!
//! ```text
//!  y=3 +-----------+
//!      | G         |
//!  y=2 +-------+   |
//!      | wall  |   |
//!  y=1 +-------+   |
//!      | S         |
//!  y=0 +-----------+
//!      x=0    x=2  x=3
//! ```
//!
//! The agent starts near `S`, moves by `0.1 · a` per step with `|a_i| ≤ 1`, and
//! must travel around the wall to reach `G`.

use rand::Rng;

use super::Step;
use crate::error::{Error, Result};

pub const MAZE_SIZE: f64 = 3.0;
pub const START: [f64; 2] = [0.5, 0.5];
pub const GOAL: [f64; 2] = [0.5, 2.5];
pub const GOAL_RADIUS: f64 = 0.5;
pub const STEP_SIZE: f64 = 0.1;
const RESET_JITTER: f64 = 0.1;
const MAX_STEPS: usize = 300;

/// Corridor centerline from start to goal, one unit apart.
pub const STITCH_WAYPOINTS: [[f64; 2]; 7] = [
    [0.5, 0.5],
    [1.5, 0.5],
    [2.5, 0.5],
    [2.5, 1.5],
    [2.5, 2.5],
    [1.5, 2.5],
    [0.5, 2.5],
];

fn in_wall(x: f64, y: f64) -> bool {
    x < 2.0 && y > 1.0 && y < 2.0
}

/// Inside the arena and outside the wall.
pub fn is_free(pos: [f64; 2]) -> bool {
    (0.0..=MAZE_SIZE).contains(&pos[0]) && (0.0..=MAZE_SIZE).contains(&pos[1]) && !in_wall(pos[0], pos[1])
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn at_goal(pos: [f64; 2]) -> bool {
    distance(pos, GOAL) <= GOAL_RADIUS
}

/// Pure transition: returns `(next_position, reward, reached_goal)`.
///
/// Each axis moves independently, x first; a move that would end inside the
/// wall or outside the arena leaves that coordinate unchanged, so motion
/// slides along obstacles.
pub fn pointmaze_step(pos: [f64; 2], action: [f64; 2]) -> ([f64; 2], f64, bool) {
    let a = action.map(|v| v.clamp(-1.0, 1.0));
    let mut next = pos;
    let x = next[0] + STEP_SIZE * a[0];
    if (0.0..=MAZE_SIZE).contains(&x) && !in_wall(x, next[1]) {
        next[0] = x;
    }
    let y = next[1] + STEP_SIZE * a[1];
    if (0.0..=MAZE_SIZE).contains(&y) && !in_wall(next[0], y) {
        next[1] = y;
    }
    let reached = at_goal(next);
    (next, if reached { 1.0 } else { 0.0 }, reached)
}

/// Unit-speed move toward `target`, slowing inside the last step.
pub fn steer_towards(pos: [f64; 2], target: [f64; 2]) -> [f64; 2] {
    let d = [target[0] - pos[0], target[1] - pos[1]];
    let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if norm < 1e-12 {
        return [0.0, 0.0];
    }
    let speed = (norm / STEP_SIZE).min(1.0);
    [speed * d[0] / norm, speed * d[1] / norm]
}

/// Waypoint controller: along the bottom corridor, up the right column, then
/// left to the goal.
pub fn scripted_action(observation: &[f64]) -> [f64; 2] {
    let pos = [observation[0], observation[1]];
    let target = if pos[1] >= 2.0 {
        GOAL
    } else if pos[0] >= 2.0 {
        [2.5, 2.5]
    } else {
        [2.5, 0.5]
    };
    steer_towards(pos, target)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointMaze {
    pos: [f64; 2],
    steps: usize,
    done: bool,
}

impl Default for PointMaze {
    fn default() -> Self {
        Self::new()
    }
}

impl PointMaze {
    pub fn new() -> Self {
        Self {
            pos: START,
            steps: 0,
            done: false,
        }
    }

    /// Starts an episode at a given position.
    pub fn at(pos: [f64; 2]) -> Self {
        Self {
            pos,
            steps: 0,
            done: false,
        }
    }

    pub fn reset(&mut self, rng: &mut impl Rng) -> Vec<f64> {
        let jitter = [
            rng.random_range(-RESET_JITTER..=RESET_JITTER),
            rng.random_range(-RESET_JITTER..=RESET_JITTER),
        ];
        *self = Self::at([START[0] + jitter[0], START[1] + jitter[1]]);
        self.observation()
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn observation(&self) -> Vec<f64> {
        self.pos.to_vec()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.done {
            return Err(Error::Contract("pointmaze stepped after episode end".into()));
        }
        let (next, reward, terminal) = pointmaze_step(self.pos, [action[0], action[1]]);
        self.pos = next;
        self.steps += 1;
        let truncated = !terminal && self.steps >= MAX_STEPS;
        self.done = terminal || truncated;
        Ok(Step {
            observation: self.observation(),
            reward,
            terminal,
            truncated,
        })
    }
}
