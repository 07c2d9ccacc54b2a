use std::f64::consts::PI;

use rand::Rng;

use super::Step;
use crate::error::{Error, Result};

const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const MAX_STEPS: usize = 200;
/// `3g / (2l)` with `g = 10`, `l = 1`.
const GRAVITY_TERM: f64 = 15.0;
/// `3 / (m l²)` with `m = l = 1`.
const TORQUE_TERM: f64 = 3.0;

/// Angle in `[-π, π)`; `π` itself maps to `-π`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Angle `theta` measured from upright, angular velocity `theta_dot`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

/// Semi-implicit Euler step. The reward is charged on the state before the
/// move and the applied (clipped) torque.
pub fn pendulum_step(state: PendulumState, torque: f64) -> (PendulumState, f64) {
    let u = torque.clamp(-MAX_TORQUE, MAX_TORQUE);
    let angle = wrap_angle(state.theta);
    let cost = angle * angle + 0.1 * state.theta_dot * state.theta_dot + 0.001 * u * u;
    let theta_dot = (state.theta_dot + (GRAVITY_TERM * state.theta.sin() + TORQUE_TERM * u) * DT)
        .clamp(-MAX_SPEED, MAX_SPEED);
    let theta = state.theta + theta_dot * DT;
    (PendulumState { theta, theta_dot }, -cost)
}

/// Energy-pumping swing-up that hands over to a PD stabilizer near upright.
pub fn swing_up_action(observation: &[f64]) -> f64 {
    let (cos, sin, theta_dot) = (observation[0], observation[1], observation[2]);
    let theta = sin.atan2(cos);
    if cos > 0.85 {
        return (-10.0 * theta - 2.0 * theta_dot).clamp(-MAX_TORQUE, MAX_TORQUE);
    }
    let energy = 0.5 * theta_dot * theta_dot + GRAVITY_TERM * cos;
    let deficit = GRAVITY_TERM - energy;
    let direction = if theta_dot.abs() < 1e-3 { 1.0 } else { theta_dot.signum() };
    (deficit * direction).clamp(-MAX_TORQUE, MAX_TORQUE)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pendulum {
    state: PendulumState,
    steps: usize,
    done: bool,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Pendulum {
    /// Hanging at rest.
    pub fn new() -> Self {
        Self::at(PendulumState {
            theta: PI,
            theta_dot: 0.0,
        })
    }

    pub fn at(state: PendulumState) -> Self {
        Self {
            state,
            steps: 0,
            done: false,
        }
    }

    pub fn reset(&mut self, rng: &mut impl Rng) -> Vec<f64> {
        *self = Self::at(PendulumState {
            theta: rng.random_range(-PI..PI),
            theta_dot: rng.random_range(-1.0..1.0),
        });
        self.observation()
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    pub fn observation(&self) -> Vec<f64> {
        self.state.observation()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.done {
            return Err(Error::Contract("pendulum stepped after episode end".into()));
        }
        let (next, reward) = pendulum_step(self.state, action[0]);
        self.state = next;
        self.steps += 1;
        self.done = self.steps >= MAX_STEPS;
        Ok(Step {
            observation: self.observation(),
            reward,
            terminal: false,
            truncated: self.done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn upright_rest_is_an_equilibrium() {
        let mut env = Pendulum::at(PendulumState {
            theta: 0.0,
            theta_dot: 0.0,
        });
        for _ in 0..50 {
            let step = env.step(&[0.0]).unwrap();
            assert_eq!(step.reward, 0.0);
        }
        assert_eq!(env.state().theta, 0.0);
    }

    #[test]
    fn hanging_rest_costs_pi_squared() {
        let mut env = Pendulum::new();
        let step = env.step(&[0.0]).unwrap();
        assert_eq!(step.reward, -(PI * PI));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn horizon_is_two_hundred_steps() {
        let mut env = Pendulum::new();
        let mut n = 0;
        while !env.is_done() {
            env.step(&[1.0]).unwrap();
            n += 1;
        }
        assert_eq!(n, 200);
        assert!(matches!(env.step(&[0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn swing_up_controller_beats_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let episodes = 20;
        let mut total = 0.0;
        for _ in 0..episodes {
            let mut env = Pendulum::new();
            let mut obs = env.reset(&mut rng);
            while !env.is_done() {
                let step = env.step(&[swing_up_action(&obs)]).unwrap();
                total += step.reward;
                obs = step.observation;
            }
        }
        let mean = total / episodes as f64;
        assert!(mean > -300.0, "mean return {mean}");
    }
}
