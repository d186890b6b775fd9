//! Environments: Pendulum swing-up and a one-step analytic oracle.

use std::f64::consts::PI;

use rand::Rng;

use crate::bounds::BoxDomain;
use crate::error::{CaqlError, Result};

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Always `false` for the shipped environments.
    pub done: bool,
}

pub trait Environment {
    fn name(&self) -> &str;
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_box(&self) -> &BoxDomain<f64>;
    /// Draws an initial state and returns its observation.
    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
    /// Applies `action` (clipped to the action box first).
    fn step(&mut self, action: &[f64], rng: &mut dyn rand::RngCore) -> Step;
}

/// Maps an angle to `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    pub state: PendulumState,
    action_box: BoxDomain<f64>,
}

impl Pendulum {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;

    /// Torque limited to `[-max_torque, max_torque]`.
    pub fn new(max_torque: f64) -> Result<Self> {
        if !(max_torque > 0.0 && max_torque.is_finite()) {
            return Err(CaqlError::InvalidConfig(format!("action range must be positive, got {max_torque}")));
        }
        Ok(Self {
            state: PendulumState {
                theta: PI,
                theta_dot: 0.0,
            },
            action_box: BoxDomain::symmetric(1, max_torque)?,
        })
    }

    pub fn max_torque(&self) -> f64 {
        self.action_box.upper()[0]
    }

    /// Transition and reward from `state` under torque `u`.
    pub fn dynamics(&self, state: PendulumState, u: f64) -> (PendulumState, f64) {
        let u = u.clamp(-self.max_torque(), self.max_torque());
        let PendulumState { theta, theta_dot } = state;
        let (g, m, l, dt) = (Self::GRAVITY, Self::MASS, Self::LENGTH, Self::DT);
        let reward = -(wrap_angle(theta).powi(2) + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
        let acc = 3.0 * g / (2.0 * l) * theta.sin() + 3.0 / (m * l * l) * u;
        let new_dot = (theta_dot + acc * dt).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        let next = PendulumState {
            theta: theta + new_dot * dt,
            theta_dot: new_dot,
        };
        (next, reward)
    }
}

impl Environment for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }

    fn observation_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_box(&self) -> &BoxDomain<f64> {
        &self.action_box
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.state = PendulumState {
            theta: rng.random_range(-PI..=PI),
            theta_dot: rng.random_range(-1.0..=1.0),
        };
        self.state.observation()
    }

    fn step(&mut self, action: &[f64], _rng: &mut dyn rand::RngCore) -> Step {
        let (next, reward) = self.dynamics(self.state, action[0]);
        self.state = next;
        Step {
            observation: next.observation(),
            reward,
            done: false,
        }
    }
}

/// One-dimensional oracle: reward `-(a - sin x)²`, next state uniform in
/// `[-1, 1]` regardless of the action.
#[derive(Debug, Clone)]
pub struct OracleEnv {
    pub x: f64,
    action_box: BoxDomain<f64>,
}

impl OracleEnv {
    pub fn new(action_range: f64) -> Result<Self> {
        Ok(Self {
            x: 0.0,
            action_box: BoxDomain::symmetric(1, action_range)?,
        })
    }

    pub fn reward(x: f64, a: f64) -> f64 {
        let d = a - x.sin();
        -d * d
    }
}

impl Environment for OracleEnv {
    fn name(&self) -> &str {
        "oracle"
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_box(&self) -> &BoxDomain<f64> {
        &self.action_box
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.x = rng.random_range(-1.0..=1.0);
        vec![self.x]
    }

    fn step(&mut self, action: &[f64], rng: &mut dyn rand::RngCore) -> Step {
        let a = self.action_box.clip(action)[0];
        let reward = Self::reward(self.x, a);
        self.x = rng.random_range(-1.0..=1.0);
        Step {
            observation: vec![self.x],
            reward,
            done: false,
        }
    }
}

/// Builds an environment by name.
pub fn make_env(name: &str, action_range: f64) -> Result<Box<dyn Environment + Send>> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new(action_range)?)),
        "oracle" => Ok(Box::new(OracleEnv::new(action_range)?)),
        other => Err(CaqlError::InvalidConfig(format!("unknown environment {other:?}"))),
    }
}
