//! Environments for the tree search.
//!
//! The search never holds a mutable simulator: every transition is computed
//! from an explicit state snapshot, so any interior node of the tree can be
//! re-simulated. [`Mdp`] captures that contract; [`Pendulum`] is the
//! swing-up task and [`Bandit`] a one-step toy problem used to sanity-check
//! the planner.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action {action:?} outside the box [-{bound}, {bound}]^{dim}")]
    ActionOutOfBounds {
        action: Vec<f64>,
        bound: f64,
        dim: usize,
    },
    #[error("step called on a terminal state")]
    Terminal,
}

/// A point in the action box `[-c_b, c_b]^{n_a}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Action(pub Vec<f64>);

impl Action {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Network input encoding of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<S> {
    pub next_state: S,
    pub reward: f64,
    pub terminal: bool,
}

/// Deterministic, snapshot-based MDP.
pub trait Mdp {
    type State: Clone + std::fmt::Debug;

    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Half-width `c_b` of the symmetric action box.
    fn action_bound(&self) -> f64;
    fn step(&self, state: &Self::State, action: &Action)
        -> Result<StepResult<Self::State>, EnvError>;
    fn observe(&self, state: &Self::State) -> Observation;
    fn is_terminal(&self, state: &Self::State) -> bool;

    fn check_action(&self, action: &Action) -> Result<(), EnvError> {
        let bound = self.action_bound();
        let ok = action.dim() == self.action_dim()
            && action.0.iter().all(|a| a.is_finite() && a.abs() <= bound);
        if ok {
            Ok(())
        } else {
            Err(EnvError::ActionOutOfBounds {
                action: action.0.clone(),
                bound,
                dim: self.action_dim(),
            })
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    /// Angle from upright, in `(-pi, pi]`.
    pub theta: f64,
    pub theta_dot: f64,
    pub step_count: u32,
}

/// Pendulum swing-up with rewards rescaled by 1/1000.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub horizon: u32,
    pub max_torque: f64,
    pub max_speed: f64,
    pub dt: f64,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub reward_scale: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            horizon: 300,
            max_torque: 2.0,
            max_speed: 8.0,
            dt: 0.05,
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            reward_scale: 1.0 / 1000.0,
        }
    }
}

impl Pendulum {
    pub fn new(horizon: u32, max_torque: f64) -> Self {
        Self {
            horizon,
            max_torque,
            ..Self::default()
        }
    }

    /// Initial state: theta uniform in `(-pi, pi]`, theta_dot uniform in `[-1, 1]`.
    pub fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: f64 = rng.random();
        EnvState {
            theta: PI - 2.0 * PI * u,
            theta_dot: rng.random_range(-1.0..=1.0),
            step_count: 0,
        }
    }
}

impl Mdp for Pendulum {
    type State = EnvState;

    fn obs_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> f64 {
        self.max_torque
    }

    fn step(&self, state: &EnvState, action: &Action) -> Result<StepResult<EnvState>, EnvError> {
        if self.is_terminal(state) {
            return Err(EnvError::Terminal);
        }
        self.check_action(action)?;
        let u = action.0[0];
        let (g, m, l, dt) = (self.gravity, self.mass, self.length, self.dt);

        // Cost is evaluated on the pre-transition state.
        let th = wrap_angle(state.theta);
        let cost = th * th + 0.1 * state.theta_dot * state.theta_dot + 0.001 * u * u;

        let theta_ddot = 3.0 * g / (2.0 * l) * state.theta.sin() + 3.0 / (m * l * l) * u;
        let theta_dot =
            (state.theta_dot + theta_ddot * dt).clamp(-self.max_speed, self.max_speed);
        let theta = wrap_angle(state.theta + theta_dot * dt);
        let step_count = state.step_count + 1;

        Ok(StepResult {
            next_state: EnvState {
                theta,
                theta_dot,
                step_count,
            },
            reward: -cost * self.reward_scale,
            terminal: step_count >= self.horizon,
        })
    }

    fn observe(&self, state: &EnvState) -> Observation {
        Observation(vec![state.theta.cos(), state.theta.sin(), state.theta_dot])
    }

    fn is_terminal(&self, state: &EnvState) -> bool {
        state.step_count >= self.horizon
    }
}

/// One-step problem with reward `-(a - optimum)^2` on a scalar action.
#[derive(Debug, Clone)]
pub struct Bandit {
    pub optimum: f64,
    pub bound: f64,
}

impl Default for Bandit {
    fn default() -> Self {
        Self {
            optimum: 0.5,
            bound: 1.0,
        }
    }
}

impl Mdp for Bandit {
    /// `true` once the single decision has been made.
    type State = bool;

    fn obs_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> f64 {
        self.bound
    }

    fn step(&self, state: &bool, action: &Action) -> Result<StepResult<bool>, EnvError> {
        if *state {
            return Err(EnvError::Terminal);
        }
        self.check_action(action)?;
        let d = action.0[0] - self.optimum;
        Ok(StepResult {
            next_state: true,
            reward: -d * d,
            terminal: true,
        })
    }

    fn observe(&self, state: &bool) -> Observation {
        Observation(vec![if *state { 1.0 } else { 0.0 }])
    }

    fn is_terminal(&self, state: &bool) -> bool {
        *state
    }
}
