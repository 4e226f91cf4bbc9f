//! One-step transitions and stacked episode matrices.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::scalar::Scalar;

/// One environment step `(s, a, r, s', terminal)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition<S> {
    pub state: Vec<S>,
    pub action: Vec<S>,
    pub reward: S,
    pub next_state: Vec<S>,
    pub terminal: bool,
}

impl<S: Scalar> Transition<S> {
    pub fn new(state: Vec<S>, action: Vec<S>, reward: S, next_state: Vec<S>, terminal: bool) -> Self {
        Self { state, action, reward, next_state, terminal }
    }

    /// States must share one nonzero length and hold finite nonnegative entries.
    pub fn validate(&self) -> Result<()> {
        if self.state.is_empty() {
            return arg_err("state must have at least one component");
        }
        if self.next_state.len() != self.state.len() {
            return Err(Error::Dimension { expected: self.state.len(), got: self.next_state.len() });
        }
        if self.action.is_empty() {
            return arg_err("action must have at least one component");
        }
        check_nonnegative(&self.state)?;
        check_nonnegative(&self.next_state)?;
        if !self.reward.is_finite() || self.action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Domain("non-finite reward or action".into()));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action.len()
    }
}

pub(crate) fn check_nonnegative<S: Scalar>(v: &[S]) -> Result<()> {
    match v.iter().find(|x| !(**x >= S::zero()) || !x.is_finite()) {
        Some(bad) => Err(Error::Domain(format!("state entry {bad} is negative or non-finite"))),
        None => Ok(()),
    }
}

/// An episode stacked as `[S | A | R]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMatrix<S> {
    rows: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<S>,
    actions: Vec<S>,
    rewards: Vec<S>,
}

impl<S: Scalar> TrajectoryMatrix<S> {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        states: Vec<S>,
        actions: Vec<S>,
        rewards: Vec<S>,
    ) -> Result<Self> {
        let rows = rewards.len();
        if state_dim == 0 {
            return arg_err("state dimension must be positive");
        }
        if states.len() != rows * state_dim {
            return Err(Error::Dimension { expected: rows * state_dim, got: states.len() });
        }
        if actions.len() != rows * action_dim {
            return Err(Error::Dimension { expected: rows * action_dim, got: actions.len() });
        }
        check_nonnegative(&states)?;
        Ok(Self { rows, state_dim, action_dim, states, actions, rewards })
    }

    /// Stacks the `(s, a, r)` part of consecutive transitions.
    pub fn from_transitions(steps: &[Transition<S>]) -> Result<Self> {
        let first = steps.first().ok_or_else(|| Error::Argument("empty trajectory".into()))?;
        let (m1, m2) = (first.state_dim(), first.action_dim());
        let mut states = Vec::with_capacity(steps.len() * m1);
        let mut actions = Vec::with_capacity(steps.len() * m2);
        let mut rewards = Vec::with_capacity(steps.len());
        for t in steps {
            if t.state_dim() != m1 {
                return Err(Error::Dimension { expected: m1, got: t.state_dim() });
            }
            if t.action_dim() != m2 {
                return Err(Error::Dimension { expected: m2, got: t.action_dim() });
            }
            states.extend_from_slice(&t.state);
            actions.extend_from_slice(&t.action);
            rewards.push(t.reward);
        }
        Self::new(m1, m2, states, actions, rewards)
    }

    /// A single-row trajectory holding one state.
    pub fn single_row(state: &[S], action: &[S], reward: S) -> Result<Self> {
        Self::new(state.len(), action.len(), state.to_vec(), action.to_vec(), vec![reward])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn actions(&self) -> &[S] {
        &self.actions
    }

    pub fn rewards(&self) -> &[S] {
        &self.rewards
    }

    pub fn state_row(&self, i: usize) -> &[S] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub(crate) fn states_mut(&mut self) -> &mut [S] {
        &mut self.states
    }

    pub(crate) fn state_row_mut(&mut self, i: usize) -> &mut [S] {
        let m1 = self.state_dim;
        &mut self.states[i * m1..(i + 1) * m1]
    }

    pub fn action_row(&self, i: usize) -> &[S] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_rejects_negative_state() {
        let t = Transition::new(vec![1.0, -0.5], vec![1.0], 0.0, vec![0.0, 0.0], false);
        assert!(matches!(t.validate(), Err(Error::Domain(_))));
    }

    #[test]
    fn transition_rejects_ragged_states() {
        let t = Transition::new(vec![1.0, 0.5], vec![1.0], 0.0, vec![0.0], false);
        assert!(matches!(t.validate(), Err(Error::Dimension { .. })));
    }

    #[test]
    fn matrix_rows_must_agree() {
        let r = TrajectoryMatrix::new(2, 1, vec![0.0f64; 4], vec![0.0; 3], vec![0.0; 2]);
        assert!(r.is_err());
        let m = TrajectoryMatrix::new(2, 1, vec![0.0f64; 4], vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert_eq!(m.rows(), 2);
        assert_eq!(m.state_row(1), &[0.0, 0.0]);
    }
}
