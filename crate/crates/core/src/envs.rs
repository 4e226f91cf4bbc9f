//! Deterministic sparse-reward environments with byte-valued observations.
//!
//! Observations are vectors of integers in `[0, 255]`: a one-hot position
//! block scaled by 255 followed by a few dense features (step counter,
//! coordinates), zero-padded to a multiple of the double-entropy partition
//! count.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Step<S> {
    pub observation: Vec<S>,
    pub reward: S,
    pub terminal: bool,
}

pub trait Environment<S: Scalar> {
    /// Starts an episode and returns the first observation.
    fn reset(&mut self, seed: u64) -> Vec<S>;
    fn step(&mut self, action: usize) -> Result<Step<S>>;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Number of distinct tabular states.
    fn n_states(&self) -> usize;
    /// Tabular state id encoded in an observation (ignores the step counter).
    fn state_index(&self, obs: &[S]) -> usize;
    /// Length of the shortest successful episode.
    fn optimal_steps(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    SparseChain {
        length: usize,
        max_steps: usize,
    },
    KeyDoorGrid {
        width: usize,
        height: usize,
        start: (usize, usize),
        key: (usize, usize),
        door: (usize, usize),
        max_steps: usize,
    },
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::SparseChain { length: 20, max_steps: 40 }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EnvSpec::SparseChain { length, max_steps } => {
                if length < 2 {
                    return arg_err(format!("chain length must be at least 2, got {length}"));
                }
                if max_steps == 0 {
                    return arg_err("max_steps must be positive");
                }
            }
            EnvSpec::KeyDoorGrid { width, height, start, key, door, max_steps } => {
                if width == 0 || height == 0 || width * height < 3 {
                    return arg_err("grid needs at least 3 cells");
                }
                for (name, (x, y)) in [("start", start), ("key", key), ("door", door)] {
                    if x >= width || y >= height {
                        return arg_err(format!("{name} ({x}, {y}) outside {width}x{height} grid"));
                    }
                }
                if key == door || start == door || start == key {
                    return arg_err("start, key and door must be distinct cells");
                }
                if max_steps == 0 {
                    return arg_err("max_steps must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn build<S: Scalar>(&self, partitions: usize) -> Result<Box<dyn Environment<S>>> {
        self.validate()?;
        let partitions = partitions.max(1);
        Ok(match *self {
            EnvSpec::SparseChain { length, max_steps } => Box::new(SparseChain::new(length, max_steps, partitions)),
            EnvSpec::KeyDoorGrid { width, height, start, key, door, max_steps } => {
                Box::new(KeyDoorGrid::new(width, height, start, key, door, max_steps, partitions))
            }
        })
    }

    pub fn max_steps(&self) -> usize {
        match *self {
            EnvSpec::SparseChain { max_steps, .. } | EnvSpec::KeyDoorGrid { max_steps, .. } => max_steps,
        }
    }
}

fn padded(len: usize, multiple: usize) -> usize {
    len.div_ceil(multiple) * multiple
}

fn byte<S: Scalar>(num: usize, den: usize) -> S {
    S::lit((255.0 * num as f64 / den.max(1) as f64).round())
}

fn one_hot_index<S: Scalar>(block: &[S]) -> usize {
    crate::scalar::argmax(block)
}

/// Cells `0..L`; actions `0 = left`, `1 = right`; reward 1 on reaching `L − 1`.
#[derive(Debug, Clone)]
pub struct SparseChain {
    length: usize,
    max_steps: usize,
    obs_dim: usize,
    position: usize,
    steps: usize,
    done: bool,
}

impl SparseChain {
    pub fn new(length: usize, max_steps: usize, partitions: usize) -> Self {
        Self { length, max_steps, obs_dim: padded(length + 4, partitions), position: 0, steps: 0, done: false }
    }

    fn observe<S: Scalar>(&self) -> Vec<S> {
        let mut obs = vec![S::zero(); self.obs_dim];
        let l = self.length;
        obs[self.position] = S::lit(255.0);
        obs[l] = byte(self.steps, self.max_steps);
        obs[l + 1] = byte(self.position, l - 1);
        obs[l + 2] = byte(l - 1 - self.position, l - 1);
        obs[l + 3] = S::lit(255.0);
        obs
    }
}

impl<S: Scalar> Environment<S> for SparseChain {
    fn reset(&mut self, _seed: u64) -> Vec<S> {
        self.position = 0;
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<Step<S>> {
        if action >= 2 {
            return arg_err(format!("chain action must be 0 or 1, got {action}"));
        }
        if self.done {
            return Err(Error::Env("step called on a finished episode".into()));
        }
        self.position = if action == 1 { (self.position + 1).min(self.length - 1) } else { self.position.saturating_sub(1) };
        self.steps += 1;
        let goal = self.position == self.length - 1;
        self.done = goal || self.steps >= self.max_steps;
        Ok(Step {
            observation: self.observe(),
            reward: if goal { S::one() } else { S::zero() },
            terminal: self.done,
        })
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn n_states(&self) -> usize {
        self.length
    }

    fn state_index(&self, obs: &[S]) -> usize {
        one_hot_index(&obs[..self.length])
    }

    fn optimal_steps(&self) -> usize {
        self.length - 1
    }
}

/// Grid with a key and a locked door. Actions `0..4 = up, down, left, right`.
/// Reward 1 only when entering the door cell while holding the key.
#[derive(Debug, Clone)]
pub struct KeyDoorGrid {
    width: usize,
    height: usize,
    start: (usize, usize),
    key: (usize, usize),
    door: (usize, usize),
    max_steps: usize,
    obs_dim: usize,
    pos: (usize, usize),
    has_key: bool,
    steps: usize,
    done: bool,
}

impl KeyDoorGrid {
    pub fn new(
        width: usize,
        height: usize,
        start: (usize, usize),
        key: (usize, usize),
        door: (usize, usize),
        max_steps: usize,
        partitions: usize,
    ) -> Self {
        Self {
            width,
            height,
            start,
            key,
            door,
            max_steps,
            obs_dim: padded(width * height + 4, partitions),
            pos: start,
            has_key: false,
            steps: 0,
            done: false,
        }
    }

    fn cells(&self) -> usize {
        self.width * self.height
    }

    fn observe<S: Scalar>(&self) -> Vec<S> {
        let mut obs = vec![S::zero(); self.obs_dim];
        let c = self.cells();
        obs[self.pos.1 * self.width + self.pos.0] = S::lit(255.0);
        obs[c] = if self.has_key { S::lit(255.0) } else { S::zero() };
        obs[c + 1] = byte(self.steps, self.max_steps);
        obs[c + 2] = byte(self.pos.0, self.width.saturating_sub(1));
        obs[c + 3] = byte(self.pos.1, self.height.saturating_sub(1));
        obs
    }

    fn manhattan(a: (usize, usize), b: (usize, usize)) -> usize {
        a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
    }
}

impl<S: Scalar> Environment<S> for KeyDoorGrid {
    fn reset(&mut self, _seed: u64) -> Vec<S> {
        self.pos = self.start;
        self.has_key = false;
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<Step<S>> {
        if action >= 4 {
            return arg_err(format!("grid action must be in 0..4, got {action}"));
        }
        if self.done {
            return Err(Error::Env("step called on a finished episode".into()));
        }
        let (x, y) = self.pos;
        self.pos = match action {
            0 => (x, y.saturating_sub(1)),
            1 => (x, (y + 1).min(self.height - 1)),
            2 => (x.saturating_sub(1), y),
            _ => ((x + 1).min(self.width - 1), y),
        };
        if self.pos == self.key {
            self.has_key = true;
        }
        self.steps += 1;
        let success = self.pos == self.door && self.has_key;
        self.done = success || self.steps >= self.max_steps;
        Ok(Step {
            observation: self.observe(),
            reward: if success { S::one() } else { S::zero() },
            terminal: self.done,
        })
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn n_states(&self) -> usize {
        2 * self.cells()
    }

    fn state_index(&self, obs: &[S]) -> usize {
        let c = self.cells();
        let cell = one_hot_index(&obs[..c]);
        if obs[c] > S::zero() {
            cell + c
        } else {
            cell
        }
    }

    fn optimal_steps(&self) -> usize {
        Self::manhattan(self.start, self.key) + Self::manhattan(self.key, self.door)
    }
}
