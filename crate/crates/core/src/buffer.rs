//! Ring replay buffer that keeps original rewards next to shaped ones.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::Rng;

use crate::error::{arg_err, Error, Result};
use crate::scalar::Scalar;
use crate::trajectory::Transition;

/// A stored transition. `transition.reward` is the reward the backbone sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry<S> {
    pub transition: Transition<S>,
    pub original_reward: S,
    pub shaped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<S> {
    capacity: usize,
    dims: Option<(usize, usize)>,
    entries: VecDeque<Entry<S>>,
    nonzero: usize,
}

impl<S: Scalar> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return arg_err("buffer capacity must be positive");
        }
        Ok(Self { capacity, dims: None, entries: VecDeque::with_capacity(capacity.min(1 << 16)), nonzero: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(state_dim, action_dim)`, fixed by the first push.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    /// Appends `t`, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition<S>) -> Result<()> {
        t.validate()?;
        match self.dims {
            Some((m1, m2)) => {
                if t.state_dim() != m1 {
                    return Err(Error::Dimension { expected: m1, got: t.state_dim() });
                }
                if t.action_dim() != m2 {
                    return Err(Error::Dimension { expected: m2, got: t.action_dim() });
                }
            }
            None => self.dims = Some((t.state_dim(), t.action_dim())),
        }
        if self.entries.len() == self.capacity {
            if let Some(old) = self.entries.pop_front() {
                if old.original_reward != S::zero() {
                    self.nonzero -= 1;
                }
            }
        }
        if t.reward != S::zero() {
            self.nonzero += 1;
        }
        self.entries.push_back(Entry { original_reward: t.reward, shaped: false, transition: t });
        Ok(())
    }

    /// Entry `i`, counted from the oldest.
    pub fn get(&self, i: usize) -> Option<&Entry<S>> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entry<S>> {
        self.entries.iter()
    }

    /// Count of entries whose original reward is nonzero.
    pub fn nonzero_count(&self) -> usize {
        self.nonzero
    }

    /// Fraction `μ` of entries with nonzero original reward (0 when empty).
    pub fn nonzero_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.nonzero as f64 / self.entries.len() as f64
        }
    }

    /// Recounts nonzero original rewards without the cache.
    pub fn recount_nonzero(&self) -> usize {
        self.entries.iter().filter(|e| e.original_reward != S::zero()).count()
    }

    /// Indices of entries whose original reward is zero.
    pub fn zero_reward_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.original_reward == S::zero())
            .map(|(i, _)| i)
            .collect()
    }

    /// `batch` draws, uniform with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch == 0 {
            return arg_err("batch size must be positive");
        }
        if self.entries.is_empty() {
            return arg_err("cannot sample from an empty buffer");
        }
        let n = self.entries.len();
        Ok((0..batch).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<(usize, &Transition<S>)>> {
        let idx = self.sample_indices(batch, rng)?;
        Ok(idx.into_iter().map(|i| (i, &self.entries[i].transition)).collect())
    }

    /// Replaces the stored reward of a zero-reward entry.
    pub fn set_shaped_reward(&mut self, i: usize, reward: S) -> Result<()> {
        let e = self.entries.get_mut(i).ok_or_else(|| Error::Argument(format!("index {i} out of range")))?;
        if e.original_reward != S::zero() {
            return arg_err("entries with a true nonzero reward are never shaped");
        }
        e.transition.reward = reward;
        e.shaped = true;
        Ok(())
    }

    /// Restores the original reward of entry `i`.
    pub fn clear_shaping(&mut self, i: usize) {
        if let Some(e) = self.entries.get_mut(i) {
            e.transition.reward = e.original_reward;
            e.shaped = false;
        }
    }

    /// Restores every shaped entry; returns how many there were.
    pub fn clear_all_shaping(&mut self) -> usize {
        let mut n = 0;
        for e in self.entries.iter_mut().filter(|e| e.shaped) {
            e.transition.reward = e.original_reward;
            e.shaped = false;
            n += 1;
        }
        n
    }

    pub fn shaped_count(&self) -> usize {
        self.entries.iter().filter(|e| e.shaped).count()
    }
}

// ---------------------------------------------------------------------------
// Checkpoint container (layout documented in docs/FORMATS.md)

pub const BUFFER_MAGIC: &[u8; 8] = b"SSRSRBUF";
pub const BUFFER_FORMAT_VERSION: u32 = 1;

impl<S: Scalar> ReplayBuffer<S> {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let (m1, m2) = self.dims.unwrap_or((0, 0));
        w.write_all(BUFFER_MAGIC)?;
        w.write_all(&BUFFER_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(m1 as u32).to_le_bytes())?;
        w.write_all(&(m2 as u32).to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        let put = |w: &mut W, x: S| w.write_all(&x.to_f64_lossy().to_le_bytes());
        for e in &self.entries {
            let t = &e.transition;
            for &x in &t.state {
                put(&mut w, x)?;
            }
            for &x in &t.action {
                put(&mut w, x)?;
            }
            put(&mut w, t.reward)?;
            for &x in &t.next_state {
                put(&mut w, x)?;
            }
            put(&mut w, if t.terminal { S::one() } else { S::zero() })?;
            put(&mut w, e.original_reward)?;
            put(&mut w, if e.shaped { S::one() } else { S::zero() })?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_checkpoint(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BUFFER_MAGIC {
            return Err(Error::Format("not a replay buffer checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != BUFFER_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported buffer format version {version}")));
        }
        let m1 = read_u32(&mut r)? as usize;
        let m2 = read_u32(&mut r)? as usize;
        let _reserved = read_u32(&mut r)?;
        let capacity = read_u64(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        if count > capacity {
            return Err(Error::Format(format!("count {count} exceeds capacity {capacity}")));
        }
        let mut buffer = Self::new(capacity)?;
        let mut take = |n: usize| -> Result<Vec<S>> {
            (0..n).map(|_| read_f64(&mut r).map(S::lit)).collect()
        };
        for _ in 0..count {
            let state = take(m1)?;
            let action = take(m2)?;
            let reward = take(1)?[0];
            let next_state = take(m1)?;
            let tail = take(3)?;
            let t = Transition::new(state, action, tail[1], next_state, tail[0] != S::zero());
            buffer.push(t)?;
            if tail[2] != S::zero() {
                buffer.set_shaped_reward(buffer.len() - 1, reward)?;
            } else if reward != tail[1] {
                return Err(Error::Format("unshaped entry with modified reward".into()));
            }
        }
        Ok(buffer)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_checkpoint(bytes)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
