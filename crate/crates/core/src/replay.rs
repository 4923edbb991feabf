//! Shared transition types, the replay-memory abstraction, and the baseline
//! FIFO ring buffer.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One experience tuple: `(state, next_state, action, reward, done)` plus an
/// explicit episode-boundary flag.
///
/// `done` is a real scalar rather than a boolean: environments emit exactly
/// 0 or 1, but map sampling returns exponentially averaged done flags that
/// may be fractional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub next_state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: f64,
    /// True when `state` is the first state of a new episode.
    pub episode_start: bool,
}

impl Transition {
    pub fn state_dim(&self) -> usize {
        self.state.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action.len()
    }
}

/// A batch of sampled transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBatch {
    pub transitions: Vec<Transition>,
}

impl ReplayBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transition> {
        self.transitions.iter()
    }
}

/// The abstraction both replay memories implement.
///
/// `memory_size` is deliberately asymmetric: stored rows for the baseline
/// buffer, live node count for the map.
pub trait ReplayMemory {
    fn add(&mut self, t: &Transition) -> Result<()>;
    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<ReplayBatch>;
    fn memory_size(&self) -> usize;
}

/// Fixed-capacity ring buffer of transitions with FIFO eviction.
#[derive(Clone, Debug)]
pub struct FifoBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    storage: Vec<Transition>,
    write_index: usize,
    filled: usize,
}

impl FifoBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("fifo capacity must be >= 1"));
        }
        if state_dim == 0 {
            return Err(Error::config("state dimension must be >= 1"));
        }
        Ok(FifoBuffer {
            capacity,
            state_dim,
            action_dim,
            storage: Vec::new(),
            write_index: 0,
            filled: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    /// Stored transitions in insertion order, oldest first.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &Transition> {
        let start = if self.filled == self.capacity {
            self.write_index
        } else {
            0
        };
        (0..self.filled).map(move |i| &self.storage[(start + i) % self.capacity])
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim {
            return Err(Error::config(format!(
                "transition state dimension {} does not match buffer dimension {}",
                t.state.len(),
                self.state_dim
            )));
        }
        if t.action.len() != self.action_dim {
            return Err(Error::config(format!(
                "transition action dimension {} does not match buffer dimension {}",
                t.action.len(),
                self.action_dim
            )));
        }
        if self.filled < self.capacity {
            self.storage.push(t.clone());
            self.filled += 1;
        } else {
            self.storage[self.write_index] = t.clone();
        }
        self.write_index = (self.write_index + 1) % self.capacity;
        Ok(())
    }

    /// Draws `n` transitions uniformly with replacement from the filled
    /// region. Deterministic for a given rng state.
    pub fn sample_batch(&self, n: usize, rng: &mut dyn RngCore) -> Result<ReplayBatch> {
        if self.filled == 0 {
            return Err(Error::EmptyMemory("fifo buffer holds no transitions".into()));
        }
        if n == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        let transitions = (0..n)
            .map(|_| self.storage[rng.gen_range(0..self.filled)].clone())
            .collect();
        Ok(ReplayBatch { transitions })
    }
}

impl ReplayMemory for FifoBuffer {
    fn add(&mut self, t: &Transition) -> Result<()> {
        self.push(t)
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<ReplayBatch> {
        self.sample_batch(n, rng)
    }

    fn memory_size(&self) -> usize {
        self.filled
    }
}
