use std::collections::VecDeque;

use rand::Rng;

use crate::error::{CaqlError, Result};

/// One `(x, a, r, x')` sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub state: Vec<T>,
    pub action: Vec<T>,
    pub reward: T,
    pub next_state: Vec<T>,
}

/// Bounded FIFO replay memory with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    storage: VecDeque<Transition<T>>,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CaqlError::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            storage: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Appends, evicting the oldest sample when full.
    pub fn push(&mut self, t: Transition<T>) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<T>> {
        self.storage.iter()
    }

    /// `n` samples drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition<T>>> {
        if self.storage.is_empty() {
            return Err(CaqlError::EmptyBatch("replay sample"));
        }
        Ok((0..n)
            .map(|_| self.storage[rng.random_range(0..self.storage.len())].clone())
            .collect())
    }
}
