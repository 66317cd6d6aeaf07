//! Transition storage for off-policy training.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// One environment step as stored for replay. `done` marks a true terminal
/// state (the target bootstrap is zeroed); episodes cut off mid-flight are
/// stored with `done = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<O> {
    pub obs: O,
    pub action: usize,
    pub reward: Scalar,
    pub next_obs: O,
    pub done: bool,
}

/// Bounded FIFO of transitions with uniform without-replacement sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<O> {
    items: VecDeque<Transition<O>>,
    capacity: usize,
}

impl<O> ReplayBuffer<O> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    /// Appends a transition, evicting the oldest when full.
    pub fn push(&mut self, t: Transition<O>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Uniform sample of `amount` distinct transitions.
    pub fn sample(&self, amount: usize, rng: &mut ChaCha8Rng) -> Vec<&Transition<O>> {
        assert!(amount <= self.items.len(), "not enough transitions to sample");
        rand::seq::index::sample(rng, self.items.len(), amount)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<O>> {
        self.items.iter()
    }
}
