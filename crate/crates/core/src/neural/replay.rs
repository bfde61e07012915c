use rand::Rng;
use serde::{Deserialize, Serialize};

/// One stored step `(x, u, d, x')`, actions by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x: Vec<f64>,
    pub u: usize,
    pub d: usize,
    pub x_next: Vec<f64>,
}

/// Fixed-capacity ring; once full, each push overwrites the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, data: Vec::with_capacity(capacity.min(1 << 16)), cursor: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.data.len() < self.capacity { 0 } else { self.cursor };
        self.data[split..].iter().chain(&self.data[..split])
    }

    /// `count` entries drawn uniformly with replacement.
    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<Transition> {
        assert!(!self.data.is_empty(), "sampling from an empty replay buffer");
        (0..count).map(|_| self.data[rng.gen_range(0..self.data.len())].clone()).collect()
    }
}
