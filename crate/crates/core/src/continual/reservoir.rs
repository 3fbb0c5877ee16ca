use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, StdRng};

/// Bounded replay memory filled by reservoir sampling: after `n` offers every offered
/// item is held with probability `capacity / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    seen: u64,
    rng: StdRng,
}

impl<T: Clone> ReservoirBuffer<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            seen: 0,
            rng: seeded(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of items ever offered.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn offer(&mut self, item: T) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(item);
            return;
        }
        let j = self.rng.random_range(0..self.seen);
        if (j as usize) < self.capacity {
            self.items[j as usize] = item;
        }
    }

    pub fn offer_all<'a>(&mut self, batch: impl IntoIterator<Item = &'a T>)
    where
        T: 'a,
    {
        for item in batch {
            self.offer(item.clone());
        }
    }

    /// Up to `k` distinct items drawn uniformly without replacement.
    pub fn sample(&mut self, k: usize) -> Vec<T> {
        let k = k.min(self.items.len());
        if k == 0 {
            return Vec::new();
        }
        index::sample(&mut self.rng, self.items.len(), k)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }
}
