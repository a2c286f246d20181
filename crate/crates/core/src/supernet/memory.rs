use std::collections::VecDeque;

use rand::Rng;

use crate::image::Domain;
use crate::rng::IspRng;
use crate::tensor::Tensor;

/// One stored intermediate: the output of step `step` (1-based).
#[derive(Clone, Debug)]
pub struct MemoryEntry {
    /// Insertion sequence number.
    pub seq: u64,
    pub step: usize,
    pub domain: Domain,
    pub image: Tensor,
}

/// Bounded FIFO of intermediate search data used for proxy tuning.
#[derive(Clone, Debug)]
pub struct DataMemory {
    capacity: usize,
    entries: VecDeque<MemoryEntry>,
    pushed: u64,
    evicted: u64,
}

impl DataMemory {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: VecDeque::with_capacity(capacity.min(4096)), pushed: 0, evicted: 0 }
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

    /// Total entries ever pushed.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    /// Total entries ever evicted.
    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    /// Appends an entry, evicting the oldest ones once full. Returns the
    /// sequence numbers evicted.
    pub fn push(&mut self, step: usize, domain: Domain, image: Tensor) -> Vec<u64> {
        let mut gone = Vec::new();
        while self.entries.len() >= self.capacity {
            if let Some(e) = self.entries.pop_front() {
                gone.push(e.seq);
                self.evicted += 1;
            }
        }
        self.entries.push_back(MemoryEntry { seq: self.pushed, step, domain, image });
        self.pushed += 1;
        gone
    }

    pub fn iter(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    /// Draws `count` entries of `domain` uniformly with replacement.
    pub fn sample(&self, domain: Domain, count: usize, rng: &mut IspRng) -> Vec<&MemoryEntry> {
        let matching: Vec<&MemoryEntry> = self.entries.iter().filter(|e| e.domain == domain).collect();
        if matching.is_empty() {
            return Vec::new();
        }
        (0..count).map(|_| matching[rng.random_range(0..matching.len())]).collect()
    }

    /// True when the stored sequence numbers are exactly the most recent
    /// `len` insertions in order, i.e. eviction has been strictly oldest-first.
    pub fn is_fifo_consistent(&self) -> bool {
        self.entries.len() <= self.capacity
            && self.evicted + self.entries.len() as u64 == self.pushed
            && self.entries.iter().enumerate().all(|(i, e)| e.seq == self.evicted + i as u64)
    }
}
