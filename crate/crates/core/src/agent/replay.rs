//! Proportional prioritized replay.

use std::sync::Arc;

use rand::Rng;

use crate::error::AgentError;
use crate::nn::Tensor;

/// Binary sum tree over `f64` priorities with a power-of-two leaf count.
#[derive(Clone, Debug)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self { leaves, nodes: vec![0.0; 2 * leaves] }
    }

    pub fn capacity(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.leaves + leaf]
    }

    pub fn set(&mut self, leaf: usize, priority: f64) {
        let mut i = self.leaves + leaf;
        self.nodes[i] = priority;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative range contains `prefix`. Never returns a zero-priority
    /// leaf while the total is positive.
    pub fn find(&self, prefix: f64) -> usize {
        let mut u = prefix.max(0.0);
        let mut i = 1;
        while i < self.leaves {
            let left = self.nodes[2 * i];
            if (u < left || self.nodes[2 * i + 1] <= 0.0) && left > 0.0 {
                i = 2 * i;
            } else {
                u -= left;
                i = 2 * i + 1;
            }
        }
        i - self.leaves
    }

    pub fn leaf_sum(&self) -> f64 {
        self.nodes[self.leaves..].iter().sum()
    }
}

/// One transition. States are shared between consecutive experiences.
#[derive(Clone, Debug)]
pub struct Experience {
    pub map_id: u64,
    pub state: Arc<Tensor<f32>>,
    pub action: usize,
    pub reward: u32,
    pub next_state: Arc<Tensor<f32>>,
    pub terminal: bool,
    pub next_legal: Arc<Vec<bool>>,
}

/// A slot plus the insertion stamp it held when sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Handle {
    pub slot: usize,
    pub stamp: u64,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub handles: Vec<Handle>,
    /// Importance-sampling weights, max-normalized to 1.
    pub weights: Vec<f32>,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ReplayBank {
    capacity: usize,
    slots: Vec<Option<Experience>>,
    stamps: Vec<u64>,
    next: usize,
    len: usize,
    inserted: u64,
    tree: SumTree,
    max_priority: f64,
    alpha: f64,
    priority_epsilon: f64,
    skipped_updates: u64,
}

impl ReplayBank {
    pub fn new(capacity: usize, alpha: f64, priority_epsilon: f64) -> Self {
        Self {
            capacity,
            slots: vec![None; capacity],
            stamps: vec![0; capacity],
            next: 0,
            len: 0,
            inserted: 0,
            tree: SumTree::new(capacity),
            max_priority: 1.0,
            alpha,
            priority_epsilon,
            skipped_updates: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    pub fn skipped_updates(&self) -> u64 {
        self.skipped_updates
    }

    pub fn priority(&self, slot: usize) -> f64 {
        self.tree.get(slot)
    }

    pub fn get(&self, slot: usize) -> Option<&Experience> {
        self.slots.get(slot).and_then(|s| s.as_ref())
    }

    /// The experience behind a handle, if it has not been evicted since.
    pub fn resolve(&self, handle: Handle) -> Option<&Experience> {
        if self.stamps.get(handle.slot) == Some(&handle.stamp) {
            self.get(handle.slot)
        } else {
            None
        }
    }

    /// `(|loss| + epsilon)^alpha`.
    pub fn priority_for(&self, loss: f64) -> f64 {
        (loss.abs() + self.priority_epsilon).powf(self.alpha)
    }

    /// Inserts at the current max priority, evicting the oldest entry when full.
    pub fn insert(&mut self, exp: Experience) -> Handle {
        let slot = self.next;
        self.inserted += 1;
        self.slots[slot] = Some(exp);
        self.stamps[slot] = self.inserted;
        self.tree.set(slot, self.max_priority);
        self.next = (self.next + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Handle { slot, stamp: self.inserted }
    }

    /// Overwrites a slot's priority directly (no alpha transform).
    pub fn set_raw_priority(&mut self, slot: usize, priority: f64) {
        assert!(slot < self.len, "slot {slot} is empty");
        self.tree.set(slot, priority);
        self.max_priority = self.max_priority.max(priority);
    }

    /// Stratified proportional sampling: stratum `i` of `[0, total)` yields draw `i`.
    pub fn sample<R: Rng>(&self, batch_size: usize, beta: f64, rng: &mut R) -> Result<Batch, AgentError> {
        if self.len < batch_size || batch_size == 0 {
            return Err(AgentError::Underfull { size: self.len, batch: batch_size });
        }
        let total = self.tree.total();
        let stratum = total / batch_size as f64;
        let mut handles = Vec::with_capacity(batch_size);
        let mut probabilities = Vec::with_capacity(batch_size);
        for i in 0..batch_size {
            let u = stratum * (i as f64 + rng.gen::<f64>());
            let slot = self.tree.find(u.min(total));
            handles.push(Handle { slot, stamp: self.stamps[slot] });
            probabilities.push(self.tree.get(slot) / total);
        }
        let n = self.len as f64;
        let raw: Vec<f64> = probabilities.iter().map(|&p| (n * p).powf(-beta)).collect();
        let max = raw.iter().cloned().fold(f64::MIN, f64::max);
        let weights = raw.iter().map(|&w| (w / max) as f32).collect();
        Ok(Batch { handles, weights, probabilities })
    }

    /// Sets `p = (|loss| + epsilon)^alpha` per handle; evicted handles are skipped and counted.
    pub fn update_priorities(&mut self, handles: &[Handle], losses: &[f64]) -> usize {
        let mut skipped = 0;
        for (h, &loss) in handles.iter().zip(losses) {
            if self.stamps[h.slot] != h.stamp || self.slots[h.slot].is_none() {
                skipped += 1;
                continue;
            }
            let p = self.priority_for(loss);
            self.tree.set(h.slot, p);
            self.max_priority = self.max_priority.max(p);
        }
        self.skipped_updates += skipped as u64;
        skipped
    }
}
