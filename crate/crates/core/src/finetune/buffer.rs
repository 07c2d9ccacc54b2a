use std::collections::VecDeque;

use rand::Rng;

use crate::data::{sample_indices, Batch, OfflineDataset, Transition};
use crate::error::{Error, Result};

/// Fixed-capacity transition store that evicts the oldest entry when full.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
        })
    }

    /// Buffer holding the whole dataset with room for `extra` more transitions.
    pub fn from_dataset(dataset: &OfflineDataset, extra: usize) -> Result<Self> {
        let mut buffer = Self::new((dataset.len() + extra).max(1))?;
        buffer.items.extend(dataset.transitions.iter().cloned());
        Ok(buffer)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, transition: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(transition);
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Contiguous view of the contents, oldest first.
    pub fn as_slice(&mut self) -> &[Transition] {
        self.items.make_contiguous()
    }

    /// Uniform with-replacement minibatch of the current contents.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Batch> {
        let idx = sample_indices(self.items.len(), n, rng)?;
        Batch::from_transitions(idx.iter().map(|&i| &self.items[i]))
    }
}
