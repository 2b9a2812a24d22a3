//! Fixed-capacity FIFO store of solver samples.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, Vector};

/// One demonstration: where the solver was queried and what it returned.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Time input handed to the policy.
    pub phase: Vector,
    pub x: Vector,
    /// Value gradient paired with this stage.
    pub dvdx: Vector,
    pub nu: Vector,
    /// `π_mpc(t, x)`, the target of behavioral cloning.
    pub u_mpc: Vector,
}

impl Sample {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && [&self.phase, &self.x, &self.dvdx, &self.nu, &self.u_mpc]
                .iter()
                .all(|v| all_finite(v.as_slice()))
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    samples: VecDeque<Sample>,
    inserted: u64,
    rejected: u64,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 100_000;

    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            samples: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
            rejected: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples accepted since construction, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Samples dropped for containing NaN or infinity.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Appends `sample`, evicting the oldest one at capacity. Returns `false`
    /// when the sample was not finite and got dropped.
    pub fn append(&mut self, sample: Sample) -> bool {
        if !sample.is_finite() {
            self.rejected += 1;
            log::warn!("dropping non-finite sample at t={}", sample.t);
            return false;
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        self.inserted += 1;
        true
    }

    /// `n` samples drawn uniformly with replacement.
    pub fn draw_batch(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Sample>> {
        if self.samples.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let len = self.samples.len();
        Ok((0..n)
            .map(|_| self.samples[rng.random_range(0..len)].clone())
            .collect())
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Sample> {
        self.samples.get(i)
    }

    /// Restores counters after loading a snapshot.
    pub fn set_counters(&mut self, inserted: u64, rejected: u64) {
        self.inserted = inserted;
        self.rejected = rejected;
    }
}
