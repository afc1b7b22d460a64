//! Heap entries with total, deterministic ordering.

use std::cmp::Ordering;

/// Max-heap entry: larger gain first, then smaller id.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MaxByGain {
    pub gain: f64,
    pub id: usize,
}

impl MaxByGain {
    pub fn new(gain: f64, id: usize) -> Self {
        MaxByGain { gain, id }
    }
}

impl Ord for MaxByGain {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for MaxByGain {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for MaxByGain {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for MaxByGain {}

/// Max-heap entry that pops the smallest loss first, then the smallest
/// `(a, b)` pair.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MinByLoss {
    pub loss: f64,
    pub a: usize,
    pub b: usize,
}

impl Ord for MinByLoss {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .loss
            .total_cmp(&self.loss)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

impl PartialOrd for MinByLoss {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for MinByLoss {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for MinByLoss {}
