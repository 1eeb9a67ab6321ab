use std::collections::VecDeque;

use nalgebra::DVector;

use crate::Sample;

/// Samples from the most recent `window` iterations, evicted whole
/// iterations at a time.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    window: usize,
    batches: VecDeque<Vec<Sample>>,
}

impl ReplayBuffer {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            batches: VecDeque::new(),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn push(&mut self, batch: Vec<Sample>) {
        self.batches.push_back(batch);
        while self.batches.len() > self.window {
            self.batches.pop_front();
        }
    }

    /// Number of retained iterations.
    pub fn iterations(&self) -> usize {
        self.batches.len()
    }

    pub fn len(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Oldest first.
    pub fn samples(&self) -> Vec<Sample> {
        self.batches.iter().flatten().cloned().collect()
    }

    pub fn contexts(&self) -> Vec<DVector<f64>> {
        self.batches.iter().flatten().map(|s| s.context.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(tag: f64, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| Sample::new(DVector::zeros(1), DVector::zeros(1), tag))
            .collect()
    }

    #[test]
    fn accounting() {
        let mut b = ReplayBuffer::new(3);
        for k in 1..=7 {
            b.push(batch(k as f64, 5));
            assert_eq!(b.len(), 5 * k.min(3));
        }
        let s = b.samples();
        assert_eq!(s.first().unwrap().reward, 5.0);
        assert_eq!(s.last().unwrap().reward, 7.0);
    }
}
