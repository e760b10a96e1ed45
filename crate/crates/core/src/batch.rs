//! Minibatch selection and scheduling.
//!
//! Every batch carries a `scale = N / m` so that batch sums of per-point
//! quantities are unbiased estimates of full-data sums.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct BatchSelector {
    indices: Vec<usize>,
    scale: f64,
    epoch_position: usize,
}

impl BatchSelector {
    /// All `n` points, in order, with unit scale. For data-free objectives
    /// (`n == 0`) this is the only valid batch.
    pub fn full(n: usize) -> Self {
        BatchSelector {
            indices: (0..n).collect(),
            scale: 1.0,
            epoch_position: 0,
        }
    }

    /// A batch of rows of a dataset with `n` points.
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() && n > 0 {
            return Err(Error::Config("empty minibatch".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::BatchIndex { index: bad, len: n });
        }
        let scale = if indices.is_empty() {
            1.0
        } else {
            n as f64 / indices.len() as f64
        };
        Ok(BatchSelector {
            indices,
            scale,
            epoch_position: 0,
        })
    }

    pub fn with_epoch_position(mut self, pos: usize) -> Self {
        self.epoch_position = pos;
        self
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn epoch_position(&self) -> usize {
        self.epoch_position
    }

    /// Checks the batch against a dataset of `n` rows.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= n) {
            Some(&index) => Err(Error::BatchIndex { index, len: n }),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    /// One shuffle per epoch drawn from the batch seed only; every run that
    /// shares the seed sees the same batch sequence.
    #[default]
    FixedSequence,
    /// Batches drawn independently per step and per run.
    Resampled,
}

/// Produces the batch sequence of one training run.
#[derive(Debug)]
pub struct BatchSchedule {
    n: usize,
    m: usize,
    mode: BatchMode,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSchedule {
    /// `run_seed` only matters in resampled mode, where it decorrelates the
    /// batch streams of different runs.
    pub fn new(n: usize, batch_size: Option<usize>, mode: BatchMode, seed_batch: u64, run_seed: u64) -> Result<Self> {
        let m = batch_size.unwrap_or(n).min(n);
        if n > 0 && m == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let rng = match mode {
            BatchMode::FixedSequence => seeded(seed_batch, Stream::Batch),
            BatchMode::Resampled => seeded(seed_batch ^ run_seed.rotate_left(32), Stream::Batch),
        };
        Ok(BatchSchedule {
            n,
            m,
            mode,
            rng,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn is_full_batch(&self) -> bool {
        self.m == self.n
    }

    pub fn next_batch(&mut self) -> BatchSelector {
        if self.is_full_batch() {
            return BatchSelector::full(self.n);
        }
        match self.mode {
            BatchMode::FixedSequence => {
                if self.cursor >= self.order.len() {
                    self.order = (0..self.n).collect();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                let pos = self.cursor;
                let end = (pos + self.m).min(self.n);
                let idx = self.order[pos..end].to_vec();
                self.cursor = end;
                let scale = self.n as f64 / idx.len() as f64;
                BatchSelector {
                    indices: idx,
                    scale,
                    epoch_position: pos,
                }
            }
            BatchMode::Resampled => {
                let idx = index::sample(&mut self.rng, self.n, self.m).into_vec();
                BatchSelector {
                    indices: idx,
                    scale: self.n as f64 / self.m as f64,
                    epoch_position: 0,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_times_batch_size_is_n() {
        let b = BatchSelector::new(vec![0, 3, 5, 7], 20).unwrap();
        assert_eq!(b.scale() * b.len() as f64, 20.0);
    }

    #[test]
    fn rejects_out_of_range_rows() {
        assert!(matches!(
            BatchSelector::new(vec![0, 20], 20),
            Err(Error::BatchIndex { index: 20, len: 20 })
        ));
    }

    #[test]
    fn fixed_sequence_covers_each_epoch_once() {
        let mut s = BatchSchedule::new(12, Some(4), BatchMode::FixedSequence, 3, 0).unwrap();
        for _epoch in 0..3 {
            let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch().indices().to_vec()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..12).collect::<Vec<_>>());
        }
    }

    #[test]
    fn fixed_sequence_ignores_run_seed() {
        let mut a = BatchSchedule::new(30, Some(7), BatchMode::FixedSequence, 11, 1).unwrap();
        let mut b = BatchSchedule::new(30, Some(7), BatchMode::FixedSequence, 11, 2).unwrap();
        for _ in 0..20 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }

    #[test]
    fn resampled_depends_on_run_seed() {
        let mut a = BatchSchedule::new(30, Some(7), BatchMode::Resampled, 11, 1).unwrap();
        let mut b = BatchSchedule::new(30, Some(7), BatchMode::Resampled, 11, 2).unwrap();
        let differs = (0..10).any(|_| a.next_batch() != b.next_batch());
        assert!(differs);
    }

    #[test]
    fn uneven_final_chunk_is_rescaled() {
        let mut s = BatchSchedule::new(10, Some(4), BatchMode::FixedSequence, 0, 0).unwrap();
        let sizes: Vec<_> = (0..3).map(|_| s.next_batch()).map(|b| (b.len(), b.scale())).collect();
        assert_eq!(sizes, vec![(4, 2.5), (4, 2.5), (2, 5.0)]);
    }
}
