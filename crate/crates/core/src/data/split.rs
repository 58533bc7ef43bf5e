use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    pub ratios: [f64; 3],
}

/// Shuffles with `seed` and cuts into train/validation/test by `ratios`.
/// Every split receives at least one item.
pub fn split_samples<T>(mut items: Vec<T>, ratios: [f64; 3], seed: u64) -> Result<DatasetSplits<T>> {
    if ratios.iter().any(|r| r.is_nan() || *r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let n = items.len();
    if n < 3 {
        return Err(Error::Dataset(format!("{n} samples cannot fill three splits")));
    }
    let mut counts = [
        (n as f64 * ratios[0]).round() as usize,
        (n as f64 * ratios[1]).round() as usize,
        0,
    ];
    counts[0] = counts[0].min(n);
    counts[1] = counts[1].min(n - counts[0]);
    counts[2] = n - counts[0] - counts[1];
    for i in 0..3 {
        if counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).unwrap();
            counts[donor] -= 1;
            counts[i] = 1;
        }
    }
    items.shuffle(&mut stream(seed, Stream::Split, 0));
    let test = items.split_off(counts[0] + counts[1]);
    let validation = items.split_off(counts[0]);
    Ok(DatasetSplits {
        train: items,
        validation,
        test,
        ratios,
    })
}

/// Shuffled mini-batches of `0..len` for one epoch; the final partial batch
/// is kept.
pub fn epoch_batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut stream(seed, Stream::TrainShuffle, epoch));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Endless validation batches that reshuffle on every pass over the split,
/// independent of the training order.
#[derive(Clone, Debug)]
pub struct ValidationStream {
    len: usize,
    batch_size: usize,
    seed: u64,
    cycle: u64,
    pos: usize,
    order: Vec<usize>,
}

impl ValidationStream {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        Self::resume(len, batch_size, seed, 0, 0)
    }

    /// Recreates a stream at a saved `(cycle, position)`.
    pub fn resume(len: usize, batch_size: usize, seed: u64, cycle: u64, pos: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Dataset("validation split is empty".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let mut s = Self {
            len,
            batch_size,
            seed,
            cycle,
            pos,
            order: Vec::new(),
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.len).collect();
        self.order
            .shuffle(&mut stream(self.seed, Stream::ValShuffle, self.cycle));
    }

    pub fn position(&self) -> (u64, usize) {
        (self.cycle, self.pos)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.len {
            self.cycle += 1;
            self.pos = 0;
            self.reshuffle();
        }
        let end = (self.pos + self.batch_size).min(self.len);
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}
