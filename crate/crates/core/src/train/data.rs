use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{streams, SplitRng};

/// Byte `b` becomes token `b`; the vocabulary is the 256 byte values.
pub fn tokenize_bytes(text: &[u8]) -> Result<Vec<usize>> {
    if text.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    Ok(text.iter().map(|&b| b as usize).collect())
}

pub fn detokenize(ids: &[usize]) -> Result<Vec<u8>> {
    ids.iter()
        .map(|&i| {
            u8::try_from(i).map_err(|_| Error::Index {
                what: "byte token",
                index: i,
                bound: 256,
            })
        })
        .collect()
}

/// Inputs and next-token targets for `batch` windows, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub batch: usize,
    pub seq: usize,
}

impl Batch {
    pub fn tokens(&self) -> usize {
        self.batch * self.seq
    }
}

/// Corpus cut into non-overlapping windows of `seq_len + 1` ids. Train
/// windows tile the head of the corpus, validation windows its tail.
#[derive(Debug, Clone)]
pub struct Batches {
    ids: Vec<usize>,
    pub seq_len: usize,
    pub batch_size: usize,
    /// Start offsets of the windows.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    seed: u64,
}

fn split_counts(n: usize, window: usize, frac: f64) -> (usize, usize) {
    let val_ids = ((n as f64) * frac).round() as usize;
    let boundary = n - val_ids.min(n);
    (boundary / window, (n - boundary) / window)
}

pub fn make_batches(
    ids: &[usize],
    seq_len: usize,
    batch_size: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<Batches> {
    if seq_len == 0 || batch_size == 0 || !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(
            "seq_len and batch_size must be positive and val_fraction in (0, 1)".into(),
        ));
    }
    let window = seq_len + 1;
    let n = ids.len();
    let fits = |n: usize| {
        let (t, v) = split_counts(n, window, val_fraction);
        t >= batch_size && v >= 1
    };
    if !fits(n) {
        let mut need = n.max(window);
        while !fits(need) {
            need += 1;
        }
        return Err(Error::Sizing { have: n, need });
    }
    let (n_train, n_val) = split_counts(n, window, val_fraction);
    let boundary = n - ((n as f64) * val_fraction).round() as usize;
    Ok(Batches {
        ids: ids.to_vec(),
        seq_len,
        batch_size,
        train: (0..n_train).map(|i| i * window).collect(),
        val: (0..n_val).map(|i| boundary + i * window).collect(),
        seed,
    })
}

impl Batches {
    fn assemble(&self, starts: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(starts.len() * self.seq_len);
        let mut targets = Vec::with_capacity(starts.len() * self.seq_len);
        for &s in starts {
            inputs.extend_from_slice(&self.ids[s..s + self.seq_len]);
            targets.extend_from_slice(&self.ids[s + 1..s + 1 + self.seq_len]);
        }
        Batch {
            inputs,
            targets,
            batch: starts.len(),
            seq: self.seq_len,
        }
    }

    /// Endless shuffled train batches. Each pass over the windows uses a
    /// fresh permutation; windows left over at the end of a pass are
    /// skipped.
    pub fn train_stream(&self) -> TrainStream<'_> {
        TrainStream {
            data: self,
            rng: SplitRng::new(self.seed).stream(streams::BATCH_ORDER),
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        }
    }

    /// Validation windows in corpus order, grouped into batches of
    /// `group`; the last batch may be short.
    pub fn val_batches(&self, group: usize) -> Vec<Batch> {
        self.val
            .chunks(group.max(1))
            .map(|c| self.assemble(c))
            .collect()
    }
}

pub struct TrainStream<'a> {
    data: &'a Batches,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl TrainStream<'_> {
    /// Completed passes over the train windows.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for TrainStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let b = self.data.batch_size;
        if self.cursor + b > self.order.len() {
            if !self.order.is_empty() {
                self.epoch += 1;
            }
            self.order = self.data.train.clone();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = self
            .data
            .assemble(&self.order[self.cursor..self.cursor + b]);
        self.cursor += b;
        Some(batch)
    }
}
