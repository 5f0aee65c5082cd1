//! Datasets, deterministic splitting and mini-batching.

mod csv_io;
mod idx;

pub use csv_io::{load_csv, write_csv};
pub use idx::{load_idx_images, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

use crate::error::{LdbError, Result};
use crate::rng::{Purpose, RngStream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
    train: Vec<usize>,
    val: Vec<usize>,
    shuffle_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Dataset {
    /// Builds a dataset and assigns a seeded random `val_fraction` of rows to
    /// validation.
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize, val_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(LdbError::Config(format!("val_fraction must be in [0,1), got {val_fraction}")));
        }
        let n = labels.len();
        let perm = RngStream::derive(seed, Purpose::Split, 0).permutation(n);
        let mut n_val = (n as f64 * val_fraction).round() as usize;
        if val_fraction > 0.0 && n >= 2 {
            n_val = n_val.clamp(1, n - 1);
        }
        let (val, train) = perm.split_at(n_val);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        Dataset::with_split(features, labels, classes, train, val, seed)
    }

    pub fn with_split(
        features: Tensor,
        labels: Vec<usize>,
        classes: usize,
        train: Vec<usize>,
        val: Vec<usize>,
        shuffle_seed: u64,
    ) -> Result<Self> {
        if features.rank() < 2 || features.rows() != labels.len() {
            return Err(LdbError::Data(format!(
                "{} labels for features of shape {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(LdbError::Data(format!("label {bad} out of range for {classes} classes")));
        }
        if let Some(&bad) = train.iter().chain(&val).find(|&&i| i >= labels.len()) {
            return Err(LdbError::Data(format!("split index {bad} out of range")));
        }
        Ok(Dataset {
            features,
            labels,
            classes,
            train,
            val,
            shuffle_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-sample feature shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.shuffle_seed
    }

    pub fn set_shuffle_seed(&mut self, seed: u64) {
        self.shuffle_seed = seed;
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        Ok(Batch {
            features: self.features.gather_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// Subtracts `mean[c]` and divides by `std[c]` per channel, where the
    /// channel is the first per-sample dimension.
    pub fn standardize(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let channels = self.sample_shape()[0];
        if mean.len() != channels || std.len() != channels || std.iter().any(|&s| s <= 0.0) {
            return Err(LdbError::Config(format!(
                "standardization needs {channels} means and positive stds"
            )));
        }
        let per_channel = self.features.row_len() / channels;
        for row in self.features.data_mut().chunks_exact_mut(channels * per_channel) {
            for (c, chunk) in row.chunks_exact_mut(per_channel).enumerate() {
                chunk.iter_mut().for_each(|v| *v = (*v - mean[c]) / std[c]);
            }
        }
        Ok(())
    }

    /// Seeded permutation of a split for `epoch`. Independent of batch size.
    pub fn epoch_order(&self, split: Split, epoch: u64) -> Vec<usize> {
        let idx = self.indices(split);
        let perm = RngStream::derive(self.shuffle_seed, Purpose::Shuffle, epoch).permutation(idx.len());
        perm.into_iter().map(|i| idx[i]).collect()
    }

    /// Shuffled mini-batches of the split; the final short batch is kept.
    pub fn batches(&self, split: Split, batch_size: usize, epoch: u64) -> Batches<'_> {
        Batches {
            ds: self,
            order: self.epoch_order(split, epoch),
            batch_size: batch_size.max(1),
            pos: 0,
        }
    }

    /// In-order mini-batches of the split, for evaluation.
    pub fn sequential_batches(&self, split: Split, batch_size: usize) -> Batches<'_> {
        Batches {
            ds: self,
            order: self.indices(split).to_vec(),
            batch_size: batch_size.max(1),
            pos: 0,
        }
    }
}

pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.ds.gather(&self.order[self.pos..end]).expect("indices validated at construction");
        self.pos = end;
        Some(batch)
    }
}

/// Gaussian clusters, one per class, with an 80/20 train/val split.
///
/// Class centers are standard normal in every coordinate; sample `i` has label
/// `i mod classes` and adds `noise_sigma`-scaled normal noise to its center.
pub fn synth_blobs(n: usize, classes: usize, dim: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || n < classes || dim == 0 {
        return Err(LdbError::Config(format!(
            "synth_blobs needs n >= classes >= 2 and dim >= 1 (n={n}, classes={classes}, dim={dim})"
        )));
    }
    if !(noise_sigma >= 0.0) {
        return Err(LdbError::Config(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let mut centers_rng = RngStream::derive(seed, Purpose::Synth, 0);
    let centers: Vec<f64> = (0..classes * dim).map(|_| centers_rng.next_normal()).collect();
    let mut noise_rng = RngStream::derive(seed, Purpose::Synth, 1);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for j in 0..dim {
            data.push(centers[c * dim + j] + noise_sigma * noise_rng.next_normal());
        }
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, classes, DEFAULT_VAL_FRACTION, seed)
}
