//! Dataset container, CSV ingestion, synthetic data generation, and the
//! class-balanced batch sampler.
//!
//! CSV contract: one item per line, `class_id,f_1,...,f_D`, no header, UTF-8,
//! LF or CRLF. Class ids are non-negative integers, features are decimal
//! reals.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::losses::MatchLabels;
use crate::matrix::{l2_norm, Matrix};

/// Labeled feature vectors. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    classes: Vec<u32>,
    features: Matrix,
    class_index: BTreeMap<u32, Vec<usize>>,
}

impl Dataset {
    /// Validates and indexes a set of labeled feature rows.
    pub fn new(classes: Vec<u32>, features: Matrix) -> Result<Self> {
        if classes.len() != features.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} feature rows",
                classes.len(),
                features.rows()
            )));
        }
        if features.cols() == 0 {
            return Err(Error::InvalidConfig("feature dimension is zero".into()));
        }
        if !features.is_finite() {
            return Err(Error::Numerical("dataset contains non-finite features".into()));
        }
        let mut class_index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (idx, &c) in classes.iter().enumerate() {
            class_index.entry(c).or_default().push(idx);
        }
        if class_index.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "dataset needs at least 2 classes, got {} (no negative pairs possible)",
                class_index.len()
            )));
        }
        Ok(Dataset {
            classes,
            features,
            class_index,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn class_of(&self, item: usize) -> u32 {
        self.classes[item]
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn class_index(&self) -> &BTreeMap<u32, Vec<usize>> {
        &self.class_index
    }

    /// Feature rows of the given items as a batch matrix.
    pub fn gather_features(&self, items: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(items.len(), self.dim());
        for (row, &item) in items.iter().enumerate() {
            out.row_mut(row).copy_from_slice(self.features.row(item));
        }
        out
    }

    /// Class labels of the given items.
    pub fn gather_labels(&self, items: &[usize]) -> MatchLabels {
        MatchLabels::new(items.iter().map(|&i| self.classes[i]).collect())
    }

    pub fn all_labels(&self) -> MatchLabels {
        MatchLabels::new(self.classes.clone())
    }

    /// Parses the CSV contract described in the module docs.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut classes = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut dim: Option<usize> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let class_field = fields.next().unwrap_or("");
            let class: u32 = class_field.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "line {}: class id `{}` is not a non-negative integer",
                    lineno + 1,
                    class_field
                ))
            })?;
            let mut feats = Vec::new();
            for field in fields {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Parse(format!(
                        "line {}: feature `{}` is not a number",
                        lineno + 1,
                        field
                    ))
                })?;
                feats.push(v);
            }
            if feats.is_empty() {
                return Err(Error::Parse(format!("line {}: no features", lineno + 1)));
            }
            match dim {
                None => dim = Some(feats.len()),
                Some(d) if d != feats.len() => {
                    return Err(Error::Parse(format!(
                        "line {}: ragged row with {} features, expected {}",
                        lineno + 1,
                        feats.len(),
                        d
                    )))
                }
                _ => {}
            }
            classes.push(class);
            rows.push(feats);
        }
        if rows.is_empty() {
            return Err(Error::Parse("no data rows".into()));
        }
        Dataset::new(classes, Matrix::from_rows(&rows)?)
    }

    /// Writes the dataset back out in the same CSV contract, full precision.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            let feats: Vec<String> = self.features.row(i).iter().map(f64::to_string).collect();
            writeln!(out, "{},{}", self.classes[i], feats.join(","))?;
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Synthetic dataset: class centroids drawn uniformly on the unit sphere,
    /// items as centroid plus isotropic Gaussian noise. Deterministic per
    /// seed.
    pub fn generate_synthetic(
        num_classes: usize,
        per_class: usize,
        dim: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if num_classes < 2 || per_class < 2 || dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "synthetic data needs >= 2 classes, >= 2 items per class, dim >= 2 \
                 (got {}, {}, {})",
                num_classes, per_class, dim
            )));
        }
        if noise_sigma < 0.0 || !noise_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise sigma must be finite and non-negative, got {}",
                noise_sigma
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut classes = Vec::with_capacity(num_classes * per_class);
        let mut features = Matrix::zeros(num_classes * per_class, dim);
        for class in 0..num_classes {
            let mut centroid: Vec<f64> = (0..dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = l2_norm(&centroid);
            // A zero-norm Gaussian draw has probability zero; guard anyway.
            if norm < 1e-12 {
                centroid[0] = 1.0;
            } else {
                for v in &mut centroid {
                    *v /= norm;
                }
            }
            for item in 0..per_class {
                let row = features.row_mut(class * per_class + item);
                for (d, r) in row.iter_mut().enumerate() {
                    let noise: f64 = rng.sample(StandardNormal);
                    *r = centroid[d] + noise_sigma * noise;
                }
                let _ = item;
                classes.push(class as u32);
            }
        }
        Dataset::new(classes, features)
    }
}

/// Class-balanced batch sampler.
///
/// Each epoch shuffles the class order and every class's item order, then
/// deals items by visiting classes round-robin, taking up to the per-batch
/// class cap from each on its turn. Every item is emitted exactly once per
/// epoch (apart from rare guarantee repairs, which defer an item to the next
/// epoch instead of dropping it). Batches are guaranteed to contain at least
/// two distinct classes and at least one class with two items, so downstream
/// pair splitting always finds both positives and negatives.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_size: usize,
    max_per_class: usize,
    /// Per-batch per-class cap: min(max_per_class, batch_size - 2). Leaving
    /// two slots for a second class makes single-class batches impossible.
    cap: usize,
    /// Item queues per class; `cursors[c]` points at the next unconsumed item.
    queues: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    class_order: Vec<usize>,
    class_cursor: usize,
    epoch: u64,
    rng: ChaCha8Rng,
    class_of_item: Vec<u32>,
}

impl BatchSampler {
    pub fn new(
        dataset: &Dataset,
        batch_size: usize,
        max_per_class: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size < 4 {
            return Err(Error::InvalidConfig(format!(
                "batch size must be >= 4, got {}",
                batch_size
            )));
        }
        if max_per_class < 2 {
            return Err(Error::InvalidConfig(format!(
                "max per class must be >= 2, got {}",
                max_per_class
            )));
        }
        if batch_size > dataset.len() {
            return Err(Error::InvalidConfig(format!(
                "batch size {} exceeds dataset size {}",
                batch_size,
                dataset.len()
            )));
        }
        let cap = max_per_class.min(batch_size - 2);
        let capacity: usize = dataset
            .class_index()
            .values()
            .map(|items| items.len().min(cap))
            .sum();
        if capacity < batch_size {
            return Err(Error::InvalidConfig(format!(
                "dataset too small: at most {} items per batch under the class cap, need {}",
                capacity, batch_size
            )));
        }
        if !dataset
            .class_index()
            .values()
            .any(|items| items.len() >= 2)
        {
            return Err(Error::InvalidConfig(
                "no class has two items; batches cannot contain a positive pair".into(),
            ));
        }
        let queues: Vec<Vec<usize>> = dataset.class_index().values().cloned().collect();
        let n_classes = queues.len();
        let mut sampler = BatchSampler {
            batch_size,
            max_per_class,
            cap,
            queues,
            cursors: vec![0; n_classes],
            class_order: (0..n_classes).collect(),
            class_cursor: 0,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            class_of_item: dataset.classes.clone(),
        };
        sampler.shuffle_epoch();
        Ok(sampler)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn max_per_class(&self) -> usize {
        self.max_per_class
    }

    fn shuffle_epoch(&mut self) {
        self.epoch += 1;
        self.class_order.shuffle(&mut self.rng);
        for queue in &mut self.queues {
            queue.shuffle(&mut self.rng);
        }
        self.cursors.iter_mut().for_each(|c| *c = 0);
        self.class_cursor = 0;
    }

    fn epoch_exhausted(&self) -> bool {
        self.cursors
            .iter()
            .zip(&self.queues)
            .all(|(&cur, q)| cur >= q.len())
    }

    fn remaining(&self, class: usize) -> usize {
        self.queues[class].len() - self.cursors[class]
    }

    /// Emits the next batch of item indices.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut batch: Vec<usize> = Vec::with_capacity(self.batch_size);
        // Consumption epoch per batch entry, for safe un-consumption.
        let mut entry_epoch: Vec<u64> = Vec::with_capacity(self.batch_size);
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();

        while batch.len() < self.batch_size {
            if self.epoch_exhausted() {
                self.shuffle_epoch();
            }
            // Find the next class in rotation that can still contribute.
            let n_classes = self.class_order.len();
            let mut advanced = 0;
            let class = loop {
                let c = self.class_order[self.class_cursor % n_classes];
                let class_id = self.class_of_queue(c);
                let in_batch = counts.get(&class_id).copied().unwrap_or(0);
                if self.remaining(c) > 0 && in_batch < self.cap {
                    break Some(c);
                }
                self.class_cursor += 1;
                advanced += 1;
                if advanced >= n_classes {
                    break None;
                }
            };
            let Some(class) = class else {
                // Every class is exhausted or capped for this batch; start the
                // next epoch and keep filling.
                self.shuffle_epoch();
                continue;
            };

            let class_id = self.class_of_queue(class);
            let in_batch = counts.get(&class_id).copied().unwrap_or(0);
            let space = self.batch_size - batch.len();
            let want = space.min(self.cap - in_batch).min(self.remaining(class));
            let mut took = 0;
            while took < want && self.remaining(class) > 0 {
                let item = self.queues[class][self.cursors[class]];
                self.cursors[class] += 1;
                if batch.contains(&item) {
                    // Re-offered across an epoch boundary while still in this
                    // batch; its turn already happened.
                    continue;
                }
                batch.push(item);
                entry_epoch.push(self.epoch);
                *counts.entry(class_id).or_insert(0) += 1;
                took += 1;
            }
            self.class_cursor += 1;
        }

        // The cap guarantees two distinct classes; a positive pair can still
        // be missing when every visited class had a single straggler left.
        if !counts.values().any(|&c| c >= 2) {
            self.repair_missing_pair(&mut batch, &mut entry_epoch, &mut counts);
        }
        debug_assert_eq!(batch.len(), self.batch_size);
        batch
    }

    fn class_of_queue(&self, queue_idx: usize) -> u32 {
        self.class_of_item[self.queues[queue_idx][0]]
    }

    fn queue_of_class(&self, class_id: u32) -> usize {
        (0..self.queues.len())
            .find(|&q| self.class_of_queue(q) == class_id)
            .expect("class id present")
    }

    /// Rare repair path: the filled batch has no same-class pair. Returns the
    /// last two items to their queues (or defers them to the next epoch) and
    /// pulls a same-class partner or a fresh pair instead.
    fn repair_missing_pair(
        &mut self,
        batch: &mut Vec<usize>,
        entry_epoch: &mut Vec<u64>,
        counts: &mut BTreeMap<u32, usize>,
    ) {
        for _ in 0..2 {
            let item = batch.pop().expect("batch size >= 4");
            let ep = entry_epoch.pop().expect("parallel to batch");
            let class_id = self.class_of_item[item];
            *counts.get_mut(&class_id).expect("counted") -= 1;
            if counts[&class_id] == 0 {
                counts.remove(&class_id);
            }
            // Un-consume when it was the most recent draw from its queue;
            // otherwise the item waits for the next epoch, whose queues still
            // contain it.
            if ep == self.epoch {
                let q = self.queue_of_class(class_id);
                if self.cursors[q] > 0 && self.queues[q][self.cursors[q] - 1] == item {
                    self.cursors[q] -= 1;
                }
            }
        }

        for attempt in 0..2 {
            // First choice: a pending partner for a class already in the
            // batch.
            let batch_classes: Vec<u32> =
                batch.iter().map(|&item| self.class_of_item[item]).collect();
            for class_id in batch_classes {
                let q = self.queue_of_class(class_id);
                if let Some(partner) = self.consume_pending(q, batch) {
                    batch.push(partner);
                    entry_epoch.push(self.epoch);
                    *counts.entry(class_id).or_insert(0) += 1;
                    self.fill_one_more(batch, entry_epoch, counts);
                    return;
                }
            }
            // Otherwise a fresh pair from any class with two pending items.
            for q in 0..self.queues.len() {
                if self.pending_outside_batch(q, batch) >= 2 {
                    let class_id = self.class_of_queue(q);
                    for _ in 0..2 {
                        let item = self.consume_pending(q, batch).expect("two pending items");
                        batch.push(item);
                        entry_epoch.push(self.epoch);
                        *counts.entry(class_id).or_insert(0) += 1;
                    }
                    return;
                }
            }
            if attempt == 0 {
                self.shuffle_epoch();
            }
        }
        unreachable!("constructor guarantees a class with two items");
    }

    fn pending_outside_batch(&self, q: usize, batch: &[usize]) -> usize {
        self.queues[q][self.cursors[q]..]
            .iter()
            .filter(|item| !batch.contains(item))
            .count()
    }

    /// Consumes and returns the first pending item of queue `q` that is not
    /// already in the batch, swapping it to the cursor so the queue keeps all
    /// of its items for future epochs.
    fn consume_pending(&mut self, q: usize, batch: &[usize]) -> Option<usize> {
        let start = self.cursors[q];
        let pos = self.queues[q][start..]
            .iter()
            .position(|item| !batch.contains(item))?;
        self.queues[q].swap(start, start + pos);
        let item = self.queues[q][start];
        self.cursors[q] += 1;
        Some(item)
    }

    fn fill_one_more(
        &mut self,
        batch: &mut Vec<usize>,
        entry_epoch: &mut Vec<u64>,
        counts: &mut BTreeMap<u32, usize>,
    ) {
        while batch.len() < self.batch_size {
            if self.epoch_exhausted() {
                self.shuffle_epoch();
            }
            let n_classes = self.class_order.len();
            let mut found = false;
            for step in 0..n_classes {
                let c = self.class_order[(self.class_cursor + step) % n_classes];
                let class_id = self.class_of_queue(c);
                let in_batch = counts.get(&class_id).copied().unwrap_or(0);
                if in_batch >= self.cap {
                    continue;
                }
                // Consume through any in-batch duplicates left by an epoch
                // roll.
                while self.remaining(c) > 0 {
                    let item = self.queues[c][self.cursors[c]];
                    self.cursors[c] += 1;
                    if batch.contains(&item) {
                        continue;
                    }
                    batch.push(item);
                    entry_epoch.push(self.epoch);
                    *counts.entry(class_id).or_insert(0) += 1;
                    found = true;
                    break;
                }
                if found {
                    break;
                }
            }
            if !found {
                self.shuffle_epoch();
            }
        }
    }
}
