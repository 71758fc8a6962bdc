//! Linear classification head over precomputed features.
//!
//! A flat head emits one logit per class. A grouped head emits one block per
//! group holding that group's classes followed by an `others` logit; softmax
//! and cross-entropy are applied block by block and summed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{remap_labels, FeatureDataset, GroupPartition};
use crate::error::{config_err, Error, Result};

/// Floor applied to probabilities inside `ln`.
pub const PROB_FLOOR: f64 = 1e-300;

pub const HEAD_MAGIC: &[u8; 4] = b"OODH";
pub const HEAD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HeadLayout {
    Flat { num_classes: usize },
    /// Real-class count per group; each block has one extra `others` slot.
    Grouped { group_sizes: Vec<usize> },
}

impl HeadLayout {
    pub fn grouped(partition: &GroupPartition) -> Self {
        HeadLayout::Grouped { group_sizes: partition.group_sizes() }
    }

    pub fn is_grouped(&self) -> bool {
        matches!(self, HeadLayout::Grouped { .. })
    }

    pub fn out_dim(&self) -> usize {
        match self {
            HeadLayout::Flat { num_classes } => *num_classes,
            HeadLayout::Grouped { group_sizes } => group_sizes.iter().map(|s| s + 1).sum(),
        }
    }

    pub fn num_blocks(&self) -> usize {
        match self {
            HeadLayout::Flat { .. } => 1,
            HeadLayout::Grouped { group_sizes } => group_sizes.len(),
        }
    }

    /// Logit index ranges of the softmax blocks.
    pub fn blocks(&self) -> Vec<Range<usize>> {
        match self {
            HeadLayout::Flat { num_classes } => vec![Range { start: 0, end: *num_classes }],
            HeadLayout::Grouped { group_sizes } => {
                let mut start = 0;
                group_sizes
                    .iter()
                    .map(|s| {
                        let r = start..start + s + 1;
                        start = r.end;
                        r
                    })
                    .collect()
            }
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            HeadLayout::Flat { num_classes } => *num_classes,
            HeadLayout::Grouped { group_sizes } => group_sizes.iter().sum(),
        }
    }

    /// Fails unless a grouped layout matches `partition` block for block.
    pub fn check_partition(&self, partition: &GroupPartition) -> Result<()> {
        match self {
            HeadLayout::Grouped { group_sizes } if *group_sizes == partition.group_sizes() => Ok(()),
            HeadLayout::Grouped { group_sizes } => Err(config_err!(
                "head group sizes {group_sizes:?} do not match partition {:?}",
                partition.group_sizes()
            )),
            HeadLayout::Flat { .. } => Err(config_err!("flat head has no group layout")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    layout: HeadLayout,
    /// out × D
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl LinearHead {
    pub fn zeros(layout: HeadLayout, dim: usize) -> Self {
        let out = layout.out_dim();
        Self { layout, weights: Array2::zeros((out, dim)), bias: Array1::zeros(out) }
    }

    pub fn from_parts(layout: HeadLayout, weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        let out = layout.out_dim();
        if weights.nrows() != out || bias.len() != out {
            return Err(config_err!(
                "layout needs {out} outputs, got weights {:?} and bias {}",
                weights.dim(),
                bias.len()
            ));
        }
        if weights.ncols() == 0 {
            return Err(config_err!("feature dimension must be at least 1"));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("head parameters must be finite".into()));
        }
        Ok(Self { layout, weights, bias })
    }

    pub fn layout(&self) -> &HeadLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.bias
    }

    /// Writes the `OODH` checkpoint: magic, version, mode (0 flat, 1 grouped),
    /// D, K, K group sizes (the class count for flat heads), then W row-major
    /// and b as little-endian f64.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(HEAD_MAGIC)?;
        w.write_all(&HEAD_VERSION.to_le_bytes())?;
        let (mode, sizes) = match &self.layout {
            HeadLayout::Flat { num_classes } => (0u32, vec![*num_classes]),
            HeadLayout::Grouped { group_sizes } => (1u32, group_sizes.clone()),
        };
        w.write_all(&mode.to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(sizes.len() as u32).to_le_bytes())?;
        for s in sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for v in self.weights.iter().chain(self.bias.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        let bad = |msg: &str| Error::load(path, msg.to_string());
        let mut cur = bytes.as_slice();
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated checkpoint"));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(4)? != HEAD_MAGIC {
            return Err(bad("bad magic, expected OODH"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
        if u32_at(take(4)?) != HEAD_VERSION as usize {
            return Err(bad("unsupported checkpoint version"));
        }
        let mode = u32_at(take(4)?);
        let dim = u32_at(take(4)?);
        let k = u32_at(take(4)?);
        let mut sizes = Vec::with_capacity(k);
        for _ in 0..k {
            sizes.push(u32_at(take(4)?));
        }
        let layout = match (mode, sizes.as_slice()) {
            (0, [c]) => HeadLayout::Flat { num_classes: *c },
            (1, s) if !s.is_empty() && s.iter().all(|&n| n > 0) => HeadLayout::Grouped { group_sizes: sizes },
            _ => return Err(bad("malformed layout descriptor")),
        };
        let out = layout.out_dim();
        let mut floats = Vec::with_capacity(out * dim + out);
        for _ in 0..out * dim + out {
            floats.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        if !take(1).is_err() {
            return Err(bad("trailing bytes after parameters"));
        }
        let bias = Array1::from(floats.split_off(out * dim));
        let weights = Array2::from_shape_vec((out, dim), floats).map_err(|e| bad(&e.to_string()))?;
        Self::from_parts(layout, weights, bias).map_err(|e| Error::load(path, e.to_string()))
    }
}

/// Logits `W·x + b` for every row of `features`.
pub fn forward_logits(head: &LinearHead, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if features.ncols() != head.dim() {
        return Err(config_err!("feature dimension {} does not match head dimension {}", features.ncols(), head.dim()));
    }
    // dot may return column-major output for degenerate shapes
    let mut logits = features.dot(&head.weights.t()).as_standard_layout().into_owned();
    logits += &head.bias;
    Ok(logits)
}

/// Max-subtracted softmax in place.
pub fn softmax_in_place(block: &mut [f64]) {
    let max = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in block.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in block.iter_mut() {
        *v /= sum;
    }
}

/// `ln Σ exp(v)` with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn flat_softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

/// Softmax within each group block (others slot included).
pub fn group_softmax(logits: &[f64], partition: &GroupPartition) -> Result<Vec<Vec<f64>>> {
    let layout = HeadLayout::grouped(partition);
    if logits.len() != layout.out_dim() {
        return Err(config_err!("{} logits do not match grouped layout of {}", logits.len(), layout.out_dim()));
    }
    Ok(block_softmax(logits, &layout))
}

pub(crate) fn block_softmax(logits: &[f64], layout: &HeadLayout) -> Vec<Vec<f64>> {
    layout
        .blocks()
        .into_iter()
        .map(|r| {
            let mut p = logits[r].to_vec();
            softmax_in_place(&mut p);
            p
        })
        .collect()
}

/// Applies per-block softmax to every row of a logit matrix.
pub(crate) fn block_softmax_rows(logits: &mut Array2<f64>, layout: &HeadLayout) {
    let blocks = layout.blocks();
    for mut row in logits.rows_mut() {
        let row = row.as_slice_mut().expect("standard layout");
        for r in &blocks {
            softmax_in_place(&mut row[r.clone()]);
        }
    }
}

/// `−Σ_k ln p^k[target_k]` for one sample, with probabilities floored at
/// [`PROB_FLOOR`].
pub fn group_ce_loss(probs: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if probs.len() != targets.len() {
        return Err(config_err!("{} probability blocks but {} targets", probs.len(), targets.len()));
    }
    let mut loss = 0.0;
    for (p, &t) in probs.iter().zip(targets) {
        let pt = *p.get(t).ok_or_else(|| config_err!("target {t} outside block of {}", p.len()))?;
        loss -= pt.max(PROB_FLOOR).ln();
    }
    Ok(loss)
}

/// Per-sample target index within each softmax block: the class label for a
/// flat head, the remapped group targets for a grouped one.
pub fn block_targets(dataset: &FeatureDataset, partition: Option<&GroupPartition>) -> Result<Array2<usize>> {
    match partition {
        None => Ok(Array2::from_shape_vec((dataset.len(), 1), dataset.labels().to_vec()).unwrap()),
        Some(p) => {
            let t = remap_labels(dataset, p)?;
            let k = p.num_groups();
            let flat: Vec<usize> = t.iter().flat_map(|s| s.iter().copied()).collect();
            Ok(Array2::from_shape_vec((dataset.len(), k), flat).unwrap())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

fn check_batch(head: &LinearHead, features: ArrayView2<'_, f64>, targets: ArrayView2<'_, usize>) -> Result<()> {
    if features.nrows() == 0 {
        return Err(config_err!("empty batch"));
    }
    if features.nrows() != targets.nrows() {
        return Err(config_err!("{} feature rows but {} target rows", features.nrows(), targets.nrows()));
    }
    let blocks = head.layout.blocks();
    if targets.ncols() != blocks.len() {
        return Err(config_err!("{} target columns for {} softmax blocks", targets.ncols(), blocks.len()));
    }
    for row in targets.rows() {
        for (t, r) in row.iter().zip(&blocks) {
            if *t >= r.len() {
                return Err(config_err!("target {t} outside block of {}", r.len()));
            }
        }
    }
    Ok(())
}

/// Mean summed block cross-entropy over the batch.
pub fn batch_loss(head: &LinearHead, features: ArrayView2<'_, f64>, targets: ArrayView2<'_, usize>) -> Result<f64> {
    check_batch(head, features, targets)?;
    let logits = forward_logits(head, features)?;
    let blocks = head.layout.blocks();
    let floor = PROB_FLOOR.ln();
    let mut total = 0.0;
    for (z, t) in logits.rows().into_iter().zip(targets.rows()) {
        let z = z.as_slice().expect("standard layout");
        for (r, &ti) in blocks.iter().zip(t.iter()) {
            let block = &z[r.clone()];
            total -= (block[ti] - log_sum_exp(block)).max(floor);
        }
    }
    Ok(total / features.nrows() as f64)
}

/// Analytic gradient of [`batch_loss`]: per block `(p − onehot(target)) xᵀ`,
/// averaged over the batch. Also returns the loss.
pub fn loss_gradient(
    head: &LinearHead,
    features: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, usize>,
) -> Result<(Gradient, f64)> {
    check_batch(head, features, targets)?;
    let n = features.nrows() as f64;
    let blocks = head.layout.blocks();
    let mut delta = forward_logits(head, features)?;
    let floor = PROB_FLOOR.ln();
    let mut loss = 0.0;
    for (mut z, t) in delta.rows_mut().into_iter().zip(targets.rows()) {
        let z = z.as_slice_mut().expect("standard layout");
        for (r, &ti) in blocks.iter().zip(t.iter()) {
            let block = &mut z[r.clone()];
            loss -= (block[ti] - log_sum_exp(block)).max(floor);
            softmax_in_place(block);
            block[ti] -= 1.0;
        }
    }
    delta /= n;
    let weights = delta.t().dot(&features);
    let bias = delta.sum_axis(Axis(0));
    Ok((Gradient { weights, bias }, loss / n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    /// Fractions of `steps` at which the learning rate is divided by `decay_factor`.
    pub decay_milestones: Vec<f64>,
    pub decay_factor: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// Steps per TrainingLog row.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 128,
            base_lr: 0.003,
            momentum: 0.9,
            decay_milestones: vec![0.3, 0.6, 0.9],
            decay_factor: 10.0,
            warmup_steps: 50,
            seed: 0,
            weight_decay: 0.0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(config_err!("steps, batch_size and log_every must be at least 1"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(config_err!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(config_err!("decay_factor must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(config_err!("weight_decay must be non-negative"));
        }
        let ms = &self.decay_milestones;
        if ms.iter().any(|&m| !(m > 0.0 && m < 1.0)) || ms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err!("milestones must be strictly increasing in (0, 1), got {ms:?}"));
        }
        Ok(())
    }
}

/// Linear warmup `(step+1)/warmup_steps`, then division by `decay_factor` at
/// every milestone already reached.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    let warm = if step < config.warmup_steps { (step + 1) as f64 / config.warmup_steps as f64 } else { 1.0 };
    let passed = config
        .decay_milestones
        .iter()
        .filter(|&&m| step as f64 >= m * config.steps as f64)
        .count();
    config.base_lr * warm / config.decay_factor.powi(passed as i32)
}

/// Momentum buffers, zero-initialized and shaped like the head.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity_w: Array2<f64>,
    pub velocity_b: Array1<f64>,
    pub step: usize,
}

impl OptimizerState {
    pub fn new(head: &LinearHead) -> Self {
        Self { velocity_w: Array2::zeros(head.weights.raw_dim()), velocity_b: Array1::zeros(head.bias.len()), step: 0 }
    }
}

/// `v ← m·v + (g + λ·θ)`, `θ ← θ − lr·v`.
pub fn sgd_step(
    head: &mut LinearHead,
    grad: &Gradient,
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grad.weights.dim() != head.weights.dim() || grad.bias.len() != head.bias.len() {
        return Err(config_err!("gradient shape does not match head"));
    }
    if state.velocity_w.dim() != head.weights.dim() || state.velocity_b.len() != head.bias.len() {
        return Err(config_err!("optimizer state shape does not match head"));
    }
    if let Some(bad) = grad.weights.iter().chain(grad.bias.iter()).position(|v| !v.is_finite()) {
        return Err(Error::Diverged { step: state.step, msg: format!("non-finite gradient entry {bad}") });
    }
    ndarray::Zip::from(&mut state.velocity_w)
        .and(&mut head.weights)
        .and(&grad.weights)
        .for_each(|v, p, &g| {
            *v = momentum * *v + (g + weight_decay * *p);
            *p -= lr * *v;
        });
    ndarray::Zip::from(&mut state.velocity_b)
        .and(&mut head.bias)
        .and(&grad.bias)
        .for_each(|v, p, &g| {
            *v = momentum * *v + (g + weight_decay * *p);
            *p -= lr * *v;
        });
    state.step += 1;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    /// Mean batch loss since the previous entry.
    pub loss: f64,
    /// Mean batch accuracy since the previous entry.
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,loss,accuracy\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{},{}\n", e.step, e.lr, e.loss, e.accuracy));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Trains a zero-initialized head with SGD + momentum. `partition = None`
/// trains a flat head. Fully deterministic in `config.seed`.
pub fn train(
    dataset: &FeatureDataset,
    partition: Option<&GroupPartition>,
    config: &TrainConfig,
) -> Result<(LinearHead, TrainingLog)> {
    config.validate()?;
    let layout = match partition {
        Some(p) => {
            if p.num_classes() != dataset.num_classes() {
                return Err(config_err!(
                    "partition covers {} classes, dataset has {}",
                    p.num_classes(),
                    dataset.num_classes()
                ));
            }
            HeadLayout::grouped(p)
        }
        None => HeadLayout::Flat { num_classes: dataset.num_classes() },
    };
    let targets = block_targets(dataset, partition)?;
    let mut head = LinearHead::zeros(layout, dataset.dim());
    let mut state = OptimizerState::new(&head);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut log = TrainingLog::default();
    let (mut loss_acc, mut acc_acc, mut since) = (0.0, 0.0, 0usize);

    for step in 0..config.steps {
        if cursor >= n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(n);
        let idx = &order[cursor..end];
        cursor = end;
        let xb = dataset.features().select(Axis(0), idx);
        let tb = targets.select(Axis(0), idx);

        let (grad, loss) = loss_gradient(&head, xb.view(), tb.view())?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, msg: format!("loss = {loss}") });
        }
        let preds = predict_batch(&head, xb.view(), partition)?;
        let correct = preds.iter().zip(idx).filter(|(p, &i)| p.class == dataset.labels()[i]).count();
        loss_acc += loss;
        acc_acc += correct as f64 / idx.len() as f64;
        since += 1;

        let lr = lr_at(step, config);
        sgd_step(&mut head, &grad, &mut state, lr, config.momentum, config.weight_decay)
            .map_err(|e| match e {
                Error::Diverged { msg, .. } => Error::Diverged { step, msg },
                other => other,
            })?;

        if (step + 1) % config.log_every == 0 || step + 1 == config.steps {
            log.entries.push(LogEntry { step, lr, loss: loss_acc / since as f64, accuracy: acc_acc / since as f64 });
            (loss_acc, acc_acc, since) = (0.0, 0.0, 0);
        }
    }
    Ok((head, log))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    /// Winning group; always 0 for a flat head.
    pub group: usize,
    /// Winning non-others probability.
    pub confidence: f64,
}

/// Group-wise prediction: in each group take the best non-others class, then
/// pick the group whose best class has the highest probability. Ties go to
/// the lowest group, then the lowest class. A flat head uses plain argmax.
pub fn predict(
    head: &LinearHead,
    features: ArrayView2<'_, f64>,
    partition: Option<&GroupPartition>,
) -> Result<Vec<Prediction>> {
    predict_batch(head, features, partition)
}

fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn predict_batch(
    head: &LinearHead,
    features: ArrayView2<'_, f64>,
    partition: Option<&GroupPartition>,
) -> Result<Vec<Prediction>> {
    let mut probs = forward_logits(head, features)?;
    match &head.layout {
        HeadLayout::Flat { .. } => {
            block_softmax_rows(&mut probs, &head.layout);
            Ok(probs
                .rows()
                .into_iter()
                .map(|p| {
                    let (class, confidence) = argmax_first(p.as_slice().unwrap());
                    Prediction { class, group: 0, confidence }
                })
                .collect())
        }
        HeadLayout::Grouped { .. } => {
            let partition = partition.ok_or_else(|| config_err!("grouped head needs its partition to predict"))?;
            head.layout.check_partition(partition)?;
            block_softmax_rows(&mut probs, &head.layout);
            let blocks = head.layout.blocks();
            Ok(probs
                .rows()
                .into_iter()
                .map(|p| {
                    let p = p.as_slice().unwrap();
                    let mut best = Prediction { class: 0, group: 0, confidence: f64::NEG_INFINITY };
                    for (k, r) in blocks.iter().enumerate() {
                        let valid = &p[r.start..r.end - 1];
                        let (local, conf) = argmax_first(valid);
                        if conf > best.confidence {
                            best = Prediction { class: partition.group_classes(k)[local], group: k, confidence: conf };
                        }
                    }
                    best
                })
                .collect())
        }
    }
}

/// Fraction of rows whose prediction matches the dataset label.
pub fn accuracy(head: &LinearHead, dataset: &FeatureDataset, partition: Option<&GroupPartition>) -> Result<f64> {
    let preds = predict(head, dataset.features(), partition)?;
    let correct = preds.iter().zip(dataset.labels()).filter(|(p, &l)| p.class == l).count();
    Ok(correct as f64 / dataset.len() as f64)
}
