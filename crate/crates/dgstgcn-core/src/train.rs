//! Training loop, evaluation metrics, and multi-stream score ensembling.
//!
//! Every stochastic choice derives from `TrainConfig::seed`: batch order
//! from a per-epoch stream, clip sampling from a per-(epoch, sample)
//! stream. That makes runs bit-reproducible and lets worker threads
//! prepare clips in any order without changing the result.

use crate::autodiff::Tape;
use crate::data::aug::{
    center_sample_indices, gather_frames, interp_frames, random_crop_positions,
    uniform_sample_indices,
};
use crate::data::format::ScoreFile;
use crate::data::{Dataset, DatasetSpec, SkeletonSequence};
use crate::error::{Error, Result};
use crate::net::Model;
use crate::optim::{cosine_lr, sgd_momentum_step};
use crate::tensor::{derive_seed, rng_from_seed, Scalar, Tensor};
use rand::seq::SliceRandom;
use std::time::Instant;

/// How training clips are drawn from a variable-length sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// One random frame per substring — the augmentation under study.
    Uniform,
    /// Contiguous random crop, linearly resampled: the ablation baseline.
    RandomCrop,
    /// Deterministic mid-substring frames: no augmentation.
    Center,
}

/// The classification objective.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    CrossEntropy,
    /// Inverse-frequency class weights (normalized to mean 1) with a
    /// `(1-p)^gamma` modulation.
    ClassBalancedFocal { gamma: f64 },
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Frames per training clip.
    pub input_length: usize,
    pub augmentation: Sampling,
    pub loss: LossKind,
    pub seed: u64,
    /// Threads preparing clips; results are identical for any value.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            input_length: 64,
            augmentation: Sampling::Uniform,
            loss: LossKind::CrossEntropy,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        if self.input_length == 0 {
            return Err(Error::config("input_length must be >= 1"));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::config("base_lr must be positive"));
        }
        if let LossKind::ClassBalancedFocal { gamma } = self.loss {
            if gamma < 0.0 {
                return Err(Error::config("focal gamma must be >= 0"));
            }
        }
        Ok(())
    }
}

/// One line of the JSONL training log.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    pub wall_ms: u64,
}

/// Inverse-frequency weights scaled to mean 1.
pub fn class_balance_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::config(
            "class-balanced loss needs every class populated",
        ));
    }
    let raw: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.iter().map(|w| w / mean).collect())
}

/// Pack clips (all of equal length) into a `[N*M, C, T, V]` batch with the
/// per-person alive mask; missing persons pad with zeros.
pub fn assemble_batch<E: Scalar>(
    spec: &DatasetSpec,
    clips: &[&SkeletonSequence],
) -> Result<(Tensor<E>, Vec<bool>, Vec<usize>)> {
    let (v, c, m) = (spec.num_joints, spec.channels, spec.max_persons);
    let t = clips
        .first()
        .map(|s| s.frames)
        .ok_or_else(|| Error::data("empty batch"))?;
    let n = clips.len();
    let mut x = Tensor::<E>::zeros(&[n * m, c, t, v]);
    let mut alive = vec![false; n * m];
    let mut labels = Vec::with_capacity(n);
    for (i, seq) in clips.iter().enumerate() {
        if seq.frames != t {
            return Err(Error::shape("clip lengths in batch", &[seq.frames], &[t]));
        }
        labels.push(seq.label);
        for p in 0..seq.persons.min(m) {
            let row = i * m + p;
            alive[row] = !seq.person_is_zero(v, c, p);
            let xd = x.data_mut();
            for ti in 0..t {
                for vi in 0..v {
                    for ci in 0..c {
                        let val = seq.at(v, c, p, ti, vi, ci);
                        xd[((row * c + ci) * t + ti) * v + vi] = E::from_f32(val);
                    }
                }
            }
        }
    }
    Ok((x, alive, labels))
}

/// Draw one training clip for `(epoch, sample_index)`; self-seeded, so any
/// preparation order gives the same clip.
fn sample_clip(
    data: &Dataset,
    idx: usize,
    epoch: usize,
    cfg: &TrainConfig,
) -> SkeletonSequence {
    let seq = &data.samples[idx];
    let mut rng = rng_from_seed(derive_seed(cfg.seed, epoch as u64, idx as u64));
    match cfg.augmentation {
        Sampling::Uniform => {
            let ix = uniform_sample_indices(seq.frames, cfg.input_length, &mut rng);
            gather_frames(seq, &data.spec, &ix)
        }
        Sampling::RandomCrop => {
            let pos = random_crop_positions(seq.frames, cfg.input_length, &mut rng);
            interp_frames(seq, &data.spec, &pos)
        }
        Sampling::Center => {
            let ix = center_sample_indices(seq.frames, cfg.input_length);
            gather_frames(seq, &data.spec, &ix)
        }
    }
}

/// Prepare the clips of one batch, fanning out over `workers` threads when
/// asked to. Order-independent by construction.
fn prepare_clips(
    data: &Dataset,
    batch: &[usize],
    epoch: usize,
    cfg: &TrainConfig,
) -> Vec<SkeletonSequence> {
    if cfg.workers <= 1 || batch.len() < 2 {
        return batch.iter().map(|&i| sample_clip(data, i, epoch, cfg)).collect();
    }
    let chunk = batch.len().div_ceil(cfg.workers);
    let mut out: Vec<Option<SkeletonSequence>> = vec![None; batch.len()];
    std::thread::scope(|scope| {
        for (slot, ids) in out.chunks_mut(chunk).zip(batch.chunks(chunk)) {
            scope.spawn(move || {
                for (o, &i) in slot.iter_mut().zip(ids) {
                    *o = Some(sample_clip(data, i, epoch, cfg));
                }
            });
        }
    });
    out.into_iter().map(|c| c.unwrap()).collect()
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Run the full schedule, invoking `sink` once per epoch (for JSONL
/// streaming). On a non-finite loss the model rolls back to the end of the
/// last clean epoch and a numerical error comes back; the log up to that
/// point has already reached the sink.
pub fn train<E: Scalar>(
    model: &mut Model<E>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut sink: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    data.validate()?;
    if data.samples.is_empty() {
        return Err(Error::data("training needs a non-empty dataset"));
    }
    if data.spec.channels != model.cfg.in_channels
        || data.spec.num_joints != model.cfg.num_joints
        || data.spec.max_persons != model.cfg.max_persons
        || data.spec.n_classes != model.cfg.num_classes
    {
        return Err(Error::config(
            "dataset spec does not match the model's input contract",
        ));
    }
    let weights: Option<Vec<E>> = match cfg.loss {
        LossKind::CrossEntropy => None,
        LossKind::ClassBalancedFocal { .. } => Some(
            class_balance_weights(&data.class_counts())?
                .into_iter()
                .map(E::from_f64)
                .collect(),
        ),
    };

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut snapshot = (model.store.clone(), model.buffers.clone());
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cosine_lr(epoch, cfg.epochs, cfg.base_lr)?;
        let mut order: Vec<usize> = (0..data.samples.len()).collect();
        let mut epoch_rng = rng_from_seed(derive_seed(cfg.seed, epoch as u64, 0xba7c));
        order.shuffle(&mut epoch_rng);
        let mut fwd_rng = rng_from_seed(derive_seed(cfg.seed, epoch as u64, 0xd0));

        let (mut loss_sum, mut hits, mut seen) = (0.0f64, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let clips = prepare_clips(data, batch, epoch, cfg);
            let refs: Vec<&SkeletonSequence> = clips.iter().collect();
            let (x, alive, labels) = assemble_batch::<E>(&data.spec, &refs)?;

            let mut tape = Tape::new();
            let logits = model.forward(&mut tape, x, &alive, true, &mut fwd_rng)?;
            let loss = match (&cfg.loss, &weights) {
                (LossKind::CrossEntropy, _) => tape.cross_entropy(logits, &labels)?,
                (LossKind::ClassBalancedFocal { gamma }, Some(w)) => {
                    tape.focal_loss(logits, &labels, w, *gamma)?
                }
                _ => unreachable!("weights exist exactly for the focal loss"),
            };
            let loss_val = tape.value(loss).data()[0].to_f64();
            if !loss_val.is_finite() {
                model.store = snapshot.0;
                model.buffers = snapshot.1;
                return Err(Error::numerical(format!(
                    "loss diverged at epoch {epoch}; rolled back to the last clean epoch"
                )));
            }

            model.store.zero_grads();
            tape.backward(loss, Some(&mut model.store), &[])?;
            sgd_momentum_step(&mut model.store, lr, cfg.momentum, cfg.weight_decay)?;

            let lv = tape.value(logits);
            let n_classes = lv.dim(1);
            for (i, &label) in labels.iter().enumerate() {
                let row: Vec<f64> = lv.data()[i * n_classes..(i + 1) * n_classes]
                    .iter()
                    .map(|&v| v.to_f64())
                    .collect();
                hits += (argmax_row(&row) == label) as usize;
            }
            loss_sum += loss_val * labels.len() as f64;
            seen += labels.len();
        }

        snapshot = (model.store.clone(), model.buffers.clone());
        let record = EpochRecord {
            epoch,
            lr,
            loss: loss_sum / seen as f64,
            train_acc: hits as f64 / seen as f64,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        sink(&record);
        log.push(record);
    }
    Ok(log)
}

/// Evaluation metrics; rows of `confusion` are true classes, columns
/// predictions.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    /// Average per-class recall over classes with support.
    pub mean_class_acc: f64,
    pub confusion: Vec<Vec<usize>>,
    pub loss: f64,
    pub n_samples: usize,
}

fn report_from_predictions(
    n_classes: usize,
    labels: &[usize],
    predictions: &[usize],
    loss: f64,
) -> EvalReport {
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&l, &p) in labels.iter().zip(predictions) {
        confusion[l][p] += 1;
    }
    let hits: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let mut class_accs = Vec::new();
    for (c, row) in confusion.iter().enumerate() {
        let support: usize = row.iter().sum();
        if support > 0 {
            class_accs.push(row[c] as f64 / support as f64);
        }
    }
    EvalReport {
        top1: hits as f64 / labels.len() as f64,
        mean_class_acc: class_accs.iter().sum::<f64>() / class_accs.len().max(1) as f64,
        confusion,
        loss,
        n_samples: labels.len(),
    }
}

/// Deterministic evaluation: center-sampled clips, inference-mode forward,
/// no augmentation. Also returns the raw logits for ensembling.
pub fn evaluate<E: Scalar>(
    model: &mut Model<E>,
    data: &Dataset,
    input_length: usize,
    batch_size: usize,
) -> Result<(EvalReport, ScoreFile)> {
    data.validate()?;
    if data.samples.is_empty() {
        return Err(Error::data("evaluation needs a non-empty dataset"));
    }
    let n_classes = model.cfg.num_classes;
    let mut rng = rng_from_seed(0); // never drawn from: no dropout in eval
    let mut labels = Vec::with_capacity(data.samples.len());
    let mut predictions = Vec::with_capacity(data.samples.len());
    let mut scores = Vec::with_capacity(data.samples.len() * n_classes);
    let mut nll_sum = 0.0f64;

    let order: Vec<usize> = (0..data.samples.len()).collect();
    for batch in order.chunks(batch_size.max(1)) {
        let clips: Vec<SkeletonSequence> = batch
            .iter()
            .map(|&i| {
                let seq = &data.samples[i];
                let ix = center_sample_indices(seq.frames, input_length);
                gather_frames(seq, &data.spec, &ix)
            })
            .collect();
        let refs: Vec<&SkeletonSequence> = clips.iter().collect();
        let (x, alive, batch_labels) = assemble_batch::<E>(&data.spec, &refs)?;
        let mut tape = Tape::new();
        let logits = model.forward(&mut tape, x, &alive, false, &mut rng)?;
        let lv = tape.value(logits);
        for (i, &label) in batch_labels.iter().enumerate() {
            let row: Vec<f64> = lv.data()[i * n_classes..(i + 1) * n_classes]
                .iter()
                .map(|&v| v.to_f64())
                .collect();
            predictions.push(argmax_row(&row));
            labels.push(label);
            nll_sum += nll_of(&row, label);
            scores.extend(row.iter().map(|&v| v as f32));
        }
    }

    let loss = nll_sum / labels.len() as f64;
    let report = report_from_predictions(n_classes, &labels, &predictions, loss);
    let score_file = ScoreFile {
        n_classes,
        scores,
        labels: labels.iter().map(|&l| l as u32).collect(),
    };
    Ok((report, score_file))
}

/// Stable `-log softmax(row)[label]`.
fn nll_of(row: &[f64], label: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - row[label]
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
    row.iter().map(|v| (v - max).exp() / z).collect()
}

/// Fuse score files: softmax-normalize each stream, weighted-sum, argmax.
/// Files must agree on sample count, class count, and labels. Empty
/// `weights` means all ones.
pub fn ensemble(files: &[ScoreFile], weights: &[f64]) -> Result<EvalReport> {
    let first = files.first().ok_or_else(|| Error::data("ensemble of zero score files"))?;
    let weights: Vec<f64> = if weights.is_empty() {
        vec![1.0; files.len()]
    } else if weights.len() == files.len() {
        weights.to_vec()
    } else {
        return Err(Error::data(format!(
            "{} weights for {} score files",
            weights.len(),
            files.len()
        )));
    };
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::config("ensemble weights must be positive"));
    }
    let n = first.labels.len();
    let c = first.n_classes;
    for f in files {
        if f.labels.len() != n || f.n_classes != c {
            return Err(Error::data("score files disagree on sample or class counts"));
        }
        if f.labels != first.labels {
            return Err(Error::data("score files carry different label orders"));
        }
    }

    let wsum: f64 = weights.iter().sum();
    let mut labels = Vec::with_capacity(n);
    let mut predictions = Vec::with_capacity(n);
    let mut nll_sum = 0.0f64;
    for i in 0..n {
        let mut fused = vec![0.0f64; c];
        for (f, &w) in files.iter().zip(&weights) {
            let row: Vec<f64> = f.scores[i * c..(i + 1) * c].iter().map(|&v| v as f64).collect();
            for (acc, p) in fused.iter_mut().zip(softmax_row(&row)) {
                *acc += w * p;
            }
        }
        let label = first.labels[i] as usize;
        labels.push(label);
        predictions.push(argmax_row(&fused));
        nll_sum -= (fused[label] / wsum).max(f64::MIN_POSITIVE).ln();
    }
    Ok(report_from_predictions(
        c,
        &labels,
        &predictions,
        nll_sum / n as f64,
    ))
}
