//! Multi-stage partition training with weight reuse.
//!
//! Stage `i` trains backbone segment `i` and exit branch `i` on top of the
//! segments trained in earlier stages. In [`UpdateMode::FreezePrior`] every
//! earlier parameter is frozen; in [`UpdateMode::ConditionalUpdate`] segment
//! `i - 1` and its exit keep training, and their new weights are kept only
//! if exit `i - 1` measurably improves.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::elastic::ElasticNetwork;
use crate::error::{Error, Result};
use crate::tinynn::{batch_cross_entropy, clip_grad_norm, fnv1a, read_checkpoint, write_checkpoint, ForwardCtx, Parameter, Sgd, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    /// Mode (a): earlier partitions are frozen.
    FreezePrior,
    /// Mode (b): the previous partition is updated only if its exit improves.
    ConditionalUpdate,
}

impl UpdateMode {
    pub fn name(self) -> &'static str {
        match self {
            UpdateMode::FreezePrior => "freeze_prior",
            UpdateMode::ConditionalUpdate => "conditional_update",
        }
    }
}

impl fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freeze_prior" | "a" => Ok(UpdateMode::FreezePrior),
            "conditional_update" | "b" => Ok(UpdateMode::ConditionalUpdate),
            _ => Err(Error::invalid(format!("unknown train mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: UpdateMode,
    /// Target eval accuracy per exit.
    pub acc_thresholds: Vec<f64>,
    pub max_epochs_per_stage: usize,
    pub lr: f32,
    /// Epochs (within a stage) at which the learning rate is multiplied by `lr_gamma`.
    pub milestones: Vec<usize>,
    pub lr_gamma: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs spent fitting each slot's alternative operator blocks to the
    /// reference block after a stage (0 leaves them untrained).
    pub distill_epochs: usize,
    pub distill_lr: f32,
    /// Evaluate on at most this many eval samples per epoch.
    pub eval_samples: usize,
    /// Global gradient-norm clip applied before every step.
    pub clip_norm: Option<f32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: UpdateMode::FreezePrior,
            acc_thresholds: vec![0.85, 0.92, 0.95, 0.95],
            max_epochs_per_stage: 8,
            lr: 0.05,
            milestones: vec![5],
            lr_gamma: 0.2,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            seed: 0,
            distill_epochs: 3,
            distill_lr: 0.05,
            eval_samples: usize::MAX,
            clip_norm: Some(2.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, exits: usize) -> Result<()> {
        if self.acc_thresholds.len() != exits {
            return Err(Error::invalid(format!(
                "{} accuracy thresholds for {exits} exits",
                self.acc_thresholds.len()
            )));
        }
        if let Some(t) = self.acc_thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::invalid(format!("accuracy threshold {t} outside (0, 1]")));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid("lr must be finite and >= 0"));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f32 {
        let drops = self.milestones.iter().filter(|m| epoch >= **m).count();
        self.lr * self.lr_gamma.powi(drops as i32)
    }
}

/// One partition `p_i`: a contiguous range of backbone layers (active path)
/// plus its exit branch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub index: usize,
    pub layers: Range<usize>,
    pub exit: usize,
    pub param_names: Vec<String>,
}

pub fn partition_network(net: &ElasticNetwork) -> Vec<Partition> {
    let mut start = 0;
    net.segments()
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let n = seg.active_layer_count();
            let p = Partition {
                index: i + 1,
                layers: start..start + n,
                exit: i + 1,
                param_names: seg.backbone_params().map(|p| p.name.clone()).collect(),
            };
            start += n;
            p
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub epochs: usize,
    /// Eval accuracy of exit `stage` when the stage finished.
    pub acc: f64,
    pub seconds: f64,
    /// False when the threshold was not reached within the epoch budget.
    pub reached: bool,
    /// Mode (b): whether the previous partition's new weights were kept.
    pub prior_updated: Option<bool>,
    /// Stored per-exit accuracies after this stage (entries beyond `stage` are 0).
    pub stored_acc: Vec<f64>,
    pub frozen: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub stages: Vec<StageReport>,
}

impl TrainReport {
    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    pub fn total_seconds(&self) -> f64 {
        self.stages.iter().map(|s| s.seconds).sum()
    }

    /// CSV with header `stage,epochs,acc,seconds`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stage", "epochs", "acc", "seconds"])?;
        for s in &self.stages {
            w.write_record([
                s.stage.to_string(),
                s.epochs.to_string(),
                format!("{:.6}", s.acc),
                format!("{:.3}", s.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// SHA-256 over names, shapes and value bits of `params`.
pub fn param_digest<'a>(params: impl IntoIterator<Item = &'a Parameter>) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.name.as_bytes());
        for d in p.value.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

pub(crate) fn derive_seed(seed: u64, tag: &str, index: usize) -> u64 {
    seed ^ fnv1a(format!("{tag}:{index}").as_bytes())
}

/// Eval accuracy of `exit` under the active operators, on at most `limit` samples.
pub fn exit_accuracy(net: &mut ElasticNetwork, eval: &Dataset, exit: usize, limit: usize) -> Result<f64> {
    let saved = net.active_variant();
    let sub;
    let data = if eval.len() > limit {
        sub = eval.head(limit);
        &sub
    } else {
        eval
    };
    let acc = net.exit_accuracies_upto(data.images(), data.labels(), exit, 250);
    net.apply_variant(&saved)?;
    acc
}

fn set_frozen_segment(net: &mut ElasticNetwork, seg: usize, frozen: bool) {
    let s = &mut net.segments_mut()[seg];
    s.backbone_params_mut().for_each(|p| p.frozen = frozen);
    s.exit_params_mut().for_each(|p| p.frozen = frozen);
}

fn reset_momentum(net: &mut ElasticNetwork) {
    net.params_mut().for_each(Parameter::reset_momentum);
}

fn snapshot(net: &ElasticNetwork, seg: usize) -> Vec<Tensor> {
    let s = &net.segments()[seg];
    s.backbone_params()
        .chain(s.exit().layers().params())
        .map(|p| p.value.clone())
        .collect()
}

fn restore(net: &mut ElasticNetwork, seg: usize, values: Vec<Tensor>) {
    let s = &mut net.segments_mut()[seg];
    let mut it = values.into_iter();
    for p in s.backbone_params_mut() {
        p.value = it.next().expect("snapshot length");
    }
    for p in s.exit_params_mut() {
        p.value = it.next().expect("snapshot length");
    }
}

/// One epoch over `train` with the given exits contributing to the loss.
/// Returns the mean loss.
fn run_epoch(
    net: &mut ElasticNetwork,
    train: &Dataset,
    exits: &[usize],
    opt: &Sgd,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    ctx: &mut ForwardCtx,
) -> Result<f32> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0f32;
    let mut batches = 0;
    for idx in order.chunks(config.batch_size) {
        let (x, labels) = train.batch(idx);
        net.zero_grad();
        let logits = net.forward_exits(&x, exits, ctx)?;
        let mut grads = Vec::with_capacity(exits.len());
        for (e, l) in exits.iter().zip(&logits) {
            let (loss, _, g) = batch_cross_entropy(l, &labels)?;
            total += loss;
            grads.push((*e, g));
        }
        net.backward_exits(&grads)?;
        if let Some(max) = config.clip_norm {
            clip_grad_norm(net.params_mut(), max);
        }
        opt.step(net.params_mut())?;
        batches += 1;
    }
    Ok(total / batches.max(1) as f32)
}

/// Fit every non-reference operator block of the slot in segment `seg`
/// (0-based) to reproduce the reference block's output (mean squared
/// error), with everything upstream fixed. Returns the final-epoch MSE per
/// block.
fn distill_slot(
    net: &mut ElasticNetwork,
    seg: usize,
    train: &Dataset,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    let Some(reference) = net.segments()[seg].slot().map(|s| s.active) else {
        return Ok(Vec::new());
    };
    let nblocks = net.segments()[seg].slot().map_or(0, |s| s.blocks.len());
    let students: Vec<usize> = (0..nblocks).filter(|b| *b != reference).collect();
    {
        let slot = net.segments_mut()[seg].slot.as_mut().expect("slot");
        for &b in &students {
            for p in slot.blocks[b].1.params_mut() {
                p.frozen = false;
                p.reset_momentum();
            }
        }
    }
    let mut mse = vec![0.0f32; students.len()];
    let mut eval_ctx = ForwardCtx::eval();
    let mut rec_ctx = ForwardCtx::eval_recording();
    for epoch in 0..config.distill_epochs {
        let opt = Sgd::new(config.distill_lr, config.momentum, 0.0);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(rng);
        mse.iter_mut().for_each(|m| *m = 0.0);
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let (x, _) = train.batch(idx);
            let h = net.slot_input(&x, seg)?;
            let slot = net.segments_mut()[seg].slot.as_mut().expect("slot");
            let target = slot.blocks[reference].1.forward(&h, &mut eval_ctx)?;
            for (k, &b) in students.iter().enumerate() {
                let block = &mut slot.blocks[b].1;
                block.params_mut().for_each(Parameter::zero_grad);
                let y = block.forward(&h, &mut rec_ctx)?;
                let scale = 2.0 / y.numel() as f32;
                let mut err = 0.0f64;
                let g: Vec<f32> = y
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, t)| {
                        err += ((a - t) as f64).powi(2);
                        scale * (a - t)
                    })
                    .collect();
                mse[k] += (err / y.numel() as f64) as f32;
                block.backward(&Tensor::new(y.shape().to_vec(), g)?, false)?;
                if let Some(max) = config.clip_norm {
                    clip_grad_norm(block.params_mut(), max);
                }
                opt.step(block.params_mut())?;
            }
            batches += 1;
        }
        mse.iter_mut().for_each(|m| *m /= batches.max(1) as f32);
        log::debug!("distill seg{} epoch {}: mse {:?}", seg + 1, epoch + 1, mse);
    }
    Ok(mse)
}

/// Freeze every operator block that is not active, so that only the
/// reference path trains under the classification loss.
fn freeze_inactive_blocks(net: &mut ElasticNetwork) {
    for seg in net.segments_mut() {
        if let Some(slot) = seg.slot.as_mut() {
            let active = slot.active;
            for (b, (_, block)) in slot.blocks.iter_mut().enumerate() {
                if b != active {
                    block.params_mut().for_each(|p| p.frozen = true);
                }
            }
        }
    }
}

/// Train stage `i` (1-based). `stored` holds the stored per-exit accuracy
/// record `Acc_j`, updated in place. Accuracy is measured with the
/// network's active operators (the reference path).
pub fn train_stage(
    i: usize,
    net: &mut ElasticNetwork,
    train: &Dataset,
    eval: &Dataset,
    config: &TrainConfig,
    stored: &mut [f64],
) -> Result<StageReport> {
    let n = net.num_exits();
    config.validate(n)?;
    if i == 0 || i > n {
        return Err(Error::invalid(format!("stage {i} outside 1..={n}")));
    }
    if stored.len() != n {
        return Err(Error::invalid("stored accuracy record has wrong length"));
    }
    if train.is_empty() || eval.is_empty() {
        return Err(Error::invalid("empty train or eval split"));
    }
    let started = Instant::now();
    let conditional = config.mode == UpdateMode::ConditionalUpdate && i > 1;
    for seg in 0..n {
        let trainable = seg + 1 == i || (conditional && seg + 2 == i);
        set_frozen_segment(net, seg, !trainable);
    }
    freeze_inactive_blocks(net);
    reset_momentum(net);
    let frozen: Vec<String> = net.params().filter(|p| p.frozen).map(|p| p.name.clone()).collect();
    let prior = conditional.then(|| snapshot(net, i - 2));
    let exits: Vec<usize> = if conditional { vec![i - 1, i] } else { vec![i] };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "stage", i));
    let mut ctx = ForwardCtx::train(derive_seed(config.seed, "dropout", i));
    let mut epochs = 0;
    let mut acc = 0.0;
    let mut reached = false;
    while epochs < config.max_epochs_per_stage {
        let opt = Sgd::new(config.lr_at(epochs), config.momentum, config.weight_decay);
        let loss = run_epoch(net, train, &exits, &opt, config, &mut rng, &mut ctx)?;
        epochs += 1;
        acc = exit_accuracy(net, eval, i, config.eval_samples)?;
        log::debug!("stage {i} epoch {epochs}: loss {loss:.4}, acc {acc:.4}");
        if acc >= config.acc_thresholds[i - 1] {
            reached = true;
            break;
        }
    }

    let mut prior_updated = None;
    if let Some(old) = prior {
        let fresh = exit_accuracy(net, eval, i - 1, config.eval_samples)?;
        if fresh > stored[i - 2] {
            stored[i - 2] = fresh;
            prior_updated = Some(true);
            // the previous slot's reference changed; refit its alternatives
            set_frozen_segment(net, i - 2, true);
            distill_slot(net, i - 2, train, config, &mut rng)?;
        } else {
            restore(net, i - 2, old);
            prior_updated = Some(false);
        }
        acc = exit_accuracy(net, eval, i, config.eval_samples)?;
        reached = acc >= config.acc_thresholds[i - 1];
    }
    if epochs == 0 {
        acc = exit_accuracy(net, eval, i, config.eval_samples)?;
    }
    set_frozen_segment(net, i - 1, true);
    distill_slot(net, i - 1, train, config, &mut rng)?;
    stored[i - 1] = acc;
    if !reached {
        log::warn!(
            "stage {i}: accuracy {acc:.4} below threshold {} after {epochs} epochs",
            config.acc_thresholds[i - 1]
        );
    }
    net.params_mut().for_each(|p| p.frozen = false);
    Ok(StageReport {
        stage: i,
        epochs,
        acc,
        seconds: started.elapsed().as_secs_f64(),
        reached,
        prior_updated,
        stored_acc: stored.to_vec(),
        frozen,
    })
}

/// Path of the checkpoint written after stage `stage`.
pub fn stage_path(prefix: &Path, stage: usize) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!(".stage{stage}"));
    PathBuf::from(s)
}

const META_ACC: &str = "__meta.acc";
const META_REPORT: &str = "__meta.report";

fn f64_bits(v: f64) -> [f32; 2] {
    let b = v.to_bits();
    [f32::from_bits((b >> 32) as u32), f32::from_bits(b as u32)]
}

fn bits_f64(hi: f32, lo: f32) -> f64 {
    f64::from_bits(((hi.to_bits() as u64) << 32) | lo.to_bits() as u64)
}

fn save_stage(prefix: &Path, net: &ElasticNetwork, report: &TrainReport, stored: &[f64]) -> Result<()> {
    let acc = Tensor::new(vec![stored.len(), 2], stored.iter().flat_map(|v| f64_bits(*v)).collect())?;
    // per stage: epochs, reached, prior_updated (-1 none / 0 / 1), acc bits, seconds bits
    let mut rows = Vec::new();
    for s in &report.stages {
        rows.push(s.epochs as f32);
        rows.push(s.reached as u8 as f32);
        rows.push(s.prior_updated.map_or(-1.0, |u| u as u8 as f32));
        rows.extend(f64_bits(s.acc));
        rows.extend(f64_bits(s.seconds));
    }
    let meta = Tensor::new(vec![report.stages.len(), 7], rows)?;
    let stage = report.stages.len();
    let tmp = stage_path(prefix, stage).with_extension("tmp");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
    write_checkpoint(
        &mut file,
        net.params()
            .map(|p| (p.name.as_str(), &p.value))
            .chain([(META_ACC, &acc), (META_REPORT, &meta)]),
    )?;
    std::io::Write::flush(&mut file)?;
    drop(file);
    std::fs::rename(&tmp, stage_path(prefix, stage))?;
    Ok(())
}

fn load_stage(path: &Path, net: &mut ElasticNetwork) -> Result<(TrainReport, Vec<f64>)> {
    let entries = read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))?;
    let extra = net.load_params(&entries)?;
    let get = |name: &str| {
        entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Corrupt(format!("{}: missing {name}", path.display())))
    };
    if let Some(unknown) = extra.iter().find(|n| !n.starts_with("__meta.")) {
        return Err(Error::Corrupt(format!("{}: unknown tensor {unknown}", path.display())));
    }
    let acc = get(META_ACC)?;
    let stored: Vec<f64> = acc.data().chunks(2).map(|c| bits_f64(c[0], c[1])).collect();
    let meta = get(META_REPORT)?;
    let mut report = TrainReport::default();
    for (k, r) in meta.data().chunks(7).enumerate() {
        let stage = k + 1;
        let mut stage_acc = stored.clone();
        stage_acc.iter_mut().skip(stage).for_each(|v| *v = 0.0);
        report.stages.push(StageReport {
            stage,
            epochs: r[0] as usize,
            reached: r[1] > 0.5,
            prior_updated: (r[2] >= 0.0).then_some(r[2] > 0.5),
            acc: bits_f64(r[3], r[4]),
            seconds: bits_f64(r[5], r[6]),
            stored_acc: stage_acc,
            frozen: Vec::new(),
        });
    }
    Ok((report, stored))
}

/// Run every stage in order. With `checkpoints`, a `.stageN` file is
/// written after each stage; with `resume`, training restarts after the
/// last stage checkpoint found.
pub fn pretrain_all(
    net: &mut ElasticNetwork,
    train: &Dataset,
    eval: &Dataset,
    config: &TrainConfig,
    checkpoints: Option<&Path>,
    resume: bool,
) -> Result<TrainReport> {
    let n = net.num_exits();
    config.validate(n)?;
    let mut report = TrainReport::default();
    let mut stored = vec![0.0; n];
    let mut first = 1;
    if let (Some(prefix), true) = (checkpoints, resume) {
        if let Some(done) = (1..=n).rev().find(|s| stage_path(prefix, *s).exists()) {
            let (r, s) = load_stage(&stage_path(prefix, done), net)?;
            if r.stages.len() != done {
                return Err(Error::Corrupt(format!("stage checkpoint {done} holds {} stages", r.stages.len())));
            }
            report = r;
            stored = s;
            first = done + 1;
        }
    }
    for i in first..=n {
        let stage = train_stage(i, net, train, eval, config, &mut stored)?;
        log::info!("stage {i}: {} epochs, acc {:.4}, {:.1}s", stage.epochs, stage.acc, stage.seconds);
        report.stages.push(stage);
        if let Some(prefix) = checkpoints {
            save_stage(prefix, net, &report, &stored)?;
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonolithicReport {
    pub epochs: usize,
    pub acc: Vec<f64>,
    pub seconds: f64,
}

/// End-to-end training of every segment and exit at once (summed exit
/// losses), stopping once all exits reach their thresholds or after
/// `epoch_budget` epochs.
pub fn train_monolithic(
    net: &mut ElasticNetwork,
    train: &Dataset,
    eval: &Dataset,
    config: &TrainConfig,
    epoch_budget: usize,
) -> Result<MonolithicReport> {
    let n = net.num_exits();
    config.validate(n)?;
    let started = Instant::now();
    net.params_mut().for_each(|p| p.frozen = false);
    freeze_inactive_blocks(net);
    reset_momentum(net);
    let exits: Vec<usize> = (1..=n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "monolithic", 0));
    let mut ctx = ForwardCtx::train(derive_seed(config.seed, "dropout", 0));
    let mut acc = vec![0.0; n];
    let mut epochs = 0;
    let sub;
    let data = if eval.len() > config.eval_samples {
        sub = eval.head(config.eval_samples);
        &sub
    } else {
        eval
    };
    while epochs < epoch_budget {
        // stretch the per-stage milestones over the whole budget
        let scaled = epochs * config.max_epochs_per_stage.max(1) / epoch_budget.max(1);
        let opt = Sgd::new(config.lr_at(scaled), config.momentum, config.weight_decay);
        let loss = run_epoch(net, train, &exits, &opt, config, &mut rng, &mut ctx)?;
        epochs += 1;
        acc = net.exit_accuracies(data.images(), data.labels(), 250)?;
        log::debug!("monolithic epoch {epochs}: loss {loss:.4}, acc {acc:?}");
        if acc.iter().zip(&config.acc_thresholds).all(|(a, t)| a >= t) {
            break;
        }
    }
    net.params_mut().for_each(|p| p.frozen = true);
    for seg in 0..n {
        distill_slot(net, seg, train, config, &mut rng)?;
    }
    net.params_mut().for_each(|p| p.frozen = false);
    Ok(MonolithicReport {
        epochs,
        acc,
        seconds: started.elapsed().as_secs_f64(),
    })
}
