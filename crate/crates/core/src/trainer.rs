//! Subject-level cross-validation with Adam, class balancing and early
//! stopping.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use log::{debug, info};
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;

use crate::error::{bail, Result};
use crate::evalkit::{mean_sd, roc_auc, Prediction};
use crate::pipeline::{self, PreprocessedVolume};
use crate::rng::{self, tag};
use crate::tensor::{AdamState, Tape};
use crate::vesselnet::{self, VesselNetConfig, VesselNetParams};
use crate::volume::{Dims3, RawVesselVolume, VesselLabel};

/// Minimum drop in validation loss that counts as an improvement.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-6;
/// Samples per inference pass.
pub const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub keep_rate: f64,
    pub lambda_l2: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub train_acc_stop: f64,
    pub folds: usize,
    pub seed: u64,
    /// Network input; vessels are padded to `dims.l` frames.
    pub dims: Dims3,
    /// Per-class count after augmentation; the larger class size if smaller.
    pub balance_target: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            keep_rate: 0.5,
            lambda_l2: 1e-3,
            max_epochs: 1000,
            patience: 20,
            train_acc_stop: 0.995,
            folds: 5,
            seed: 0,
            dims: Dims3::new(21, 21, pipeline::DEFAULT_PROCESSING_LENGTH),
            balance_target: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Config, "learning rate must be positive, got {}", self.lr);
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bail!(Config, "Adam betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2);
        }
        if !(self.eps > 0.0) {
            bail!(Config, "Adam epsilon must be positive, got {}", self.eps);
        }
        if self.batch_size < 2 {
            bail!(Config, "batch size must be at least 2, got {}", self.batch_size);
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            bail!(Config, "patience {} must be below max epochs {}", self.patience, self.max_epochs);
        }
        if !(self.train_acc_stop > 0.0 && self.train_acc_stop <= 1.0) {
            bail!(Config, "train accuracy stop {} outside (0, 1]", self.train_acc_stop);
        }
        if self.folds < 2 {
            bail!(Config, "need at least 2 folds, got {}", self.folds);
        }
        self.net_config().validate()
    }

    pub fn net_config(&self) -> VesselNetConfig {
        VesselNetConfig { keep_rate: self.keep_rate, lambda_l2: self.lambda_l2, ..VesselNetConfig::with_dims(self.dims) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl FoldSplit {
    pub fn partition_of(&self, subject_id: &str) -> Option<Partition> {
        let has = |v: &[String]| v.iter().any(|s| s == subject_id);
        if has(&self.train_subjects) {
            Some(Partition::Train)
        } else if has(&self.val_subjects) {
            Some(Partition::Val)
        } else if has(&self.test_subjects) {
            Some(Partition::Test)
        } else {
            None
        }
    }
}

/// Shuffles subjects and cuts them into `folds` contiguous test blocks. For
/// each fold the remaining subjects, taken in order starting right after the
/// test block, give a quarter to validation and the rest to training.
pub fn split_folds(subject_ids: &[String], folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let unique: BTreeSet<&String> = subject_ids.iter().collect();
    if unique.len() != subject_ids.len() {
        bail!(Data, "duplicate subject ids");
    }
    if folds < 2 || subject_ids.len() < 2 * folds {
        bail!(Data, "{} subjects are too few for {} folds", subject_ids.len(), folds);
    }
    let mut order: Vec<String> = subject_ids.to_vec();
    order.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    let n = order.len();
    let bounds: Vec<usize> = (0..=folds).map(|f| f * n / folds).collect();
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let (a, b) = (bounds[f], bounds[f + 1]);
        let test = order[a..b].to_vec();
        let rest: Vec<String> = order[b..].iter().chain(&order[..a]).cloned().collect();
        let n_val = (rest.len() as f64 * 0.25).round() as usize;
        out.push(FoldSplit {
            fold_index: f,
            val_subjects: rest[..n_val].to_vec(),
            train_subjects: rest[n_val..].to_vec(),
            test_subjects: test,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    TrainAcc,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Patience => "patience",
            StopReason::TrainAcc => "train_acc",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(StopReason),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: Option<StopReason>,
    /// 1-based epoch with the lowest validation loss (first on ties).
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn push(&mut self, rec: EpochRecord) {
        let better = self.best().is_none_or(|b| rec.val_loss < b.val_loss);
        self.epochs.push(rec);
        if better {
            self.best_epoch = rec.epoch;
        }
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    /// Epochs since the validation loss last beat its running minimum by
    /// more than [`IMPROVEMENT_TOLERANCE`].
    pub fn epochs_without_improvement(&self) -> usize {
        let mut min = f64::INFINITY;
        let mut last = 0;
        for (i, e) in self.epochs.iter().enumerate() {
            if e.val_loss < min - IMPROVEMENT_TOLERANCE {
                min = e.val_loss;
                last = i;
            } else {
                min = min.min(e.val_loss);
            }
        }
        self.epochs.len() - 1 - last
    }
}

/// Stopping rule, checked after each epoch: train accuracy first, then the
/// epoch cap, then patience.
pub fn early_stop_check(log: &TrainLog, config: &TrainConfig) -> StopDecision {
    let Some(last) = log.epochs.last() else {
        return StopDecision::Continue;
    };
    if last.train_acc >= config.train_acc_stop {
        StopDecision::Stop(StopReason::TrainAcc)
    } else if log.epochs.len() >= config.max_epochs {
        StopDecision::Stop(StopReason::MaxEpochs)
    } else if log.epochs_without_improvement() >= config.patience {
        StopDecision::Stop(StopReason::Patience)
    } else {
        StopDecision::Continue
    }
}

/// Preprocessed volumes of one fold, by partition.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub train: Vec<PreprocessedVolume>,
    pub val: Vec<PreprocessedVolume>,
    pub test: Vec<PreprocessedVolume>,
}

/// Routes each vessel to its subject's partition. Every vessel's subject must
/// belong to the split.
pub fn partition<'a>(fold: &FoldSplit, volumes: &'a [PreprocessedVolume]) -> Result<[Vec<&'a PreprocessedVolume>; 3]> {
    let mut parts: [Vec<&PreprocessedVolume>; 3] = Default::default();
    for v in volumes {
        match fold.partition_of(&v.provenance.subject_id) {
            Some(Partition::Train) => parts[0].push(v),
            Some(Partition::Val) => parts[1].push(v),
            Some(Partition::Test) => parts[2].push(v),
            None => bail!(
                Data,
                "vessel {} belongs to subject {} which is not in fold {}",
                v.provenance.vessel_id,
                v.provenance.subject_id,
                fold.fold_index
            ),
        }
    }
    Ok(parts)
}

pub fn fold_data(fold: &FoldSplit, volumes: &[PreprocessedVolume], config: &TrainConfig) -> Result<FoldData> {
    let [train, val, test] = partition(fold, volumes)?;
    let train: Vec<PreprocessedVolume> = train.into_iter().cloned().collect();
    let seed = rng::derive_id(&[config.seed, fold.fold_index as u64]);
    let train = pipeline::augment_balance(&train, config.balance_target, seed)?;
    Ok(FoldData { train, val: val.into_iter().cloned().collect(), test: test.into_iter().cloned().collect() })
}

/// Batches of `size` indices; the incomplete tail is dropped unless it would
/// be the only batch.
pub fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    if order.len() < size {
        return if order.len() >= 2 { alloc::vec![order] } else { Vec::new() };
    }
    order.chunks_exact(size).collect()
}

/// Mean cross-entropy plus weight decay, and accuracy at `p >= 0.5`.
pub fn evaluate(params: &VesselNetParams<f32>, set: &[PreprocessedVolume]) -> Result<(f64, f64, Vec<f64>)> {
    if set.is_empty() {
        bail!(Data, "empty evaluation set");
    }
    let refs: Vec<&PreprocessedVolume> = set.iter().collect();
    let probs = vesselnet::predict_volumes(params, &refs, EVAL_CHUNK)?;
    let mut ce = 0.0;
    let mut correct = 0usize;
    for (p, v) in probs.iter().zip(set) {
        let q = if v.label.is_abnormal() { *p } else { 1.0 - p };
        ce -= q.max(f64::MIN_POSITIVE).ln();
        correct += usize::from((*p >= 0.5) == v.label.is_abnormal());
    }
    let l2 = crate::tensor::l2_penalty(&params.decayed_weights(), params.config.lambda_l2)?;
    Ok((ce / set.len() as f64 + l2, correct as f64 / set.len() as f64, probs))
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    /// Parameters from the best validation epoch.
    pub params: VesselNetParams<f32>,
    pub log: TrainLog,
    /// `(normal, abnormal)` after augmentation.
    pub train_counts: (usize, usize),
}

/// Trains one fold on already partitioned data.
pub fn train_on(fold_index: usize, data: &FoldData, config: &TrainConfig) -> Result<FoldOutcome> {
    config.validate()?;
    if data.val.is_empty() {
        bail!(Data, "fold {} has an empty validation partition", fold_index);
    }
    let counts = pipeline::class_counts(&data.train);
    if counts.0 == 0 || counts.1 == 0 {
        bail!(Data, "fold {} training partition lacks a class: {:?}", fold_index, counts);
    }
    let net = config.net_config();
    let fold_seed = rng::derive_id(&[config.seed, fold_index as u64]);
    let mut params = vesselnet::build::<f32>(&net, fold_seed)?;
    let mut adam = AdamState::<f32>::new(config.lr, config.beta1, config.beta2, config.eps);
    let mut log = TrainLog::default();
    let mut best = params.clone();
    let indices: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let mut order = indices.clone();
        order.shuffle(&mut rng::stream(config.seed, &[tag::SHUFFLE, fold_index as u64, epoch as u64]));
        let mut dropout_rng = rng::stream(config.seed, &[tag::DROPOUT, fold_index as u64, epoch as u64]);
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for batch in batches(&order, config.batch_size) {
            let vols: Vec<&PreprocessedVolume> = batch.iter().map(|&i| &data.train[i]).collect();
            let labels: Vec<usize> = vols.iter().map(|v| v.label.class_index()).collect();
            let mut tape = Tape::new();
            let tr = vesselnet::forward(&mut params, &mut tape, vesselnet::batch_tensor(&vols)?, true, &mut dropout_rng)?;
            let ce = tape.softmax_cross_entropy(tr.logits, &labels)?;
            let l2 = tape.l2_penalty(&tr.decayed, net.lambda_l2)?;
            let total = tape.add(ce, l2)?;
            let loss = f64::from(tape.scalar(total));
            if !loss.is_finite() {
                bail!(Numeric, "fold {} epoch {}: loss is not finite", fold_index, epoch);
            }
            let logits = tape.value(tr.logits);
            correct += labels
                .iter()
                .enumerate()
                .filter(|&(i, &y)| usize::from(logits[2 * i + 1] > logits[2 * i]) == y)
                .count();
            tape.backward(total)?;
            let grads: Vec<Vec<f32>> = tr
                .learnables
                .iter()
                .map(|&v| tape.take_grad(v).unwrap_or_else(|| alloc::vec![0.0; tape.tensor(v).len()]))
                .collect();
            let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut params.learnables_mut(), &grad_refs)?;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let (val_loss, val_acc, _) = evaluate(&params, &data.val)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss,
            val_acc,
        };
        debug!(
            "fold {} epoch {}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3}",
            fold_index, epoch, rec.train_loss, rec.train_acc, rec.val_loss, rec.val_acc
        );
        log.push(rec);
        if log.best_epoch == epoch {
            best = params.clone();
        }
        if let StopDecision::Stop(reason) = early_stop_check(&log, config) {
            log.stop_reason = Some(reason);
            break;
        }
    }
    info!(
        "fold {}: stopped after {} epochs ({}), best epoch {}",
        fold_index,
        log.epochs.len(),
        log.stop_reason.map_or("none", StopReason::as_str),
        log.best_epoch
    );
    Ok(FoldOutcome { params: best, log, train_counts: counts })
}

/// Preprocesses every vessel to the configured processing length.
pub fn preprocess_all(volumes: &[RawVesselVolume], config: &TrainConfig) -> Result<Vec<PreprocessedVolume>> {
    volumes
        .iter()
        .map(|v| {
            if (v.dims.w, v.dims.h) != (config.dims.w, config.dims.h) {
                bail!(Shape, "vessel {} has cross-section {}x{}, expected {}x{}", v.vessel_id, v.dims.w, v.dims.h, config.dims.w, config.dims.h);
            }
            pipeline::preprocess(v, config.dims.l)
        })
        .collect()
}

/// Trains one fold from raw volumes.
pub fn train_fold(fold: &FoldSplit, volumes: &[RawVesselVolume], config: &TrainConfig) -> Result<FoldOutcome> {
    let pre = preprocess_all(volumes, config)?;
    train_on(fold.fold_index, &fold_data(fold, &pre, config)?, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesselPrediction {
    pub vessel_id: String,
    pub subject_id: String,
    pub label: VesselLabel,
    pub p_abnormal: f64,
}

impl VesselPrediction {
    pub fn as_prediction(&self) -> Prediction {
        Prediction::new(self.p_abnormal, self.label.is_abnormal())
    }
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub split: FoldSplit,
    pub outcome: FoldOutcome,
    /// Test partition, sorted by vessel id.
    pub predictions: Vec<VesselPrediction>,
    /// `None` when the test partition holds a single class.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub mean_auc: Option<f64>,
    pub sd_auc: Option<f64>,
}

impl CvResult {
    pub fn pooled_predictions(&self) -> Vec<VesselPrediction> {
        self.folds.iter().flat_map(|f| f.predictions.iter().cloned()).collect()
    }
}

/// Test-set probabilities, sorted by vessel id.
pub fn predict_set(params: &VesselNetParams<f32>, set: &[PreprocessedVolume]) -> Result<Vec<VesselPrediction>> {
    let refs: Vec<&PreprocessedVolume> = set.iter().collect();
    let probs = vesselnet::predict_volumes(params, &refs, EVAL_CHUNK)?;
    let mut out: Vec<VesselPrediction> = set
        .iter()
        .zip(probs)
        .map(|(v, p)| VesselPrediction {
            vessel_id: v.provenance.vessel_id.clone(),
            subject_id: v.provenance.subject_id.clone(),
            label: v.label,
            p_abnormal: p,
        })
        .collect();
    out.sort_by(|a, b| a.vessel_id.cmp(&b.vessel_id));
    Ok(out)
}

/// Full cross-validation over the subjects in `subject_ids`. `on_fold` sees
/// each fold as soon as it finishes.
pub fn run_cv(
    volumes: &[RawVesselVolume],
    subject_ids: &[String],
    config: &TrainConfig,
    mut on_fold: impl FnMut(&FoldResult) -> Result<()>,
) -> Result<CvResult> {
    config.validate()?;
    let known: BTreeSet<&str> = subject_ids.iter().map(String::as_str).collect();
    if let Some(v) = volumes.iter().find(|v| !known.contains(v.subject_id.as_str())) {
        bail!(Data, "vessel {} references unknown subject {}", v.vessel_id, v.subject_id);
    }
    let ids: BTreeSet<&str> = volumes.iter().map(|v| v.vessel_id.as_str()).collect();
    if ids.len() != volumes.len() {
        bail!(Data, "duplicate vessel ids");
    }
    let pre = preprocess_all(volumes, config)?;
    let splits = split_folds(subject_ids, config.folds, config.seed)?;
    let mut folds = Vec::with_capacity(splits.len());
    for split in splits {
        let result = run_fold(split, &pre, config)?;
        on_fold(&result)?;
        folds.push(result);
    }
    Ok(summarize(folds))
}

/// Balances, trains and tests one fold of preprocessed volumes.
pub fn run_fold(split: FoldSplit, volumes: &[PreprocessedVolume], config: &TrainConfig) -> Result<FoldResult> {
    let data = fold_data(&split, volumes, config)?;
    info!(
        "fold {}: {} train ({} after balancing), {} val, {} test vessels",
        split.fold_index,
        data.train.iter().filter(|v| v.provenance.angle.is_none()).count(),
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    let outcome = train_on(split.fold_index, &data, config)?;
    let predictions = predict_set(&outcome.params, &data.test)?;
    let preds: Vec<Prediction> = predictions.iter().map(VesselPrediction::as_prediction).collect();
    let auc = roc_auc(&preds).ok().map(|r| r.auc);
    Ok(FoldResult { split, outcome, predictions, auc })
}

/// Mean and sample standard deviation of the per-fold AUCs.
pub fn summarize(folds: Vec<FoldResult>) -> CvResult {
    let aucs: Vec<f64> = folds.iter().filter_map(|f| f.auc).collect();
    let (mean_auc, sd_auc) = match mean_sd(&aucs) {
        Some((m, sd)) => (Some(m), sd),
        None => (None, None),
    };
    if let Some(m) = mean_auc {
        info!("mean test AUC {:.4} over {} folds", m, aucs.len());
    }
    CvResult { folds, mean_auc, sd_auc }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batching_rules() {
        let o: Vec<usize> = (0..70).collect();
        let b = batches(&o, 32);
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|x| x.len() == 32));
        assert_eq!(batches(&o[..5], 32).len(), 1);
        assert!(batches(&o[..1], 32).is_empty());
    }

    #[test]
    fn improvement_counter() {
        let mut log = TrainLog::default();
        for (i, v) in [3.0, 2.0, 2.0, 2.5, 1.9999999].iter().enumerate() {
            log.push(EpochRecord { epoch: i + 1, train_loss: 0.0, train_acc: 0.0, val_loss: *v, val_acc: 0.0 });
        }
        assert_eq!(log.epochs_without_improvement(), 3);
        assert_eq!(log.best_epoch, 5);
    }
}
