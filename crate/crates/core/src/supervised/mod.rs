//! Supervised protocols on top of a (pre)trained extractor:
//!
//! * **LC** – frozen extractor, linear head;
//! * **FT** – extractor and linear head trained together;
//! * **NC** – frozen extractor, one-hidden-layer MLP head.

mod sweep;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use sweep::{run_label_efficiency_sweep, BundleSource, SweepCell, SweepGrid};

use crate::data::{subsample_labels, Dataset, ImageRecord, Task};
use crate::exec::Execution;
use crate::nnet::{new_head, Adam, FeatureExtractor, Head, HeadKind, Matrix, ModelBundle, Parameters};
use crate::{rng, Error, Result};

const STREAM_SHUFFLE: u64 = 0x5f51;
/// Supervised decay exponent per epoch.
pub const LR_DECAY: f64 = 0.02;

/// `initial · e^(−decay·epoch)`, with `epoch` 0-indexed.
pub fn decayed_lr(initial: f64, decay: f64, epoch: usize) -> f64 {
    initial * (-decay * epoch as f64).exp()
}

/// Learning rate for 0-indexed `epoch` under the supervised schedule.
pub fn lr_at(initial: f64, epoch: usize) -> f64 {
    decayed_lr(initial, LR_DECAY, epoch)
}

/// Mean binary cross-entropy of logits, evaluated as
/// `max(l, 0) − l·y + ln(1 + e^(−|l|))`.
pub fn bce(logits: &[f64], labels: &[f64]) -> f64 {
    bce_grad(logits, labels).0
}

/// Mean loss and its gradient with respect to each logit.
pub fn bce_grad(logits: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), labels.len(), "one label per logit");
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&l, &y) in logits.iter().zip(labels) {
        loss += l.max(0.0) - l * y + (-l.abs()).exp().ln_1p();
        grad.push((sigmoid(l) - y) / n);
    }
    (loss / n, grad)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// 1-indexed epoch with the lowest validation loss; ties go to the earliest.
/// `None` for an empty history.
pub fn select_best_epoch(val_losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in val_losses.iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i + 1, v));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Lc,
    Ft,
    Nc,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Lc, Protocol::Ft, Protocol::Nc];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Lc => "lc",
            Protocol::Ft => "ft",
            Protocol::Nc => "nc",
        }
    }

    pub fn head_kind(self) -> HeadKind {
        match self {
            Protocol::Lc | Protocol::Ft => HeadKind::Linear,
            Protocol::Nc => HeadKind::Mlp32,
        }
    }

    pub fn freezes_extractor(self) -> bool {
        self != Protocol::Ft
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lc" => Ok(Protocol::Lc),
            "ft" => Ok(Protocol::Ft),
            "nc" => Ok(Protocol::Nc),
            _ => Err(Error::config("protocol", format!("unknown protocol {s:?} (expected lc, ft or nc)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub task: Task,
    pub extractor_lr: f64,
    pub head_lr: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub label_fraction: f64,
    pub execution: Execution,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Lc,
            task: Task::View,
            extractor_lr: 1e-5,
            head_lr: 1e-4,
            lr_decay: LR_DECAY,
            epochs: 10,
            batch_size: 128,
            seed: 0,
            label_fraction: 1.0,
            execution: Execution::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.extractor_lr > 0.0) {
            return Err(Error::config("train.extractor_lr", "must be positive"));
        }
        if !(self.head_lr > 0.0) {
            return Err(Error::config("train.head_lr", "must be positive"));
        }
        if !(self.lr_decay >= 0.0) {
            return Err(Error::config("train.lr_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::config("train.label_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEpoch {
    /// 1-indexed.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub head_lr: f64,
    /// `None` when the extractor is frozen.
    pub extractor_lr: Option<f64>,
    pub seconds: f64,
}

impl fmt::Display for TrainEpoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {:>3}  train {:.6}  val {:.6}  head lr {:.3e}",
            self.epoch, self.train_loss, self.val_loss, self.head_lr
        )?;
        if let Some(lr) = self.extractor_lr {
            write!(f, "  extractor lr {lr:.3e}")?;
        }
        write!(f, "  {:.1}s", self.seconds)
    }
}

/// Outcome of one protocol run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: ProtocolConfig,
    pub history: Vec<TrainEpoch>,
    /// 1-indexed best epoch, or 0 when no epoch ran and the initial weights
    /// are kept.
    pub selected_epoch: usize,
    /// Number of labelled training frames actually used.
    pub train_size: usize,
    /// Input bundle with the task head and, for FT, the extractor replaced
    /// by the selected weights.
    pub bundle: ModelBundle,
}

impl TrainRun {
    pub fn val_losses(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.val_loss).collect()
    }
}

struct LabelledSet<'a> {
    records: Vec<&'a ImageRecord>,
    labels: Vec<f64>,
}

impl<'a> LabelledSet<'a> {
    fn new(dataset: &'a Dataset, task: Task, role: &str) -> Result<Self> {
        let records = dataset.labelled(task);
        if records.is_empty() {
            return Err(Error::NoLabels(format!("{role} set has no {task} labels")));
        }
        let labels = records.iter().map(|r| r.label(task).unwrap() as f64).collect();
        Ok(Self { records, labels })
    }

    fn pixels(&self, idx: &[usize]) -> Vec<f32> {
        let recs: Vec<&ImageRecord> = idx.iter().map(|&i| self.records[i]).collect();
        Dataset::stack_pixels(&recs)
    }
}

fn features_of(extractor: &FeatureExtractor<f32>, set: &LabelledSet<'_>, exec: Execution) -> Result<Matrix<f32>> {
    let images: Vec<_> = set.records.iter().map(|r| r.pixels.as_ref()).collect();
    extractor.features(&images, exec)
}

fn gather_rows(m: &Matrix<f32>, idx: &[usize]) -> Matrix<f32> {
    let mut data = Vec::with_capacity(idx.len() * m.cols);
    for &i in idx {
        data.extend_from_slice(m.row(i));
    }
    Matrix::from_vec(idx.len(), m.cols, data)
}

fn head_loss(head: &Head<f32>, features: &Matrix<f32>, labels: &[f64]) -> Result<f64> {
    let logits: Vec<f64> = head.logits(features)?.iter().map(|&v| v as f64).collect();
    Ok(bce(&logits, labels))
}

/// Loss over a whole labelled set. Without precomputed features the
/// extractor runs again with its current weights.
fn dataset_loss(
    extractor: &FeatureExtractor<f32>,
    frozen: Option<&Matrix<f32>>,
    head: &Head<f32>,
    set: &LabelledSet<'_>,
    exec: Execution,
) -> Result<f64> {
    match frozen {
        Some(f) => head_loss(head, f, &set.labels),
        None => {
            let f = features_of(extractor, set, exec)?;
            head_loss(head, &f, &set.labels)
        }
    }
}

/// Runs one protocol for `config.task` on `train`/`val` and returns the
/// weights of the epoch with the lowest validation loss.
///
/// A fresh head of the protocol's kind replaces any existing head for the
/// task. For LC and NC the extractor is never written to.
pub fn train_protocol(bundle: &ModelBundle, train: &Dataset, val: &Dataset, config: &ProtocolConfig) -> Result<TrainRun> {
    config.validate()?;
    let task = config.task;
    let exec = config.execution;
    let subset;
    let train = if config.label_fraction < 1.0 {
        subset = subsample_labels(train, config.label_fraction, task, config.seed)?;
        &subset
    } else {
        train
    };
    let train_set = LabelledSet::new(train, task, "training")?;
    let val_set = LabelledSet::new(val, task, "validation")?;

    let mut extractor = bundle.extractor.clone();
    let mut head = new_head(config.protocol.head_kind(), bundle.feature_dim(), config.seed, task);
    let frozen = config.protocol.freezes_extractor();
    let (train_feat, val_feat) = if frozen {
        (
            Some(features_of(&extractor, &train_set, exec)?),
            Some(features_of(&extractor, &val_set, exec)?),
        )
    } else {
        (None, None)
    };

    let mut opt_h = Adam::new(&head);
    let mut opt_f = Adam::new(&extractor);
    let mut best: Option<(f64, Head<f32>, Option<FeatureExtractor<f32>>)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let n = train_set.records.len();

    let mut tapes = Vec::new();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let head_lr = decayed_lr(config.head_lr, config.lr_decay, epoch);
        let ext_lr = decayed_lr(config.extractor_lr, config.lr_decay, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(config.seed, &[STREAM_SHUFFLE, task as u64, epoch as u64]));

        let mut total = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let labels: Vec<f64> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let mut g_head = head.zeros_like();
            let loss = match &train_feat {
                Some(f) => {
                    let x = gather_rows(f, idx);
                    let (logits, cache) = head.mlp.forward_train(&x);
                    let logits: Vec<f64> = logits.data.iter().map(|&v| v as f64).collect();
                    let (loss, dl) = bce_grad(&logits, &labels);
                    let dl = Matrix::from_vec(idx.len(), 1, dl.iter().map(|&v| v as f32).collect());
                    head.mlp.backward(&cache, &dl, &mut g_head.mlp);
                    loss
                }
                None => {
                    let pixels = train_set.pixels(idx);
                    let feat = extractor.forward_train(&pixels, idx.len(), exec, &mut tapes)?;
                    let (logits, cache) = head.mlp.forward_train(&feat);
                    let logits: Vec<f64> = logits.data.iter().map(|&v| v as f64).collect();
                    let (loss, dl) = bce_grad(&logits, &labels);
                    let dl = Matrix::from_vec(idx.len(), 1, dl.iter().map(|&v| v as f32).collect());
                    let dfeat = head.mlp.backward(&cache, &dl, &mut g_head.mlp);
                    let g_ext = extractor.backward(&tapes, &dfeat, exec);
                    opt_f.step(&mut extractor, &g_ext, ext_lr);
                    loss
                }
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("{} {task} training loss in epoch {}", config.protocol, epoch + 1),
                    batch: b,
                });
            }
            opt_h.step(&mut head, &g_head, head_lr);
            total += loss * idx.len() as f64;
        }

        let val_loss = dataset_loss(&extractor, val_feat.as_ref(), &head, &val_set, exec)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{} {task} validation loss in epoch {}", config.protocol, epoch + 1),
                batch: 0,
            });
        }
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, head.clone(), (!frozen).then(|| extractor.clone())));
        }
        history.push(TrainEpoch {
            epoch: epoch + 1,
            train_loss: total / n as f64,
            val_loss,
            head_lr,
            extractor_lr: (!frozen).then_some(ext_lr),
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    let val_losses: Vec<f64> = history.iter().map(|e| e.val_loss).collect();
    let selected_epoch = select_best_epoch(&val_losses).unwrap_or(0);
    let mut out = bundle.clone();
    if let Some((_, h, e)) = best {
        head = h;
        if let Some(e) = e {
            out.extractor = e;
        }
    }
    out.insert_head(task, head)?;
    out.metadata.protocol = Some(config.protocol.as_str().to_string());
    out.metadata.label_fraction = Some(config.label_fraction);
    Ok(TrainRun {
        config: config.clone(),
        history,
        selected_epoch,
        train_size: n,
        bundle: out,
    })
}

/// Sigmoid scores and labels for every frame of `dataset` labelled for
/// `task`, in dataset order.
pub fn score_task(bundle: &ModelBundle, task: Task, dataset: &Dataset, exec: Execution) -> Result<(Vec<f64>, Vec<u8>)> {
    let head = bundle.head(task)?;
    let records = dataset.labelled(task);
    let images: Vec<_> = records.iter().map(|r| r.pixels.as_ref()).collect();
    let features = bundle.extractor.features(&images, exec)?;
    let scores = head.logits(&features)?.iter().map(|&l| sigmoid(l as f64)).collect();
    let labels = records.iter().map(|r| r.label(task).unwrap()).collect();
    Ok((scores, labels))
}

/// Test AUC of `bundle`'s head for `task`.
pub fn test_auc(bundle: &ModelBundle, task: Task, test: &Dataset, exec: Execution) -> Result<f64> {
    let (scores, labels) = score_task(bundle, task, test, exec)?;
    crate::eval::auc(&scores, &labels)
}
