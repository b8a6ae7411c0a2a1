//! Self-supervised objectives and the pretraining loop.

mod losses;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use losses::{
    barlow_twins, barlow_twins_grad, nt_xent, nt_xent_grad, vicreg, vicreg_grad, LossGrad, VicregWeights,
    DEGENERATE_VAR, STD_EPS,
};

use crate::augment::{make_pair, AugmentationPolicy};
use crate::data::{Dataset, ImageRecord};
use crate::exec::Execution;
use crate::nnet::{Adam, Matrix, ModelBundle, Parameters, Tape};
use crate::supervised::decayed_lr;
use crate::{rng, Error, Result, FRAME_PIXELS};

const STREAM_SHUFFLE: u64 = 0x55f1;
const STREAM_AUGMENT: u64 = 0x55a6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Simclr,
    BarlowTwins,
    Vicreg,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Simclr, Method::BarlowTwins, Method::Vicreg];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Simclr => "simclr",
            Method::BarlowTwins => "barlow_twins",
            Method::Vicreg => "vicreg",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "simclr" => Ok(Method::Simclr),
            "barlow_twins" | "barlowtwins" => Ok(Method::BarlowTwins),
            "vicreg" => Ok(Method::Vicreg),
            _ => Err(Error::config(
                "ssl.method",
                format!("unknown method {s:?} (expected simclr, barlow_twins or vicreg)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslConfig {
    pub method: Method,
    /// NT-Xent temperature.
    pub temperature: f64,
    /// Barlow Twins off-diagonal weight.
    pub bt_offdiag_weight: f64,
    pub vicreg: VicregWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate is multiplied by `exp(-lr_decay)` after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            method: Method::Simclr,
            temperature: 0.1,
            bt_offdiag_weight: 0.005,
            vicreg: VicregWeights::default(),
            epochs: 15,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 0.02,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::config("ssl.temperature", "must be positive"));
        }
        let v = self.vicreg;
        if [self.bt_offdiag_weight, v.invariance, v.variance, v.covariance]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return Err(Error::config("ssl.vicreg", "loss weights must be non-negative"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("ssl.batch_size", "must be at least 2"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("ssl.learning_rate", "must be positive"));
        }
        if !(self.lr_decay >= 0.0) {
            return Err(Error::config("ssl.lr_decay", "must be non-negative"));
        }
        Ok(())
    }

    /// Loss and gradients of the configured objective.
    pub fn loss(&self, z_a: &Matrix<f64>, z_b: &Matrix<f64>) -> Result<LossGrad> {
        match self.method {
            Method::Simclr => nt_xent_grad(z_a, z_b, self.temperature),
            Method::BarlowTwins => barlow_twins_grad(z_a, z_b, self.bt_offdiag_weight),
            Method::Vicreg => vicreg_grad(z_a, z_b, self.vicreg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-indexed.
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {:>3}  loss {:.6}  lr {:.3e}  {:.1}s",
            self.epoch, self.mean_loss, self.learning_rate, self.seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct PretrainRun {
    /// Extractor and projector after the last epoch.
    pub bundle: ModelBundle,
    pub history: Vec<EpochLog>,
}

/// Pretrains `bundle`'s extractor and projector on `dataset`.
///
/// `on_epoch` sees every epoch's log entry and weights, e.g. to write a
/// checkpoint; an error from it stops training.
pub fn pretrain(
    dataset: &Dataset,
    bundle: &ModelBundle,
    config: &SslConfig,
    policy: &AugmentationPolicy,
    mut on_epoch: impl FnMut(&EpochLog, &ModelBundle) -> Result<()>,
) -> Result<PretrainRun> {
    config.validate()?;
    policy.validate()?;
    if dataset.is_empty() {
        return Err(Error::NoLabels("pretraining set is empty".into()));
    }
    if bundle.projector.is_none() {
        return Err(Error::MissingModel("projector".into()));
    }
    let mut bundle = bundle.clone();
    bundle.metadata.method = Some(config.method.to_string());
    bundle.metadata.seed = config.seed;
    let mut opt_f = Adam::new(&bundle.extractor);
    let mut opt_g = Adam::new(bundle.projector.as_ref().unwrap());
    let records: Vec<&ImageRecord> = dataset.records().iter().collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut tapes = Vec::new();

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = decayed_lr(config.learning_rate, config.lr_decay, epoch);
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, &[STREAM_SHUFFLE, epoch as u64]));

        let mut total = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let offset = b * config.batch_size;
            let loss = train_step(&mut bundle, &mut tapes, &records, idx, offset, epoch, config, policy, lr, &mut opt_f, &mut opt_g)
                .map_err(|e| match e {
                    Error::NonFinite { context, .. } => Error::NonFinite { context, batch: b },
                    other => other,
                })?;
            total += loss;
            batches += 1;
        }
        bundle.metadata.epoch = Some(epoch + 1);
        let log = EpochLog {
            epoch: epoch + 1,
            mean_loss: total / batches.max(1) as f64,
            learning_rate: lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log, &bundle)?;
        history.push(log);
    }
    Ok(PretrainRun { bundle, history })
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    bundle: &mut ModelBundle,
    tapes: &mut Vec<Tape<f32>>,
    records: &[&ImageRecord],
    idx: &[usize],
    offset: usize,
    epoch: usize,
    config: &SslConfig,
    policy: &AugmentationPolicy,
    lr: f64,
    opt_f: &mut Adam<f32>,
    opt_g: &mut Adam<f32>,
) -> Result<f64> {
    let exec = config.execution;
    let n = idx.len();
    let pairs = exec.map_range(n, |i| {
        let mut r = rng::stream(config.seed, &[STREAM_AUGMENT, epoch as u64, (offset + i) as u64]);
        make_pair(policy, &records[idx[i]].pixels, &mut r)
    });
    let mut pixels = Vec::with_capacity(2 * n * FRAME_PIXELS);
    for (a, _) in &pairs {
        pixels.extend_from_slice(&a.data);
    }
    for (_, b) in &pairs {
        pixels.extend_from_slice(&b.data);
    }
    drop(pairs);

    let features = bundle.extractor.forward_train(&pixels, 2 * n, exec, tapes)?;
    let projector = bundle.projector.as_ref().unwrap();
    let (z, cache) = projector.mlp.forward_train(&features);
    let z64 = z.map(|v| v as f64);
    let (z_a, z_b) = z64.split_rows(n);
    let lg = config.loss(&z_a, &z_b)?;
    if !lg.loss.is_finite() {
        return Err(Error::NonFinite {
            context: format!("{} loss", config.method),
            batch: 0,
        });
    }
    let dz = lg.grad_a.vstack(&lg.grad_b).map(|v| v as f32);
    let mut g_proj = projector.zeros_like();
    let dfeat = projector.mlp.backward(&cache, &dz, &mut g_proj.mlp);
    let g_ext = bundle.extractor.backward(tapes, &dfeat, exec);

    opt_f.step(&mut bundle.extractor, &g_ext, lr);
    opt_g.step(bundle.projector.as_mut().unwrap(), &g_proj, lr);
    Ok(lg.loss)
}
