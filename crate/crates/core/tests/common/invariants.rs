//! Structural invariants, each checked for one seed. Integration tests drive
//! them through proptest; the acceptance binary runs a fixed seed list.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use lungssl::augment::AugmentationPolicy;
use lungssl::data::{
    generate_synthetic, partition_labelled, split_by_patient, Dataset, Image, SplitSpec, SyntheticConfig, Task,
};
use lungssl::exec::Execution;
use lungssl::inference::{infer_tree, Backbone, LogitHead, TreeModels, TreeSpec};
use lungssl::nnet::{
    decode_checkpoint, encode_checkpoint, init_bundle, ArchitectureConfig, FeatureExtractor, FlopCount, HeadKind,
    ModelBundle, Parameters,
};
use lungssl::ssl::{pretrain, Method, SslConfig};
use lungssl::supervised::{test_auc, train_protocol, Protocol, ProtocolConfig};

pub type Check = std::result::Result<(), String>;

/// A small labelled synthetic set: `patients × 2 videos × 4 frames`.
pub fn tiny_dataset(patients: usize, unlabelled: f64, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        n_patients: patients,
        videos_per_patient: 2,
        frames_per_video: 4,
        unlabelled_fraction: unlabelled,
        seed,
        ..Default::default()
    })
    .unwrap()
}

/// Splits of a random patient population never share a patient and cover
/// every record exactly once.
pub fn split_disjoint(patients: usize, ratios: [f64; 3], seed: u64) -> Check {
    let data = tiny_dataset(patients, 0.0, seed);
    let spec = SplitSpec::new(ratios, seed).map_err(|e| e.to_string())?;
    let (a, b, c) = split_by_patient(&data, &spec).map_err(|e| e.to_string())?;
    let sets: Vec<BTreeSet<&str>> = [&a, &b, &c].iter().map(|d| d.patients()).collect();
    for i in 0..3 {
        for j in i + 1..3 {
            if let Some(p) = sets[i].intersection(&sets[j]).next() {
                return Err(format!("patient {p} in splits {i} and {j}"));
            }
        }
    }
    if a.len() + b.len() + c.len() != data.len() {
        return Err(format!("{} + {} + {} records != {}", a.len(), b.len(), c.len(), data.len()));
    }
    let mut ids: Vec<&str> = [&a, &b, &c]
        .iter()
        .flat_map(|d| d.records().iter().map(|r| r.image_id.as_str()))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != data.len() {
        return Err("a record appears in more than one split".into());
    }
    Ok(())
}

/// Default extractor with a head for every task.
pub fn arch_with_heads() -> ArchitectureConfig {
    let mut arch = ArchitectureConfig::default();
    arch.heads = [(Task::View, HeadKind::Linear), (Task::Ab, HeadKind::Mlp32), (Task::Pe, HeadKind::Linear)].into();
    arch
}

/// LC and NC leave every extractor weight bit-identical, while FT moves it.
pub fn freezing(seed: u64) -> Check {
    let data = tiny_dataset(8, 0.0, seed);
    let (train, val, _) = split_by_patient(&data, &SplitSpec::new([0.5, 0.25, 0.25], seed).unwrap()).unwrap();
    let bundle = init_bundle(&arch_with_heads(), seed).map_err(|e| e.to_string())?;
    for protocol in [Protocol::Lc, Protocol::Nc, Protocol::Ft] {
        let config = ProtocolConfig {
            protocol,
            task: Task::View,
            epochs: 2,
            batch_size: 16,
            extractor_lr: 1e-3,
            seed,
            ..Default::default()
        };
        let run = train_protocol(&bundle, &train, &val, &config).map_err(|e| e.to_string())?;
        let same = run.bundle.extractor.same_weights(&bundle.extractor);
        if protocol.freezes_extractor() != same {
            return Err(format!("{protocol}: extractor unchanged = {same}"));
        }
    }
    Ok(())
}

/// Wraps an extractor and counts how often it runs.
pub struct CountingBackbone {
    pub inner: FeatureExtractor<f32>,
    pub calls: Arc<AtomicUsize>,
}

impl Backbone for CountingBackbone {
    fn features(&self, image: &Image) -> lungssl::Result<Vec<f32>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Backbone::features(&self.inner, image)
    }

    fn flops(&self) -> FlopCount {
        Backbone::flops(&self.inner)
    }
}

fn boxed_head(bundle: &ModelBundle, task: Task) -> Box<dyn LogitHead> {
    Box::new(bundle.head(task).unwrap().clone())
}

fn counting(bundle: &ModelBundle) -> (Box<dyn Backbone>, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let b = CountingBackbone {
        inner: bundle.extractor.clone(),
        calls: calls.clone(),
    };
    (Box::new(b), calls)
}

/// Shared mode runs its backbone exactly once per prediction whichever leaf
/// is chosen; serial mode runs two backbones.
pub fn shared_runs_backbone_once(seed: u64) -> Check {
    let bundle = init_bundle(&arch_with_heads(), seed).map_err(|e| e.to_string())?;
    let data = tiny_dataset(3, 0.0, seed);
    let (backbone, shared_calls) = counting(&bundle);
    let shared = TreeModels::Shared {
        backbone,
        view: boxed_head(&bundle, Task::View),
        ab: Some(boxed_head(&bundle, Task::Ab)),
        pe: Some(boxed_head(&bundle, Task::Pe)),
    };
    let cnn = |task| {
        let (backbone, calls) = counting(&bundle);
        (
            lungssl::inference::Cnn {
                backbone,
                head: boxed_head(&bundle, task),
            },
            calls,
        )
    };
    let (view, view_calls) = cnn(Task::View);
    let (ab, ab_calls) = cnn(Task::Ab);
    let (pe, pe_calls) = cnn(Task::Pe);
    let serial = TreeModels::Serial {
        view,
        ab: Some(ab),
        pe: Some(pe),
    };
    // Sweeping the threshold forces both routes.
    for threshold in [0.0, 1.1] {
        let spec = TreeSpec { threshold };
        for r in data.records().iter().take(4) {
            let before = shared_calls.load(Ordering::SeqCst);
            let s = infer_tree(&r.pixels, &shared, &spec).map_err(|e| e.to_string())?;
            let used = shared_calls.load(Ordering::SeqCst) - before;
            if used != 1 {
                return Err(format!("shared mode ran the backbone {used} times"));
            }
            let count = || view_calls.load(Ordering::SeqCst) + ab_calls.load(Ordering::SeqCst) + pe_calls.load(Ordering::SeqCst);
            let before = count();
            let t = infer_tree(&r.pixels, &serial, &spec).map_err(|e| e.to_string())?;
            let used = count() - before;
            if used != 2 {
                return Err(format!("serial mode ran {used} backbones"));
            }
            // Same weights everywhere, so both modes must agree exactly.
            if s.view_probability != t.view_probability || s.leaf_probability != t.leaf_probability {
                return Err("modes disagree on identical weights".into());
            }
        }
    }
    Ok(())
}

/// Encoding then decoding reproduces every tensor bit for bit, plus the
/// architecture and metadata.
pub fn checkpoint_round_trip(seed: u64) -> Check {
    let mut bundle = init_bundle(&arch_with_heads(), seed).map_err(|e| e.to_string())?;
    // Non-trivial values in every tensor, including negative zero and subnormals.
    for (i, t) in bundle_tensors_mut(&mut bundle).into_iter().enumerate() {
        if let Some(v) = t.first_mut() {
            *v = if i % 2 == 0 { -0.0 } else { f32::MIN_POSITIVE / 3.0 };
        }
    }
    bundle.metadata.method = Some("simclr".into());
    bundle.metadata.epoch = Some(seed as usize);
    let bytes = encode_checkpoint(&bundle).map_err(|e| e.to_string())?;
    let back = decode_checkpoint(&bytes).map_err(|e| e.to_string())?;
    if back.architecture != bundle.architecture || back.metadata != bundle.metadata {
        return Err("architecture or metadata changed".into());
    }
    let a = bundle.named_tensors();
    let b = back.named_tensors();
    if a.len() != b.len() {
        return Err(format!("{} tensors became {}", a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(&b) {
        if x.name != y.name || x.shape != y.shape {
            return Err(format!("tensor {} changed name or shape", x.name));
        }
        if x.data.iter().zip(y.data).any(|(p, q)| p.to_bits() != q.to_bits()) {
            return Err(format!("tensor {} changed value", x.name));
        }
    }
    let again = encode_checkpoint(&back).map_err(|e| e.to_string())?;
    if again != bytes {
        return Err("re-encoding changed the bytes".into());
    }
    Ok(())
}

fn bundle_tensors_mut(bundle: &mut ModelBundle) -> Vec<&mut [f32]> {
    let mut out = bundle.extractor.tensors_mut();
    if let Some(p) = &mut bundle.projector {
        out.extend(p.tensors_mut());
    }
    for h in bundle.heads.values_mut() {
        out.extend(h.tensors_mut());
    }
    out
}

/// Everything a pipeline run produces that must be reproducible.
#[derive(Debug, PartialEq)]
pub struct PipelineTrace {
    pub pretrain_losses: Vec<u64>,
    pub train_losses: Vec<u64>,
    pub checkpoint: Vec<u8>,
    pub auc: u64,
}

/// Synthesize, split, pretrain, train and evaluate with one seed.
pub fn pipeline(seed: u64, method: Method, exec: Execution) -> lungssl::Result<PipelineTrace> {
    let data = tiny_dataset(8, 0.25, seed);
    let (lab, unlab) = partition_labelled(&data);
    let (train, val, test) = split_by_patient(&lab, &SplitSpec::new([0.5, 0.25, 0.25], seed)?)?;
    let pre = Dataset::union("pre", &[&unlab, &train])?;
    let init = init_bundle(&arch_with_heads(), seed)?;
    let ssl = SslConfig {
        method,
        epochs: 1,
        batch_size: 16,
        seed,
        execution: exec,
        ..Default::default()
    };
    let run = pretrain(&pre, &init, &ssl, &AugmentationPolicy::default(), |_, _| Ok(()))?;
    let config = ProtocolConfig {
        protocol: Protocol::Ft,
        task: Task::View,
        epochs: 2,
        batch_size: 16,
        seed,
        execution: exec,
        ..Default::default()
    };
    let trained = train_protocol(&run.bundle, &train, &val, &config)?;
    let auc = test_auc(&trained.bundle, Task::View, &test, exec).unwrap_or(f64::NAN);
    Ok(PipelineTrace {
        pretrain_losses: run.history.iter().map(|e| e.mean_loss.to_bits()).collect(),
        train_losses: trained
            .history
            .iter()
            .flat_map(|e| [e.train_loss.to_bits(), e.val_loss.to_bits()])
            .collect(),
        checkpoint: encode_checkpoint(&trained.bundle)?,
        auc: auc.to_bits(),
    })
}

/// Two runs with the same seed agree bit for bit, as do sequential and
/// parallel execution.
pub fn pipeline_determinism(seed: u64, method: Method) -> Check {
    let run = |exec| pipeline(seed, method, exec).map_err(|e| e.to_string());
    let a = run(Execution::Parallel)?;
    let b = run(Execution::Parallel)?;
    if a != b {
        return Err("two parallel runs differ".into());
    }
    let c = run(Execution::Sequential)?;
    if a != c {
        return Err("sequential and parallel runs differ".into());
    }
    Ok(())
}
