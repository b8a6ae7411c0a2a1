use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use lungssl::data::{
    export_manifest, generate_synthetic, load_manifest, partition_labelled, split_by_patient, Dataset, SyntheticConfig,
    Task,
};
use lungssl::eval::{
    auc, build_report, evaluate_cell, export_features, load_cells_csv, project_2d, write_cells_csv, ReportCell,
    ReportLayout,
};
use lungssl::inference::{benchmark, infer_batch, InferenceMode, TreeModels};
use lungssl::nnet::{
    init_bundle, load_checkpoint_expecting, new_head, save_checkpoint, HeadKind, Matrix, ModelBundle,
};
use lungssl::ssl::pretrain;
use lungssl::supervised::{run_label_efficiency_sweep, train_protocol, BundleSource, Protocol};
use serde::Serialize;

use crate::config::{BenchMode, RunConfig};
use crate::rundir::RunDir;
use crate::{Command, UsageError};

pub fn run(command: Command, config: &RunConfig, run_dir: Option<&Path>) -> anyhow::Result<()> {
    config.validate_paths()?;
    // Validate everything we can before creating the run directory.
    if command != Command::Synth && command != Command::Bench && !(command == Command::Eval && config.eval.cells.is_some()) {
        config.validate_data()?;
    }
    match command {
        Command::Synth => synth(config, run_dir),
        Command::Pretrain => cmd_pretrain(config, run_dir),
        Command::Train => train(config, run_dir),
        Command::Eval => eval(config, run_dir),
        Command::Sweep => sweep(config, run_dir),
        Command::Bench => bench(config, run_dir),
        Command::Infer => infer(config, run_dir),
    }
}

struct Splits {
    pretrain: Dataset,
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn load_dataset(config: &RunConfig) -> anyhow::Result<Dataset> {
    Ok(match (&config.data.manifest, &config.data.synthetic) {
        (Some(p), _) => load_manifest(p)?,
        (None, Some(s)) => generate_synthetic(s)?,
        (None, None) => bail!(UsageError("no data source".into())),
    })
}

/// Labelled frames split by patient; the pretraining set is every
/// unlabelled frame plus the training split.
fn load_splits(config: &RunConfig) -> anyhow::Result<Splits> {
    let all = load_dataset(config)?;
    let (labelled, unlabelled) = partition_labelled(&all);
    let (train, val, test) = split_by_patient(&labelled, &config.data.split_spec(config.seed))?;
    let pretrain = Dataset::union("pretrain", &[&unlabelled, &train])?;
    log::info!(
        "{} frames: pretrain {}, train {}, val {}, test {}",
        all.len(),
        pretrain.len(),
        train.len(),
        val.len(),
        test.len()
    );
    Ok(Splits {
        pretrain,
        train,
        val,
        test,
    })
}

fn load_bundle(config: &RunConfig, path: &Path) -> anyhow::Result<ModelBundle> {
    load_checkpoint_expecting(path, &config.architecture).with_context(|| format!("loading {}", path.display()))
}

/// `model.checkpoint`, or a fresh bundle from the configured architecture.
fn input_bundle(config: &RunConfig) -> anyhow::Result<ModelBundle> {
    match &config.model.checkpoint {
        Some(p) => load_bundle(config, p),
        None => Ok(init_bundle(&config.architecture, config.seed)?),
    }
}

fn pretraining_name(bundle: &ModelBundle) -> String {
    bundle.metadata.method.clone().unwrap_or_else(|| "none".into())
}

fn synth(config: &RunConfig, run_dir: Option<&Path>) -> anyhow::Result<()> {
    if config.data.manifest.is_some() {
        bail!(UsageError("synth: data.manifest must not be set".into()));
    }
    let synthetic = config.data.synthetic.clone().unwrap_or(SyntheticConfig {
        seed: config.seed,
        ..Default::default()
    });
    synthetic.validate()?;
    let dataset = generate_synthetic(&synthetic)?;
    let dir = RunDir::create(config, "synth", run_dir)?;
    let manifest = export_manifest(&dataset, dir.path("data"))?;
    #[derive(Serialize)]
    struct Summary {
        frames: usize,
        patients: usize,
        labelled: BTreeMap<Task, [usize; 2]>,
        manifest: String,
    }
    dir.write_json(
        "reports/synth.json",
        &Summary {
            frames: dataset.len(),
            patients: dataset.patients().len(),
            labelled: Task::ALL.iter().map(|&t| (t, dataset.class_counts(t))).collect(),
            manifest: manifest.display().to_string(),
        },
    )?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_pretrain(config: &RunConfig, run_dir: Option<&Path>) -> anyhow::Result<()> {
    config.ssl.validate()?;
    config.augmentation.validate()?;
    let splits = load_splits(config)?;
    let init = input_bundle(config)?;
    let dir = RunDir::create(config, "pretrain", run_dir)?;
    let run = pretrain(&splits.pretrain, &init, &config.ssl, &config.augmentation, |log, bundle| {
        log::info!("{log}");
        let mut snapshot = bundle.clone();
        snapshot.metadata.epoch = Some(log.epoch);
        save_checkpoint(&snapshot, dir.path(&format!("checkpoints/epoch_{:03}.ckpt", log.epoch)))?;
        dir.append_jsonl("logs/pretrain.jsonl", log)
            .map_err(|e| lungssl::Error::Serialization(e.to_string()))
    })?;
    let mut last = run.bundle.clone();
    last.metadata.epoch = run.history.last().map(|e| e.epoch);
    let final_path = dir.path("checkpoints/final.ckpt");
    save_checkpoint(&last, &final_path)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        method: String,
        frames: usize,
        final_loss: Option<f64>,
        history: &'a [lungssl::ssl::EpochLog],
    }
    dir.write_json(
        "reports/pretrain.json",
        &Summary {
            method: config.ssl.method.to_string(),
            frames: splits.pretrain.len(),
            final_loss: run.history.last().map(|e| e.mean_loss),
            history: &run.history,
        },
    )?;
    println!("{}", final_path.display());
    Ok(())
}

/// Test-set cell, or `None` with a warning when the test split cannot be
/// scored (e.g. a single class).
fn test_cell(bundle: &ModelBundle, task: Task, protocol: Protocol, test: &Dataset, config: &RunConfig) -> Option<ReportCell> {
    let pretraining = pretraining_name(bundle);
    match evaluate_cell(bundle, task, test, &pretraining, protocol, &config.data.name(), config.execution) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("cannot score {task} on the test split: {e}");
            None
        }
    }
}

fn train(config: &RunConfig, run_dir: Option<&Path>) -> anyhow::Result<()> {
    config.train.validate()?;
    let splits = load_splits(config)?;
    let bundle = input_bundle(config)?;
    let dir = RunDir::create(config, "train", run_dir)?;
    let c = &config.train;
    let run = train_protocol(&bundle, &splits.train, &splits.val, c)?;
    for e in &run.history {
        log::info!("{e}");
        dir.append_jsonl("logs/train.jsonl", e)?;
    }
    let path = dir.path(&format!("checkpoints/{}_{}.ckpt", c.task, c.protocol.as_str()));
    save_checkpoint(&run.bundle, &path)?;
    let cell = test_cell(&run.bundle, c.task, c.protocol, &splits.test, config);
    #[derive(Serialize)]
    struct Summary<'a> {
        task: Task,
        protocol: Protocol,
        pretraining: String,
        label_fraction: f64,
        train_size: usize,
        selected_epoch: usize,
        history: &'a [lungssl::supervised::TrainEpoch],
        test: Option<ReportCell>,
    }
    if let Some(cell) = &cell {
        log::info!("test AUC {:.4}", cell.auc);
    }
    dir.write_json(
        "reports/train.json",
        &Summary {
            task: c.task,
            protocol: c.protocol,
            pretraining: pretraining_name(&bundle),
            label_fraction: c.label_fraction,
            train_size: run.train_size,
            selected_epoch: run.selected_epoch,
            history: &run.history,
            test: cell,
        },
    )?;
    println!("{}", path.display());
    Ok(())
}

fn eval(config: &RunConfig, run_dir: Option<&Path>) -> anyhow::Result<()> {
    let mut provenance = BTreeMap::new();
    let (cells, first, test) = match &config.eval.cells {
        Some(path) => {
            provenance.insert("cells".to_string(), path.display().to_string());
            (load_cells_csv(path)?, None, None)
        }
        None => {
            let splits = load_splits(config)?;
            let paths: Vec<&Path> = config.model.checkpoint.iter().chain(&config.model.extra).map(|p| p.as_path()).collect();
            if paths.is_empty() {
                bail!(UsageError("eval: set eval.cells or model.checkpoint".into()));
            }
            let mut cells = Vec::new();
            let mut first = None;
            for (i, path) in paths.iter().enumerate() {
                let bundle = load_bundle(config, path)?;
                let protocol: Protocol = bundle
                    .metadata
                    .protocol
                    .as_deref()
                    .ok_or_else(|| anyhow::anyhow!("{} was not produced by `train`", path.display()))?
                    .parse()?;
                for &task in bundle.heads.keys() {
                    cells.extend(test_cell(&bundle, task, protocol, &splits.test, config));
                }
                provenance.insert(format!("checkpoint{i}"), path.display().to_string());
                first.get_or_insert(bundle);
            }
            (cells, first, Some(splits.test))
        }
    };
    let dir = RunDir::create(config, "eval", run_dir)?;
    let layout = ReportLayout::from_cells(&cells);
    let mut report = build_report(cells, &layout)?;
    report.provenance = provenance;
    write_cells_csv(&report.cells, dir.path("reports/cells.csv"))?;
    dir.write_text("reports/report.json", &report.to_json()?)?;
    let text = report.render_text();
    dir.write_text("reports/report.txt", &text)?;
    print!("{text}");

    if let (Some(bundle), Some(test)) = (first, test) {
        if config.eval.export_features {
            export_features(&bundle.extractor, &test, dir.path("reports/features.csv"), config.execution)?;
        }
        if let Some(method) = config.eval.projection {
            let images: Vec<_> = test.records().iter().map(|r| r.pixels.as_ref()).collect();
            let f = bundle.extractor.features(&images, config.execution)?;
            let f = Matrix::from_vec(f.rows, f.cols, f.data.iter().map(|&v| v as f64).collect());
            let p = project_2d(&f, method)?;
            let mut w = csv::Writer::from_path(dir.path("reports/projection.csv"))?;
            w.write_record(["image_id", "x", "y"])?;
            for (i, r) in test.records().iter().enumerate() {
                w.write_record([r.image_id.clone(), p.get(i, 0).to_string(), p.get(i, 1).to_string()])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn sweep(config: &RunConfig, run_dir: Option<&Path>) -> anyhow::Result<()> {
    config.sweep.validate()?;
    config.train.validate()?;
    let splits = load_splits(config)?;
    let mut sources = Vec::new();
    if let Some(p) = &config.model.checkpoint {
        let bundle = load_bundle(config, p)?;
        sources.push(BundleSource {
            name: pretraining_name(&bundle),
            bundle,
        });
    }
    sources.push(BundleSource {
        name: "none".into(),
        bundle: init_bundle(&config.architecture, config.seed)?,
    });
    let dir = RunDir::create(config, "sweep", run_dir)?;
    let cells = run_label_efficiency_sweep(&sources, &splits.train, &splits.val, &splits.test, &config.sweep, &config.train, |cell| {
        log::info!(
            "{} {} {} fraction {}: mean AUC {:.4}",
            cell.source,
            cell.protocol,
            cell.task,
            cell.fraction,
            cell.mean_auc
        );
        if let Err(e) = dir.append_jsonl("logs/sweep.jsonl", cell) {
            log::warn!("{e}");
        }
    })?;
    dir.write_json("reports/sweep.json", &cells)?;
    let mut w = csv::Writer::from_path(dir.path("reports/sweep.csv"))?;
    w.write_record(["source", "protocol", "task", "fraction", "mean_auc", "aucs", "train_sizes"])?;
    for c in &cells {
        let join = |v: Vec<String>| v.join(";");
        w.write_record([
            c.source.clone(),
            c.protocol.as_str().to_string(),
            c.task.to_string(),
            c.fraction.to_string(),
            c.mean_auc.to_string(),
            join(c.aucs.iter().map(|a| a.to_string()).collect()),
            join(c.train_sizes.iter().map(|a| a.to_string()).collect()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A bundle with a head for every task; missing heads get a fresh head of
/// `kind` so latency can be measured before any training.
fn complete_bundle(config: &RunConfig, path: Option<&Path>, kind: HeadKind) -> anyhow::Result<ModelBundle> {
    let mut bundle = match path {
        Some(p) => load_bundle(config, p)?,
        None => init_bundle(&config.architecture, config.seed)?,
    };
    for task in Task::ALL {
        if !bundle.heads.contains_key(&task) {
            if path.is_some() {
                log::warn!("no {task} head in the checkpoint; using an untrained one");
            }
            let head = new_head(kind, bundle.feature_dim(), config.seed, task);
            bundle.insert_head(task, head)?;
        }
    }
    Ok(bundle)
}

fn tree_models(config: &RunConfig, mode: InferenceMode) -> anyhow::Result<TreeModels> {
    let main = config.model.checkpoint.as_deref();
    Ok(match mode {
        InferenceMode::SharedBackbone => TreeModels::shared(&complete_bundle(config, main, HeadKind::Mlp32)?)?,
        InferenceMode::SerialCnns => {
            let s = &config.model.serial;
            let pick = |p: &Option<std::path::PathBuf>| complete_bundle(config, p.as_deref().or(main), HeadKind::Linear);
            TreeModels::serial(&pick(&s.view)?, &pick(&s.ab)?, &pick(&s.pe)?)?
        }
    })
}

fn bench(config: &RunConfig, run_dir: Option<&Path>) -> anyhow::Result<()> {
    let images_from = if config.data.manifest.is_some() || config.data.synthetic.is_some() {
        config.validate_data()?;
        load_dataset(config)?
    } else {
        generate_synthetic(&SyntheticConfig {
            n_patients: 2,
            videos_per_patient: 2,
            frames_per_video: 4,
            seed: config.seed,
            ..Default::default()
        })?
    };
    let modes = match config.bench.mode {
        BenchMode::SerialCnns => vec![InferenceMode::SerialCnns],
        BenchMode::SharedBackbone => vec![InferenceMode::SharedBackbone],
        BenchMode::Both => vec![InferenceMode::SerialCnns, InferenceMode::SharedBackbone],
    };
    let models = modes.iter().map(|&m| tree_models(config, m)).collect::<anyhow::Result<Vec<_>>>()?;
    let dir = RunDir::create(config, "bench", run_dir)?;
    let images: Vec<_> = images_from.records().iter().map(|r| r.pixels.as_ref()).collect();
    let mut results = Vec::new();
    for m in &models {
        let r = benchmark(m, &images, &config.tree, &config.bench.run)?;
        println!(
            "{}: n={} mean {:.3} ms sd {:.3} ms, {} FLOPs/prediction",
            r.mode,
            r.n,
            r.mean_s * 1e3,
            r.sd_s * 1e3,
            r.flops_per_prediction
        );
        results.push(r);
    }
    if let [a, b] = results.as_slice() {
        println!("latency ratio shared/serial {:.3}", b.mean_s / a.mean_s);
    }
    dir.write_json("reports/bench.json", &results)?;
    Ok(())
}

fn infer(config: &RunConfig, run_dir: Option<&Path>) -> anyhow::Result<()> {
    let splits = load_splits(config)?;
    let mode = match config.bench.mode {
        BenchMode::SerialCnns => InferenceMode::SerialCnns,
        _ => InferenceMode::SharedBackbone,
    };
    let models = tree_models(config, mode)?;
    let dir = RunDir::create(config, "infer", run_dir)?;
    let out = infer_batch(&splits.test, &models, &config.tree, config.execution)?;
    #[derive(Serialize)]
    struct Record<'a> {
        image_id: &'a str,
        #[serde(flatten)]
        outcome: &'a lungssl::inference::TreeOutcome,
    }
    let mut lines = String::new();
    for (r, o) in splits.test.records().iter().zip(&out.outcomes) {
        lines += &serde_json::to_string(&Record {
            image_id: &r.image_id,
            outcome: o,
        })?;
        lines.push('\n');
    }
    dir.write_text("reports/infer.jsonl", &lines)?;
    #[derive(Serialize)]
    struct TaskSummary {
        scored: usize,
        auc: Option<f64>,
    }
    let summary: BTreeMap<Task, TaskSummary> = out
        .scores
        .iter()
        .map(|(&t, (s, l))| {
            (
                t,
                TaskSummary {
                    scored: s.len(),
                    auc: auc(s, l).ok(),
                },
            )
        })
        .collect();
    for (t, s) in &summary {
        match s.auc {
            Some(a) => println!("{t}: {} scored, AUC {a:.4}", s.scored),
            None => println!("{t}: {} scored, AUC n/a", s.scored),
        }
    }
    dir.write_json("reports/infer_summary.json", &summary)?;
    Ok(())
}
