use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use dermnet_core::backbone::{
    load_pretrained, open_checkpoint, replace_head, save_checkpoint, BackboneName, BackboneSpec,
};
use dermnet_core::dataset::{
    apply_split_manifest, parse_ground_truth, read_split_manifest, stratified_split, write_ground_truth,
    write_split_manifest, Dataset, Fraction, SplitResult,
};
use dermnet_core::ensemble::{
    predict_dataset, read_predictions, write_predictions, Combiner, PredictOptions, PredictionSet,
};
use dermnet_core::evaluation::score_files;
use dermnet_core::labels::LabelSpace;
use dermnet_core::loss::ClassWeights;
use dermnet_core::synthetic::{self, SyntheticSpec};
use dermnet_core::training::{run_schedule, write_epoch_log, Schedule, TrainOptions};
use serde::Serialize;

use crate::config::{RunConfig, WeightMode};

pub const SPLIT_MANIFEST: &str = "split.csv";
pub const TRAIN_TRUTH: &str = "train_gt.csv";
pub const VALIDATION_TRUTH: &str = "validation_gt.csv";

pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub json: bool,
}

impl Globals {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// Overrides shared by commands that read the dataset.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// One-hot ground-truth CSV.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Directory of `<image_id>.jpg|jpeg|png` files.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Where split files and per-backbone outputs go.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.ground_truth {
            cfg.ground_truth = p.clone();
        }
        if let Some(p) = &self.images {
            cfg.image_dir = p.clone();
        }
        if let Some(p) = &self.run_dir {
            cfg.run_dir = p.clone();
        }
    }
}

fn load_dataset(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let file = File::open(&cfg.ground_truth)
        .with_context(|| format!("opening ground truth {}", cfg.ground_truth.display()))?;
    Ok(parse_ground_truth(file, &cfg.image_dir, &cfg.label_space()?)?)
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> dermnet_core::Result<()>,
) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

fn write_split_files(cfg: &RunConfig, ds: &Dataset, split: &SplitResult) -> anyhow::Result<()> {
    write_file(&cfg.run_dir.join(SPLIT_MANIFEST), |w| {
        write_split_manifest(ds, split, w)
    })?;
    write_file(&cfg.run_dir.join(TRAIN_TRUTH), |w| {
        write_ground_truth(&split.train, w)
    })?;
    write_file(&cfg.run_dir.join(VALIDATION_TRUTH), |w| {
        write_ground_truth(&split.validation, w)
    })?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SplitSummary {
    classes: Vec<String>,
    total: Vec<usize>,
    train: Vec<usize>,
    validation: Vec<usize>,
    fraction: Fraction,
    seed: u64,
}

impl SplitSummary {
    fn new(ds: &Dataset, split: &SplitResult) -> Self {
        Self {
            classes: ds.label_space().codes().to_vec(),
            total: ds.class_counts().to_vec(),
            train: split.train.class_counts().to_vec(),
            validation: split.validation.class_counts().to_vec(),
            fraction: split.fraction,
            seed: split.seed,
        }
    }

    fn print(&self) {
        println!(
            "{:<8} {:>8} {:>8} {:>10}",
            "class", "total", "train", "validation"
        );
        for (i, code) in self.classes.iter().enumerate() {
            println!(
                "{code:<8} {:>8} {:>8} {:>10}",
                self.total[i], self.train[i], self.validation[i]
            );
        }
        println!(
            "{:<8} {:>8} {:>8} {:>10}",
            "all",
            self.total.iter().sum::<usize>(),
            self.train.iter().sum::<usize>(),
            self.validation.iter().sum::<usize>()
        );
    }
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Validation fraction, e.g. 0.1 or 1/10.
    #[arg(long)]
    fraction: Option<Fraction>,
}

pub fn split(g: &Globals, args: SplitArgs) -> anyhow::Result<()> {
    let mut cfg = g.config()?;
    args.data.apply(&mut cfg);
    if let Some(f) = args.fraction {
        cfg.split_fraction = f;
    }
    let ds = load_dataset(&cfg)?;
    let split = stratified_split(&ds, cfg.split_fraction, cfg.seed)?;
    write_split_files(&cfg, &ds, &split)?;
    let summary = SplitSummary::new(&ds, &split);
    if g.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        summary.print();
        println!("manifest: {}", cfg.run_dir.join(SPLIT_MANIFEST).display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// resnet50, densenet121, mobilenet or stub.
    #[arg(long, value_parser = crate::parse_backbone)]
    backbone: BackboneName,
    /// Directory holding `<backbone>.safetensors`.
    #[arg(long)]
    weights_dir: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
}

/// Everything needed to audit or repeat a training run.
#[derive(Debug, Serialize)]
struct TrainSnapshot<'a> {
    config: &'a RunConfig,
    backbone: BackboneSpec,
    schedule: Schedule,
    class_weights: Vec<f64>,
    train_class_counts: Vec<usize>,
    validation_class_counts: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    backbone: BackboneName,
    epochs_per_phase: Vec<usize>,
    best_validation_loss_per_phase: Vec<f64>,
    body_checksum_initial: String,
    body_checksum_after_phase: Vec<String>,
    model: PathBuf,
}

pub fn train(g: &Globals, args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = g.config()?;
    args.data.apply(&mut cfg);
    if let Some(dir) = args.weights_dir {
        cfg.weights_dir = dir;
    }
    if let Some(bs) = args.batch_size {
        cfg.batch_size = bs;
    }
    cfg.validate()?;

    let ds = load_dataset(&cfg)?;
    let manifest_path = cfg.run_dir.join(SPLIT_MANIFEST);
    let split = if manifest_path.is_file() {
        let manifest = read_split_manifest(File::open(&manifest_path)?)?;
        apply_split_manifest(&ds, &manifest, cfg.split_fraction, cfg.seed)?
    } else {
        let split = stratified_split(&ds, cfg.split_fraction, cfg.seed)?;
        write_split_files(&cfg, &ds, &split)?;
        split
    };

    let weights = match &cfg.class_weights {
        WeightMode::Named(_) => ClassWeights::for_dataset(&split.train)?,
        WeightMode::Explicit(w) => ClassWeights::explicit(w.clone(), split.train.class_counts().to_vec())?,
    };
    let schedule = cfg.schedule()?;
    let spec = BackboneSpec::native(args.backbone);
    let out_dir = cfg.run_dir.join(args.backbone.as_str());
    std::fs::create_dir_all(&out_dir)?;

    let snapshot = TrainSnapshot {
        config: &cfg,
        backbone: spec,
        schedule: schedule.clone(),
        class_weights: weights.weights().to_vec(),
        train_class_counts: split.train.class_counts().to_vec(),
        validation_class_counts: split.validation.class_counts().to_vec(),
    };
    std::fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(&snapshot)?,
    )?;

    let label_space = ds.label_space().clone();
    let model = load_pretrained(&spec, &cfg.weights_dir)?;
    let mut model = replace_head(model, label_space.len(), cfg.seed)?;
    model.set_label_space(label_space)?;
    let body_checksum_initial = model.body_checksum()?;

    let opts = TrainOptions {
        batch_size: cfg.batch_size,
        momentum: cfg.momentum,
        augment: cfg.augment,
        checkpoint_dir: Some(out_dir.clone()),
        ..TrainOptions::default()
    };
    let (model, log) = match run_schedule(
        model,
        &schedule,
        &split.train,
        &split.validation,
        &weights,
        cfg.seed,
        &opts,
    ) {
        Ok(done) => done,
        Err(dermnet_core::Error::Divergence {
            phase,
            epoch,
            loss,
            log,
        }) => {
            write_file(&out_dir.join("epochs.csv"), |w| write_epoch_log(&log, w))?;
            bail!(
                "training diverged in phase {phase} epoch {epoch} (loss {loss}); partial log in epochs.csv"
            );
        }
        Err(e) => return Err(e.into()),
    };
    write_file(&out_dir.join("epochs.csv"), |w| write_epoch_log(&log, w))?;
    let model_path = out_dir.join("model.ckpt");
    save_checkpoint(&model, &model_path)?;

    let mut body_checksum_after_phase = Vec::new();
    let mut epochs_per_phase = Vec::new();
    let mut best_validation_loss_per_phase = Vec::new();
    for phase in 1..=schedule.phases().len() {
        let ckpt = open_checkpoint(&out_dir.join(format!("phase{phase}_best.ckpt")))?;
        body_checksum_after_phase.push(ckpt.body_checksum()?);
        let entries: Vec<_> = log.iter().filter(|l| l.phase == phase).collect();
        epochs_per_phase.push(entries.len());
        best_validation_loss_per_phase.push(
            entries
                .iter()
                .map(|l| l.validation_loss)
                .fold(f64::INFINITY, f64::min),
        );
    }
    let summary = TrainSummary {
        backbone: args.backbone,
        epochs_per_phase,
        best_validation_loss_per_phase,
        body_checksum_initial,
        body_checksum_after_phase,
        model: model_path,
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    if g.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        for (i, (n, best)) in summary
            .epochs_per_phase
            .iter()
            .zip(&summary.best_validation_loss_per_phase)
            .enumerate()
        {
            println!("phase {}: {n} epochs, best validation loss {best:.5}", i + 1);
        }
        println!("model: {}", summary.model.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of `<image_id>.jpg|jpeg|png` files; defaults to the config's `image_dir`.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Only predict the images listed in this ground-truth CSV.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Leave undecodable images out instead of aborting.
    #[arg(long)]
    skip_failures: bool,
}

pub fn predict(g: &Globals, args: PredictArgs) -> anyhow::Result<()> {
    let images = match args.images.clone() {
        Some(dir) => dir,
        None => g.config()?.image_dir,
    };
    let model = open_checkpoint(&args.checkpoint)?;
    let label_space = match model.label_space() {
        Some(ls) => ls.clone(),
        None => LabelSpace::lesions(),
    };
    let ds = match &args.ground_truth {
        Some(gt) => parse_ground_truth(File::open(gt)?, &images, &label_space)?,
        None => Dataset::from_image_dir(&images, label_space)?,
    };
    let model_id = args
        .checkpoint
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .unwrap_or(model.spec().name.as_str())
        .to_string();
    let report = predict_dataset(
        &model,
        &ds,
        &model_id,
        PredictOptions {
            batch_size: args.batch_size,
            skip_failures: args.skip_failures,
        },
    )?;
    for (id, why) in &report.failures {
        log::warn!("skipped {id}: {why}");
    }
    emit_predictions(&report.predictions, args.out.as_deref())
}

fn emit_predictions(ps: &PredictionSet, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => write_file(path, |w| write_predictions(ps, w)),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_predictions(ps, &mut lock)?;
            Ok(())
        }
    }
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Prediction CSVs, one per member.
    #[arg(required = true)]
    members: Vec<PathBuf>,
    /// `soft` (probability average) or `vote` (majority of argmaxes); defaults to the config.
    #[arg(long, value_parser = crate::parse_combiner)]
    combiner: Option<Combiner>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn ensemble(g: &Globals, args: EnsembleArgs) -> anyhow::Result<()> {
    let combiner = match args.combiner {
        Some(c) => c,
        None => g.config()?.combiner,
    };
    let distinct: HashSet<&PathBuf> = args.members.iter().collect();
    if distinct.len() != args.members.len() {
        bail!("ensemble members must be distinct files");
    }
    let mut sets = Vec::with_capacity(args.members.len());
    for path in &args.members {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let set = read_predictions(file, &path.display().to_string(), None)
            .with_context(|| format!("reading {}", path.display()))?;
        sets.push(set);
    }
    let combined = combiner.combine(&sets)?;
    emit_predictions(&combined, args.out.as_deref())
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// One-hot ground-truth CSV.
    truth: PathBuf,
    /// Prediction CSV.
    predictions: PathBuf,
}

pub fn score(g: &Globals, args: ScoreArgs) -> anyhow::Result<()> {
    let label_space = match &g.config {
        Some(_) => g.config()?.label_space()?,
        None => {
            let header = std::fs::read_to_string(&args.predictions)?;
            let first = header.lines().next().unwrap_or_default();
            let codes: Vec<&str> = first.trim_end_matches('\r').split(',').skip(1).collect();
            LabelSpace::new(&codes)?
        }
    };
    let report = score_files(
        File::open(&args.truth).with_context(|| format!("opening {}", args.truth.display()))?,
        File::open(&args.predictions).with_context(|| format!("opening {}", args.predictions.display()))?,
        &label_space,
    )?;
    if g.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    images: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
}

pub fn make_synthetic(g: &Globals, args: SyntheticArgs) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        images: args.images,
        size: args.size,
        seed: g.seed.unwrap_or(0),
        ..SyntheticSpec::default()
    };
    let made = synthetic::make_synthetic(&args.out, &spec)?;
    let cfg = RunConfig {
        ground_truth: PathBuf::from(synthetic::GROUND_TRUTH_FILE),
        image_dir: PathBuf::from(synthetic::IMAGE_DIR),
        run_dir: PathBuf::from("runs/synthetic"),
        classes: made.label_space.codes().to_vec(),
        backbones: vec![BackboneName::Stub],
        seed: spec.seed,
        ..RunConfig::default()
    };
    let cfg_path = args.out.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg)?)?;
    if g.json {
        println!(
            "{}",
            serde_json::json!({
                "classes": made.label_space.codes(),
                "class_counts": made.class_counts,
                "config": cfg_path,
            })
        );
    } else {
        println!(
            "wrote {} images ({:?}) and {}",
            made.class_counts.iter().sum::<usize>(),
            made.class_counts,
            cfg_path.display()
        );
    }
    Ok(())
}
