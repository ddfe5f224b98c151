//! Two-phase fine-tuning with patience-based early stopping on validation loss.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augmentation_plan, Augmentation, PixelGrid};
use crate::backbone::{save_checkpoint, set_trainable, AdaptedModel, ParamGroup, ParamGroups};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loader::ImageLoader;
use crate::loss::{batch_loss, ClassWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingPhase {
    pub trainable: ParamGroups,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl TrainingPhase {
    pub fn new(
        trainable: ParamGroups,
        learning_rate: f64,
        max_epochs: usize,
        patience: usize,
    ) -> Result<Self> {
        let phase = Self {
            trainable,
            learning_rate,
            max_epochs,
            patience,
        };
        phase.validate()?;
        Ok(phase)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Contract(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Contract("max_epochs and patience must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Contract(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !self.trainable.contains(ParamGroup::Head) {
            return Err(Error::Contract("every phase must train the head".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    phases: Vec<TrainingPhase>,
}

impl Schedule {
    pub fn new(phases: Vec<TrainingPhase>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Contract("a schedule needs at least one phase".into()));
        }
        for p in &phases {
            p.validate()?;
        }
        Ok(Self { phases })
    }

    /// Head-only warm-up (lr 0.01, ≤10 epochs, patience 5), then full
    /// fine-tuning (lr 0.001, ≤100 epochs, patience 10).
    pub fn standard() -> Self {
        Self {
            phases: vec![
                TrainingPhase {
                    trainable: ParamGroups::HEAD,
                    learning_rate: 0.01,
                    max_epochs: 10,
                    patience: 5,
                },
                TrainingPhase {
                    trainable: ParamGroups::ALL,
                    learning_rate: 0.001,
                    max_epochs: 100,
                    patience: 10,
                },
            ],
        }
    }

    pub fn phases(&self) -> &[TrainingPhase] {
        &self.phases
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::standard()
    }
}

/// Patience counter over validation losses. Epochs are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub epochs_seen: usize,
    pub stopped: bool,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self {
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            epochs_seen: 0,
            stopped: false,
        }
    }
}

impl EarlyStopState {
    /// True when the most recent update set a new best.
    pub fn improved_last(&self) -> bool {
        self.epochs_seen > 0 && self.best_epoch == self.epochs_seen
    }
}

/// Records one epoch's validation loss. Only a strictly lower loss counts as an
/// improvement; the state stops once `patience` epochs pass without one.
pub fn early_stop_update(
    state: EarlyStopState,
    validation_loss: f64,
    patience: usize,
) -> Result<EarlyStopState> {
    if state.stopped {
        return Err(Error::Contract("early stopping already triggered".into()));
    }
    if !validation_loss.is_finite() {
        return Err(Error::NumericInput(format!("validation loss {validation_loss}")));
    }
    let epoch = state.epochs_seen + 1;
    let mut next = EarlyStopState {
        epochs_seen: epoch,
        ..state
    };
    if validation_loss < state.best_loss {
        next.best_loss = validation_loss;
        next.best_epoch = epoch;
        next.epochs_since_improvement = 0;
    } else {
        next.epochs_since_improvement += 1;
    }
    next.stopped = next.epochs_since_improvement >= patience;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    /// Wall-clock seconds spent on the epoch.
    pub wall_time: f64,
}

pub const EPOCH_LOG_HEADER: &str = "phase,epoch,train_loss,val_loss,seconds";

/// `phase,epoch,train_loss,val_loss,seconds`. Losses use the shortest exact
/// decimal form so the file reproduces bit-for-bit across identical runs.
pub fn write_epoch_log<W: Write>(logs: &[EpochLog], mut out: W) -> Result<()> {
    writeln!(out, "{EPOCH_LOG_HEADER}")?;
    for l in logs {
        writeln!(
            out,
            "{},{},{},{},{:.3}",
            l.phase, l.epoch, l.train_loss, l.validation_loss, l.wall_time
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub momentum: f64,
    pub augment: bool,
    /// Decoded training images are kept in memory when they fit in this many bytes.
    pub cache_limit_bytes: usize,
    /// Where `phase<i>_best.ckpt` files go; `None` skips writing them.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            momentum: 0.9,
            augment: true,
            cache_limit_bytes: 1 << 30,
            checkpoint_dir: None,
        }
    }
}

/// splitmix64 over the inputs; gives independent seeds per phase and epoch.
fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Decoded images for one dataset, cached when small enough.
struct Feed<'a> {
    ds: &'a Dataset,
    loader: ImageLoader,
    cache: Option<Vec<PixelGrid>>,
    labels: Vec<usize>,
}

impl<'a> Feed<'a> {
    fn new(ds: &'a Dataset, m: &AdaptedModel, cache_limit_bytes: usize) -> Result<Self> {
        let labels = ds
            .records()
            .iter()
            .map(|r| {
                r.label
                    .ok_or_else(|| Error::Input(format!("training record {} has no label", r.image_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        if ds.label_space().len() != m.head_classes() {
            return Err(Error::Contract(format!(
                "{}-way head for a {}-class dataset",
                m.head_classes(),
                ds.label_space().len()
            )));
        }
        let (h, w) = m.spec().input_resolution;
        let loader = ImageLoader::new(h, w);
        let cache = if ds.len() * h * w * 3 <= cache_limit_bytes {
            Some(loader.load_all(ds)?)
        } else {
            None
        };
        Ok(Self {
            ds,
            loader,
            cache,
            labels,
        })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn images(&self, indices: &[usize], augment: Option<&[Augmentation]>) -> Result<Vec<PixelGrid>> {
        let apply = |i: usize, img: PixelGrid| match augment {
            Some(plan) => plan[i].apply(&img),
            None => img,
        };
        match &self.cache {
            Some(cache) => Ok(indices.iter().map(|&i| apply(i, cache[i].clone())).collect()),
            None => indices
                .par_iter()
                .map(|&i| Ok(apply(i, self.loader.load(&self.ds.records()[i])?)))
                .collect(),
        }
    }
}

fn logits_rows(logits: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(logits.to_dtype(DType::F64)?.to_vec2::<f64>()?)
}

fn feed_loss(m: &AdaptedModel, feed: &Feed, w: &ClassWeights, batch_size: usize) -> Result<f64> {
    let mut samples = Vec::with_capacity(feed.len());
    let indices: Vec<usize> = (0..feed.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let images = feed.images(chunk, None)?;
        let refs: Vec<&PixelGrid> = images.iter().collect();
        let logits = m.logits(&m.input_tensor(&refs)?)?.detach();
        for (row, &i) in logits_rows(&logits)?.into_iter().zip(chunk) {
            samples.push((row, feed.labels[i]));
        }
    }
    Ok(batch_loss(&samples, w)?.value)
}

/// Mean weighted loss of the model over a labeled dataset, without augmentation.
pub fn validation_loss(m: &AdaptedModel, ds: &Dataset, w: &ClassWeights, opts: &TrainOptions) -> Result<f64> {
    let feed = Feed::new(ds, m, opts.cache_limit_bytes)?;
    feed_loss(m, &feed, w, opts.batch_size)
}

/// SGD with momentum (`v ← μv + g`, `θ ← θ − lr·v`) over one parameter list.
struct Sgd {
    vars: Vec<candle_core::Var>,
    velocity: Vec<Option<Tensor>>,
    lr: f64,
    momentum: f64,
}

impl Sgd {
    fn new(vars: Vec<candle_core::Var>, lr: f64, momentum: f64) -> Self {
        let velocity = vec![None; vars.len()];
        Self {
            vars,
            velocity,
            lr,
            momentum,
        }
    }

    fn step(&mut self, grads: &candle_core::backprop::GradStore) -> Result<()> {
        for (var, velocity) in self.vars.iter().zip(self.velocity.iter_mut()) {
            let Some(grad) = grads.get(var.as_tensor()) else {
                continue;
            };
            let grad = grad.detach();
            let v = match velocity.take() {
                Some(v) => ((v * self.momentum)? + grad)?,
                None => grad,
            };
            let updated = (var.as_tensor().detach() - (&v * self.lr)?)?;
            var.set(&updated)?;
            *velocity = Some(v);
        }
        Ok(())
    }
}

/// Runs one phase as phase number 1. See [`run_schedule`] for multi-phase runs.
pub fn run_phase(
    m: AdaptedModel,
    phase: &TrainingPhase,
    train: &Dataset,
    val: &Dataset,
    w: &ClassWeights,
    seed: u64,
    opts: &TrainOptions,
) -> Result<(AdaptedModel, Vec<EpochLog>)> {
    let m = set_trainable(m, phase.trainable)?;
    run_phase_numbered(m, phase, 1, train, val, w, seed, opts)
}

#[allow(clippy::too_many_arguments)]
fn run_phase_numbered(
    m: AdaptedModel,
    phase: &TrainingPhase,
    phase_no: usize,
    train: &Dataset,
    val: &Dataset,
    w: &ClassWeights,
    seed: u64,
    opts: &TrainOptions,
) -> Result<(AdaptedModel, Vec<EpochLog>)> {
    phase.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if w.len() != m.head_classes() {
        return Err(Error::Contract(format!(
            "{} class weights for a {}-way head",
            w.len(),
            m.head_classes()
        )));
    }
    let train_feed = Feed::new(train, &m, opts.cache_limit_bytes)?;
    let val_feed = Feed::new(val, &m, opts.cache_limit_bytes)?;
    let mut sgd = Sgd::new(m.trainable_vars(), phase.learning_rate, opts.momentum);
    let mut state = EarlyStopState::default();
    let mut best = m.snapshot()?;
    let mut log: Vec<EpochLog> = Vec::new();
    let k = m.head_classes();

    let diverged = |epoch: usize, loss: f64, log: &[EpochLog]| Error::Divergence {
        phase: phase_no,
        epoch,
        loss,
        log: log.to_vec(),
    };

    for epoch in 1..=phase.max_epochs {
        let started = Instant::now();
        let epoch_seed = derive_seed(seed, phase_no as u64, epoch as u64);
        let mut order: Vec<usize> = (0..train_feed.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let plan = opts
            .augment
            .then(|| augmentation_plan(train_feed.len(), epoch_seed.wrapping_add(1)));

        let mut loss_sum = 0.0;
        for batch in order.chunks(opts.batch_size.max(1)) {
            let images = train_feed.images(batch, plan.as_deref())?;
            let refs: Vec<&PixelGrid> = images.iter().collect();
            let logits = m.logits(&m.input_tensor(&refs)?)?;
            let samples: Vec<(Vec<f64>, usize)> = logits_rows(&logits)?
                .into_iter()
                .zip(batch.iter().map(|&i| train_feed.labels[i]))
                .collect();
            let loss = match batch_loss(&samples, w) {
                Ok(l) if l.value.is_finite() => l,
                Ok(l) => return Err(diverged(epoch, l.value, &log)),
                Err(Error::NumericInput(_)) => return Err(diverged(epoch, f64::NAN, &log)),
                Err(e) => return Err(e),
            };
            loss_sum += loss.value * batch.len() as f64;

            // Backpropagate ∂loss/∂logits through the network: the gradient of
            // Σ logits ⊙ G with G held constant is exactly that chain rule.
            let upstream: Vec<f32> = loss.gradient.iter().flatten().map(|&g| g as f32).collect();
            let upstream = Tensor::from_vec(upstream, (batch.len(), k), &Device::Cpu)?;
            let grads = (logits * upstream)?.sum_all()?.backward()?;
            sgd.step(&grads)?;
        }
        let train_loss = loss_sum / train_feed.len() as f64;
        let validation_loss = feed_loss(&m, &val_feed, w, opts.batch_size)?;
        if !train_loss.is_finite() || !validation_loss.is_finite() {
            return Err(diverged(epoch, train_loss, &log));
        }

        state = early_stop_update(state, validation_loss, phase.patience)?;
        if state.improved_last() {
            best = m.snapshot()?;
        }
        log.push(EpochLog {
            phase: phase_no,
            epoch,
            train_loss,
            validation_loss,
            wall_time: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "phase {phase_no} epoch {epoch}: train {train_loss:.5} val {validation_loss:.5}{}",
            if state.improved_last() { " *" } else { "" }
        );
        if state.stopped {
            break;
        }
    }
    m.restore(&best)?;
    Ok((m, log))
}

/// Runs the phases in order; each starts from the previous phase's best weights
/// with fresh momentum buffers.
pub fn run_schedule(
    mut m: AdaptedModel,
    schedule: &Schedule,
    train: &Dataset,
    val: &Dataset,
    w: &ClassWeights,
    seed: u64,
    opts: &TrainOptions,
) -> Result<(AdaptedModel, Vec<EpochLog>)> {
    let mut all = Vec::new();
    for (i, phase) in schedule.phases().iter().enumerate() {
        let phase_no = i + 1;
        m = set_trainable(m, phase.trainable)?;
        let (trained, log) = run_phase_numbered(m, phase, phase_no, train, val, w, seed, opts)?;
        m = trained;
        all.extend(log);
        if let Some(dir) = &opts.checkpoint_dir {
            save_checkpoint(&m, &dir.join(format!("phase{phase_no}_best.ckpt")))?;
        }
    }
    Ok((m, all))
}
