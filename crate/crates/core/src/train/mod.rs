//! Loss, batch preparation, optimizer steps, and the epoch loop with
//! checkpointing and early stopping.

pub mod optim;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{clip_gradients, lr_at, Adam, TrainConfig};

use crate::error::{shape_err, Error, Result};
use crate::mask::{compress, compute_cirm, valid_bins, Compression, MaskForm, MaskGrid};
use crate::model::{backward, forward_with_cache, save_checkpoint, CheckpointMeta, McNetParams, ModelConfig};
use crate::normalize::{offline_normalize, online_normalize};
use crate::simulate::{MixtureSample, MixtureSampler};
use crate::stft::{stft, StftConfig};
use crate::{Complex, Mode};

/// Mean squared error over the real and imaginary parts of valid bins.
pub fn loss(pred: &MaskGrid, target: &MaskGrid, valid: ArrayView2<'_, bool>) -> Result<f64> {
    if pred.form != MaskForm::Compressed || target.form != MaskForm::Compressed {
        return Err(Error::InvalidArgument("loss is defined on compressed masks".into()));
    }
    if pred.data.dim() != target.data.dim() || valid.dim() != pred.data.dim() {
        return Err(shape_err(format!(
            "prediction {:?}, target {:?}, valid {:?}",
            pred.data.dim(),
            target.data.dim(),
            valid.dim()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((p, t), &v) in pred.data.iter().zip(target.data.iter()).zip(valid.iter()) {
        if v {
            sum += (p - t).norm_sqr();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Data("no valid bins in loss".into()));
    }
    Ok(sum / (2 * count) as f64)
}

/// Loss on a raw `[T, F, 2]` network output and its gradient.
pub fn loss_and_grad(y: ArrayView3<'_, f64>, target: &MaskGrid, valid: ArrayView2<'_, bool>) -> Result<(f64, Array3<f64>)> {
    let (t, f, two) = y.dim();
    if two != 2 || target.data.dim() != (t, f) || valid.dim() != (t, f) {
        return Err(shape_err(format!(
            "output {:?}, target {:?}, valid {:?}",
            y.dim(),
            target.data.dim(),
            valid.dim()
        )));
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::Data("no valid bins in loss".into()));
    }
    let denom = (2 * count) as f64;
    let mut grad = Array3::zeros((t, f, 2));
    let mut sum = 0.0;
    for ti in 0..t {
        for fi in 0..f {
            if !valid[[ti, fi]] {
                continue;
            }
            let tg = target.data[[ti, fi]];
            let dr = y[[ti, fi, 0]] - tg.re;
            let di = y[[ti, fi, 1]] - tg.im;
            sum += dr * dr + di * di;
            grad[[ti, fi, 0]] = 2.0 * dr / denom;
            grad[[ti, fi, 1]] = 2.0 * di / denom;
        }
    }
    Ok((sum / denom, grad))
}

/// Network input and regression target for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    /// Normalized `[T, F, M]` spectrogram.
    pub input: Array3<Complex>,
    pub target: MaskGrid,
    pub valid: Array2<bool>,
    pub reference_channel: usize,
}

/// STFT, normalization per the model's mode, and the compressed cIRM target.
/// With `trim_edges` the two half-padded boundary frames are dropped, so a
/// crop of `samples_for_frames(T)` samples yields exactly `T` frames.
pub fn prepare_item(
    sample: &MixtureSample,
    stft_cfg: &StftConfig,
    model: &ModelConfig,
    smoothing_len: usize,
    trim_edges: bool,
) -> Result<TrainItem> {
    let r = model.reference_channel;
    if sample.channels() != model.channels {
        return Err(shape_err(format!(
            "mixture has {} channels, model expects {}",
            sample.channels(),
            model.channels
        )));
    }
    let mut noisy = stft(sample.noisy.view(), stft_cfg, r)?;
    let mut clean = stft(sample.clean.view(), stft_cfg, r)?;
    if trim_edges && noisy.n_frames() > 2 {
        let t = noisy.n_frames();
        noisy = noisy.slice_frames(1, t - 1);
        clean = clean.slice_frames(1, t - 1);
    }
    let target = compress(&compute_cirm(clean.reference(), noisy.reference())?, Compression::default())?;
    let valid = valid_bins(noisy.reference());
    let (normed, _) = match model.mode {
        Mode::Online => online_normalize(&noisy, smoothing_len)?,
        Mode::Offline => offline_normalize(&noisy)?,
    };
    Ok(TrainItem {
        input: normed.data,
        target,
        valid,
        reference_channel: r,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

pub struct Trainer {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stft: StftConfig,
    pub smoothing_len: usize,
    pub params: McNetParams,
    adam: Adam,
    pub epoch: usize,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: ModelConfig, train: TrainConfig, stft: StftConfig, smoothing_len: usize, seed: u64) -> Result<Self> {
        let params = McNetParams::init(&model, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Self::with_params(model, train, stft, smoothing_len, params)
    }

    pub fn with_params(
        model: ModelConfig,
        train: TrainConfig,
        stft: StftConfig,
        smoothing_len: usize,
        params: McNetParams,
    ) -> Result<Self> {
        model.validate()?;
        train.validate()?;
        stft.validate()?;
        params.check_against(&model)?;
        if smoothing_len < 2 {
            return Err(Error::Config(format!("smoothing length must be >= 2, got {smoothing_len}")));
        }
        let adam = Adam::new(&params, &train);
        Ok(Self {
            model,
            train,
            stft,
            smoothing_len,
            params,
            adam,
            epoch: 0,
            step: 0,
        })
    }

    pub fn prepare(&self, sample: &MixtureSample, trim_edges: bool) -> Result<TrainItem> {
        prepare_item(sample, &self.stft, &self.model, self.smoothing_len, trim_edges)
    }

    /// Mean loss and mean gradient over a batch.
    pub fn batch_loss_and_grad(&self, batch: &[TrainItem]) -> Result<(f64, McNetParams)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut grads = McNetParams::zeros(&self.model);
        let mut total = 0.0;
        for item in batch {
            let (y, cache) = forward_with_cache(item.input.view(), item.reference_channel, &self.model, &self.params)?;
            let (l, dy) = loss_and_grad(y.view(), &item.target, item.valid.view())?;
            total += l;
            grads.add_assign(&backward(&self.model, &self.params, &cache, dy.view()));
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    pub fn current_lr(&self) -> f64 {
        lr_at(self.epoch, &self.train)
    }

    /// One clipped Adam step at the current epoch's learning rate.
    pub fn train_step(&mut self, batch: &[TrainItem]) -> Result<StepRecord> {
        let (loss, mut grads) = self.batch_loss_and_grad(batch)?;
        if !loss.is_finite() {
            log::error!("non-finite loss {loss} at epoch {} step {}", self.epoch, self.step);
            return Err(Error::Numerical(format!(
                "non-finite loss {loss} at epoch {} step {}",
                self.epoch, self.step
            )));
        }
        let grad_norm = clip_gradients(&mut grads, self.train.clip_norm)?;
        let lr = self.current_lr();
        self.adam.step(&mut self.params, &grads, lr);
        self.step += 1;
        Ok(StepRecord {
            epoch: self.epoch,
            step: self.step,
            loss,
            lr,
            grad_norm,
        })
    }

    /// Mean loss over `items` without updating anything.
    pub fn evaluate(&self, items: &[TrainItem]) -> Result<f64> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("no evaluation items".into()));
        }
        let mut total = 0.0;
        for item in items {
            let (y, _) = forward_with_cache(item.input.view(), item.reference_channel, &self.model, &self.params)?;
            let pred = MaskGrid::from_network_output(y.view(), item.target.compression);
            total += loss(&pred, &item.target, item.valid.view())?;
        }
        Ok(total / items.len() as f64)
    }

    pub fn checkpoint_meta(&self, dev_loss: Option<f64>) -> CheckpointMeta {
        CheckpointMeta {
            model: self.model.clone(),
            stft: self.stft,
            smoothing_len: self.smoothing_len,
            epoch: Some(self.epoch),
            dev_loss,
        }
    }
}

/// Supplier of training batches.
pub trait BatchSource {
    fn next_batch(&mut self) -> Result<Vec<TrainItem>>;
}

/// The same batch on every call.
pub struct FixedBatch(pub Vec<TrainItem>);

impl BatchSource for FixedBatch {
    fn next_batch(&mut self) -> Result<Vec<TrainItem>> {
        Ok(self.0.clone())
    }
}

/// Fresh simulated crops on every call.
pub struct SimulatedBatches {
    sampler: MixtureSampler,
    rng: ChaCha8Rng,
    batch: usize,
    model: ModelConfig,
    smoothing_len: usize,
}

impl SimulatedBatches {
    pub fn new(sampler: MixtureSampler, model: ModelConfig, batch: usize, smoothing_len: usize, seed: u64) -> Result<Self> {
        if sampler.channels() != model.channels {
            return Err(Error::Config(format!(
                "simulated array has {} microphones, model expects {}",
                sampler.channels(),
                model.channels
            )));
        }
        Ok(Self {
            sampler,
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch,
            model,
            smoothing_len,
        })
    }
}

impl BatchSource for SimulatedBatches {
    fn next_batch(&mut self) -> Result<Vec<TrainItem>> {
        self.sampler
            .sample_training_batch(self.batch, &mut self.rng)?
            .iter()
            .map(|s| prepare_item(s, &self.sampler.stft, &self.model, self.smoothing_len, true))
            .collect()
    }
}

/// Runs a batch source on a worker thread, keeping up to `depth` batches
/// queued ahead of the trainer.
pub struct Prefetch {
    rx: Receiver<Result<Vec<TrainItem>>>,
    worker: Option<JoinHandle<()>>,
}

impl Prefetch {
    pub fn spawn<S: BatchSource + Send + 'static>(mut source: S, depth: usize) -> Self {
        let (tx, rx) = sync_channel(depth.max(1));
        let worker = std::thread::spawn(move || loop {
            let batch = source.next_batch();
            let failed = batch.is_err();
            if tx.send(batch).is_err() || failed {
                break;
            }
        });
        Self { rx, worker: Some(worker) }
    }
}

impl BatchSource for Prefetch {
    fn next_batch(&mut self) -> Result<Vec<TrainItem>> {
        self.rx
            .recv()
            .map_err(|_| Error::Data("batch producer stopped".into()))?
    }
}

impl Drop for Prefetch {
    fn drop(&mut self) {
        // Unblock the producer before joining it.
        let (_, dummy) = sync_channel(1);
        drop(std::mem::replace(&mut self.rx, dummy));
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Receives `epoch-N`, `best`, `train.jsonl` and `epochs.jsonl`.
    pub ckpt_dir: PathBuf,
    /// Stop after the first epoch that ends past this wall-clock budget.
    pub time_budget: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub best_checkpoint: PathBuf,
    pub stopped_early: bool,
}

fn append_json<T: Serialize>(w: &mut impl Write, record: &T) -> Result<()> {
    let line = serde_json::to_string(record).map_err(|e| Error::Data(e.to_string()))?;
    writeln!(w, "{line}")?;
    Ok(())
}

/// Trains for up to `max_epochs`, checkpointing every epoch and tracking the
/// best dev loss; stops after `patience` epochs without improvement.
pub fn fit(trainer: &mut Trainer, source: &mut dyn BatchSource, dev: &[TrainItem], opts: &FitOptions) -> Result<FitSummary> {
    fs::create_dir_all(&opts.ckpt_dir)?;
    let mut step_log = BufWriter::new(File::create(opts.ckpt_dir.join("train.jsonl"))?);
    let mut epoch_log = BufWriter::new(File::create(opts.ckpt_dir.join("epochs.jsonl"))?);
    let best_path = opts.ckpt_dir.join("best");
    let started = Instant::now();
    let mut epochs = Vec::new();
    let mut best = (0usize, f64::INFINITY);
    let mut since_best = 0;
    let mut stopped_early = false;
    while trainer.epoch < trainer.train.max_epochs {
        let epoch_start = Instant::now();
        let mut total = 0.0;
        for _ in 0..trainer.train.steps_per_epoch {
            let batch = source.next_batch()?;
            let rec = trainer.train_step(&batch)?;
            total += rec.loss;
            append_json(&mut step_log, &rec)?;
        }
        step_log.flush()?;
        let train_loss = total / trainer.train.steps_per_epoch as f64;
        let dev_loss = if dev.is_empty() { train_loss } else { trainer.evaluate(dev)? };
        if !dev_loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite dev loss at epoch {}", trainer.epoch)));
        }
        let record = EpochRecord {
            epoch: trainer.epoch,
            train_loss,
            dev_loss,
            lr: trainer.current_lr(),
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} train {:.5} dev {:.5} lr {:.3e}",
            record.epoch,
            train_loss,
            dev_loss,
            record.lr
        );
        append_json(&mut epoch_log, &record)?;
        epoch_log.flush()?;
        let meta = trainer.checkpoint_meta(Some(dev_loss));
        save_checkpoint(&opts.ckpt_dir.join(format!("epoch-{}", trainer.epoch)), &meta, &trainer.params)?;
        if dev_loss < best.1 {
            best = (trainer.epoch, dev_loss);
            since_best = 0;
            save_checkpoint(&best_path, &meta, &trainer.params)?;
        } else {
            since_best += 1;
        }
        epochs.push(record);
        trainer.epoch += 1;
        if since_best >= trainer.train.patience {
            log::info!("no dev improvement for {since_best} epochs; stopping");
            stopped_early = true;
            break;
        }
        if opts.time_budget.is_some_and(|b| started.elapsed() >= b) {
            log::info!("time budget reached after {} epochs", epochs.len());
            break;
        }
    }
    Ok(FitSummary {
        epochs,
        best_epoch: best.0,
        best_dev_loss: best.1,
        best_checkpoint: best_path,
        stopped_early,
    })
}

/// Repeated steps on one fixed batch; returns the loss before each step.
pub fn overfit(trainer: &mut Trainer, batch: &[TrainItem], steps: usize) -> Result<Vec<f64>> {
    (0..steps).map(|_| trainer.train_step(batch).map(|r| r.loss)).collect()
}

pub fn read_step_log(path: &Path) -> Result<Vec<StepRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Data(e.to_string())))
        .collect()
}
