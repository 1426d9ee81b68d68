//! Command-line front end: `corpus`, `simulate`, `train`, `enhance` and
//! `evaluate`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use crate::audio::{read_wav, write_wav, PcmFormat};
use crate::config::RunConfig;
use crate::enhance::{Enhancer, Execution};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_corpus, ModelEnhancer, NoisyPassthrough, OracleCirm, OracleMvdr, PesqHook, SpeechEnhancer,
};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::simulate::{load_split, write_split, write_synthetic_corpus, Corpus, MixtureSampler};
use crate::train::{fit, overfit, FitOptions, Prefetch, SimulatedBatches, Trainer};
use crate::Mode;

#[derive(Debug, Parser)]
#[command(name = "mcnet", version, about = "Multichannel speech enhancement")]
pub struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic speech and noise corpus with manifests.
    Corpus(CorpusArgs),
    /// Simulate a fixed multichannel evaluation split.
    Simulate(SimulateArgs),
    /// Train a model, or overfit a single batch.
    Train(TrainArgs),
    /// Enhance a multichannel WAV file.
    Enhance(EnhanceArgs),
    /// Score a checkpoint or a baseline on a simulated split.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration file (TOML key = value pairs).
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set lr0=0.002`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub speech: usize,
    #[arg(long, default_value_t = 5)]
    pub noise: usize,
    #[arg(long, default_value_t = 2.0)]
    pub min_seconds: f64,
    #[arg(long, default_value_t = 4.0)]
    pub max_seconds: f64,
    #[arg(long, default_value_t = 30.0)]
    pub noise_seconds: f64,
    #[arg(long, default_value_t = 16000)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of utterances; defaults to `test_count`.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value = "utt")]
    pub prefix: String,
    /// Mix every utterance at this SNR instead of drawing one.
    #[arg(long, allow_hyphen_values = true)]
    pub snr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Train repeatedly on one fixed batch and report the loss ratio.
    #[arg(long)]
    pub overfit_one_batch: bool,
    /// Optimizer steps for `--overfit-one-batch`.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Disable module k (1-4).
    #[arg(long, value_name = "K")]
    pub ablate: Option<usize>,
    /// Wall-clock budget in seconds.
    #[arg(long, value_name = "SECS")]
    pub time_budget: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PcmArg {
    Int16,
    Float32,
}

impl From<PcmArg> for PcmFormat {
    fn from(p: PcmArg) -> Self {
        match p {
            PcmArg::Int16 => PcmFormat::Int16,
            PcmArg::Float32 => PcmFormat::Float32,
        }
    }
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// `online` runs frame by frame, `offline` over the whole utterance;
    /// defaults to the checkpoint's mode.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long, value_enum, default_value_t = PcmArg::Float32)]
    pub pcm: PcmArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Noisy,
    OracleMvdr,
    OracleCirm,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// `manifest.csv` written by `simulate`.
    #[arg(long)]
    pub testset: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// External PESQ scorer (see the README for its calling convention).
    #[arg(long)]
    pub pesq: Option<PathBuf>,
    /// Checkpoint execution: `online` streams frame by frame.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long, default_value_t = 5)]
    pub reference_channel: usize,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus(a) => cmd_corpus(&a),
        Command::Simulate(a) => cmd_simulate(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Enhance(a) => cmd_enhance(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    }
}

pub fn cmd_corpus(a: &CorpusArgs) -> Result<()> {
    let (speech, noise) = write_synthetic_corpus(
        &a.out,
        a.speech,
        a.noise,
        (a.min_seconds, a.max_seconds),
        a.noise_seconds,
        a.sample_rate,
        a.seed,
    )?;
    println!("{}", speech.display());
    println!("{}", noise.display());
    Ok(())
}

fn build_sampler(cfg: &RunConfig) -> Result<MixtureSampler> {
    let manifest = |p: &Option<PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("{what}_manifest must be set (use --set {what}_manifest=PATH)")))
    };
    let speech = Corpus::from_manifest(&manifest(&cfg.speech_manifest, "speech")?, cfg.sample_rate)?;
    let noise = Corpus::from_manifest(&manifest(&cfg.noise_manifest, "noise")?, cfg.sample_rate)?;
    MixtureSampler::new(Arc::new(speech), Arc::new(noise), cfg.simulation(), cfg.stft())
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<PathBuf> {
    let cfg = a.config.load()?;
    let sampler = build_sampler(&cfg)?;
    let count = a.count.unwrap_or(cfg.test_count);
    if count == 0 {
        return Err(Error::InvalidArgument("count must be positive".into()));
    }
    let samples = sampler.simulate_split(count, cfg.seed, &a.prefix, a.snr)?;
    let manifest = write_split(&a.out, &samples, cfg.sample_rate)?;
    println!("{}", manifest.display());
    Ok(manifest)
}

pub fn cmd_train(a: &TrainArgs) -> Result<PathBuf> {
    let mut cfg = a.config.load()?;
    if let Some(k) = a.ablate {
        cfg.enabled_modules = cfg.model().ablate(k)?.enabled_modules;
    }
    if let Some(secs) = a.time_budget {
        cfg.time_budget_secs = secs;
    }
    cfg.validate(true)?;
    let ckpt_dir = cfg.resolved_ckpt_dir();
    fs::create_dir_all(&ckpt_dir)?;
    cfg.save(&ckpt_dir.join("config.toml"))?;
    let sampler = build_sampler(&cfg)?;
    let mut trainer = Trainer::new(cfg.model(), cfg.train(), cfg.stft(), cfg.smoothing_len, cfg.seed)?;
    log::info!(
        "model with modules {:?}: {} parameters",
        cfg.enabled_modules,
        trainer.params.num_params()
    );

    if a.overfit_one_batch {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
        let batch = sampler
            .sample_training_batch(cfg.batch, &mut rng)?
            .iter()
            .map(|s| trainer.prepare(s, true))
            .collect::<Result<Vec<_>>>()?;
        let mut losses = overfit(&mut trainer, &batch, a.steps)?;
        losses.push(trainer.evaluate(&batch)?);
        let mut log = String::new();
        for (i, l) in losses.iter().enumerate() {
            log.push_str(&format!("{{\"step\":{i},\"loss\":{l}}}\n"));
        }
        fs::write(ckpt_dir.join("overfit.jsonl"), log)?;
        let (first, last) = (losses[0], *losses.last().expect("non-empty"));
        let path = ckpt_dir.join("overfit");
        save_checkpoint(&path, &trainer.checkpoint_meta(Some(last)), &trainer.params)?;
        println!("initial_loss {first:.6e} final_loss {last:.6e} ratio {:.4}", last / first);
        println!("{}", path.display());
        return Ok(path);
    }

    let dev = match &cfg.dev_manifest {
        Some(p) => load_split(p)?,
        None => sampler.simulate_split(cfg.dev_count, cfg.seed.wrapping_add(1), "dev", None)?,
    };
    let dev_items = dev
        .iter()
        .map(|s| trainer.prepare(s, false))
        .collect::<Result<Vec<_>>>()?;
    let source = SimulatedBatches::new(sampler, cfg.model(), cfg.batch, cfg.smoothing_len, cfg.seed.wrapping_add(2))?;
    let mut source = Prefetch::spawn(source, 2);
    let opts = FitOptions {
        ckpt_dir,
        time_budget: (cfg.time_budget_secs > 0).then(|| Duration::from_secs(cfg.time_budget_secs)),
    };
    let summary = fit(&mut trainer, &mut source, &dev_items, &opts)?;
    log::info!(
        "best epoch {} dev loss {:.5} after {} epochs",
        summary.best_epoch,
        summary.best_dev_loss,
        summary.epochs.len()
    );
    println!("{}", summary.best_checkpoint.display());
    Ok(summary.best_checkpoint)
}

fn load_enhancer(path: &Path) -> Result<Enhancer> {
    let (meta, params) = load_checkpoint(path, None)?;
    Enhancer::new(meta, params)
}

fn execution(enhancer: &Enhancer, mode: Option<Mode>) -> Execution {
    match mode.unwrap_or(enhancer.meta.model.mode) {
        Mode::Online => Execution::Streaming,
        Mode::Offline => Execution::Batch,
    }
}

pub fn cmd_enhance(a: &EnhanceArgs) -> Result<()> {
    let enhancer = load_enhancer(&a.checkpoint)?;
    let (noisy, fs) = read_wav(&a.input)?;
    if fs != enhancer.meta.stft.sample_rate {
        return Err(Error::Data(format!(
            "{} is sampled at {fs} Hz, model expects {} Hz",
            a.input.display(),
            enhancer.meta.stft.sample_rate
        )));
    }
    let out = enhancer.enhance(noisy.view(), execution(&enhancer, a.mode))?;
    let out = Array2::from_shape_vec((out.len(), 1), out).expect("mono layout");
    write_wav(&a.output, &out, fs, a.pcm.into())?;
    println!("{}", a.output.display());
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let samples = load_split(&a.testset)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("{} lists no utterances", a.testset.display())));
    }
    let pesq = a.pesq.as_ref().map(|p| PesqHook { program: p.clone() });
    let (enhancer, r, fs): (Box<dyn SpeechEnhancer>, usize, u32) = match (&a.checkpoint, a.baseline) {
        (Some(path), _) => {
            let e = load_enhancer(path)?;
            let (r, fs) = (e.meta.model.reference_channel, e.meta.stft.sample_rate);
            let execution = execution(&e, a.mode);
            (Box::new(ModelEnhancer { enhancer: e, execution }), r, fs)
        }
        (None, Some(b)) => {
            let stft = crate::stft::StftConfig::default();
            let r = a.reference_channel;
            let e: Box<dyn SpeechEnhancer> = match b {
                Baseline::Noisy => Box::new(NoisyPassthrough { reference_channel: r }),
                Baseline::OracleMvdr => Box::new(OracleMvdr { stft, reference_channel: r }),
                Baseline::OracleCirm => Box::new(OracleCirm { stft, reference_channel: r }),
            };
            (e, r, stft.sample_rate)
        }
        (None, None) => return Err(Error::InvalidArgument("either --checkpoint or --baseline is required".into())),
    };
    let report = evaluate_corpus(enhancer.as_ref(), &samples, r, fs, pesq.as_ref())?;
    report.write_csv(&a.report)?;
    println!(
        "{}: {} utterances, STOI {:.4}, SDR {:.2} dB",
        enhancer.name(),
        report.len(),
        report.mean_stoi(),
        report.mean_sdr()
    );
    println!("{}", a.report.display());
    Ok(())
}
