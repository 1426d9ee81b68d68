//! Flat key-value run configuration (TOML syntax) with command-line
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::simulate::{ArrayGeometry, SimulationConfig};
use crate::stft::StftConfig;
use crate::train::TrainConfig;
use crate::Mode;

/// Environment variable that relocates relative checkpoint directories.
pub const CKPT_ROOT_ENV: &str = "MCNET_CKPT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,

    pub window_length: usize,
    pub hop: usize,
    pub sample_rate: u32,

    pub channels: usize,
    pub hidden_width: usize,
    pub lstm_hidden: [usize; 4],
    pub n1: usize,
    pub n2: usize,
    pub context: usize,
    pub enabled_modules: Vec<usize>,
    pub reference_channel: usize,
    /// Online normalization window length `L` in frames.
    pub smoothing_len: usize,

    pub lr0: f64,
    pub decay: f64,
    pub clip_norm: f64,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub steps_per_epoch: usize,
    /// Wall-clock training budget in seconds; 0 disables it.
    pub time_budget_secs: u64,

    pub train_frames: usize,
    pub snr_low: f64,
    pub snr_high: f64,
    /// Microphone coordinates in meters; empty selects a 5 cm linear array
    /// of `channels` microphones.
    pub mic_positions: Vec<[f64; 3]>,
    pub directional_noise: f64,

    pub speech_manifest: Option<PathBuf>,
    pub noise_manifest: Option<PathBuf>,
    /// Fixed dev split (`manifest.csv` from `simulate`); when absent a dev
    /// set is simulated in memory.
    pub dev_manifest: Option<PathBuf>,
    pub dev_count: usize,
    pub test_count: usize,
    pub ckpt_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let stft = StftConfig::default();
        let train = TrainConfig::default();
        let sim = SimulationConfig::default();
        Self {
            seed: 0,
            mode: model.mode,
            window_length: stft.window_length,
            hop: stft.hop,
            sample_rate: stft.sample_rate,
            channels: model.channels,
            hidden_width: model.hidden_width,
            lstm_hidden: model.lstm_hidden,
            n1: model.n1,
            n2: model.n2,
            context: model.context,
            enabled_modules: model.enabled_modules,
            reference_channel: model.reference_channel,
            smoothing_len: 192,
            lr0: train.lr0,
            decay: train.decay,
            clip_norm: train.clip_norm,
            batch: train.batch,
            beta1: train.beta1,
            beta2: train.beta2,
            adam_eps: train.adam_eps,
            max_epochs: train.max_epochs,
            patience: train.patience,
            steps_per_epoch: train.steps_per_epoch,
            time_budget_secs: 0,
            train_frames: sim.train_frames,
            snr_low: sim.snr_low,
            snr_high: sim.snr_high,
            mic_positions: Vec::new(),
            directional_noise: sim.directional_noise,
            speech_manifest: None,
            noise_manifest: None,
            dev_manifest: None,
            dev_count: 20,
            test_count: 20,
            ckpt_dir: PathBuf::from("ckpt"),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn stft(&self) -> StftConfig {
        StftConfig {
            window_length: self.window_length,
            hop: self.hop,
            sample_rate: self.sample_rate,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            channels: self.channels,
            hidden_width: self.hidden_width,
            lstm_hidden: self.lstm_hidden,
            n1: self.n1,
            n2: self.n2,
            context: self.context,
            mode: self.mode,
            enabled_modules: self.enabled_modules.clone(),
            reference_channel: self.reference_channel,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            decay: self.decay,
            clip_norm: self.clip_norm,
            batch: self.batch,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            max_epochs: self.max_epochs,
            patience: self.patience,
            steps_per_epoch: self.steps_per_epoch,
        }
    }

    pub fn simulation(&self) -> SimulationConfig {
        let geometry = if self.mic_positions.is_empty() {
            ArrayGeometry::linear(self.channels, 0.05)
        } else {
            ArrayGeometry {
                mics: self.mic_positions.clone(),
            }
        };
        SimulationConfig {
            geometry,
            snr_low: self.snr_low,
            snr_high: self.snr_high,
            reference_channel: self.reference_channel,
            train_frames: self.train_frames,
            directional_noise: self.directional_noise,
        }
    }

    /// Checkpoint directory, placed under `$MCNET_CKPT_ROOT` when that is set
    /// and the configured path is relative.
    pub fn resolved_ckpt_dir(&self) -> PathBuf {
        match std::env::var_os(CKPT_ROOT_ENV) {
            Some(root) if self.ckpt_dir.is_relative() => PathBuf::from(root).join(&self.ckpt_dir),
            _ => self.ckpt_dir.clone(),
        }
    }

    /// Structural validation of every section. Paths are checked only when
    /// `check_paths` is set.
    pub fn validate(&self, check_paths: bool) -> Result<()> {
        self.stft().validate()?;
        self.model().validate()?;
        self.train().validate()?;
        self.simulation().validate()?;
        if self.simulation().geometry.channels() != self.channels {
            return Err(Error::Config(format!(
                "mic_positions lists {} microphones but channels = {}",
                self.mic_positions.len(),
                self.channels
            )));
        }
        if self.mode == Mode::Online && self.smoothing_len < 2 {
            return Err(Error::Config(format!(
                "online normalization needs smoothing_len >= 2, got {}",
                self.smoothing_len
            )));
        }
        if check_paths {
            for p in [&self.speech_manifest, &self.noise_manifest, &self.dev_manifest]
                .into_iter()
                .flatten()
            {
                if !p.exists() {
                    return Err(Error::Config(format!("path {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Parses TOML text and applies `key=value` overrides (values use TOML
    /// syntax; bare words are taken as strings).
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            table.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e| Error::Config(format!("config error: {e}")))?;
        Ok(cfg)
    }

    /// Loads a config file (or defaults when `path` is `None`), applies
    /// overrides, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut cfg = Self::from_toml_with_overrides(&text, overrides)?;
        if let Some(base) = path.and_then(Path::parent) {
            for p in [&mut cfg.speech_manifest, &mut cfg.noise_manifest, &mut cfg.dev_manifest]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate(true)?;
        Ok(cfg)
    }

    pub fn dump(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.dump()?)?;
        Ok(())
    }
}
