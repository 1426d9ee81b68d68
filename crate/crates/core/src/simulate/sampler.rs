//! On-the-fly training batches and fixed evaluation splits.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Clip, Corpus};
use super::delay::{delay_channels, ArrayGeometry};
use super::mix::{mix_at_snr, MixtureMeta, MixtureSample, NoiseSpatial};
use crate::audio::{read_wav, write_wav, PcmFormat};
use crate::error::{Error, Result};
use crate::stft::StftConfig;

/// Samples of context kept on each side of a crop before delaying.
const EDGE_PAD: usize = 64;
const OFFSET_DRAWS: usize = 32;
const MIN_ACTIVITY: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub geometry: ArrayGeometry,
    pub snr_low: f64,
    pub snr_high: f64,
    /// 1-based reference channel for SNR calibration.
    pub reference_channel: usize,
    /// Frames per training utterance.
    pub train_frames: usize,
    /// Share of simulated noise power in the directional component.
    pub directional_noise: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            geometry: ArrayGeometry::linear(6, 0.05),
            snr_low: -5.0,
            snr_high: 10.0,
            reference_channel: 5,
            train_frames: 192,
            directional_noise: 0.5,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let m = self.geometry.channels();
        if self.reference_channel == 0 || self.reference_channel > m {
            return Err(Error::Config(format!(
                "reference channel {} outside 1..={m}",
                self.reference_channel
            )));
        }
        if !(self.snr_low.is_finite() && self.snr_high.is_finite() && self.snr_low <= self.snr_high) {
            return Err(Error::Config(format!("bad SNR range [{}, {}]", self.snr_low, self.snr_high)));
        }
        if self.train_frames < 2 {
            return Err(Error::Config("train_frames must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.directional_noise) {
            return Err(Error::Config("directional_noise must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Derives an independent per-item seed from a split seed.
pub fn item_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.random()
}

#[derive(Debug, Clone)]
pub struct MixtureSampler {
    speech: Arc<Corpus>,
    noise: Arc<Corpus>,
    pub sim: SimulationConfig,
    pub stft: StftConfig,
}

impl MixtureSampler {
    pub fn new(speech: Arc<Corpus>, noise: Arc<Corpus>, sim: SimulationConfig, stft: StftConfig) -> Result<Self> {
        sim.validate()?;
        stft.validate()?;
        if speech.is_empty() || noise.is_empty() {
            return Err(Error::Data("speech and noise corpora must be non-empty".into()));
        }
        Ok(Self { speech, noise, sim, stft })
    }

    pub fn speech(&self) -> &Corpus {
        &self.speech
    }

    /// Samples per training crop: exactly `train_frames` full analysis windows.
    pub fn crop_length(&self) -> usize {
        self.stft.samples_for_frames(self.sim.train_frames)
    }

    pub fn channels(&self) -> usize {
        self.sim.geometry.channels()
    }

    /// One fixed-length training mixture, fully determined by `seed`.
    pub fn sample_crop(&self, seed: u64) -> Result<MixtureSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = self.crop_length();
        let clip = pick_clip(&self.speech, len, &mut rng, "speech")?;
        let off = active_offset(clip, len, &mut rng);
        let snr = self.draw_snr(&mut rng);
        self.mix_segment(clip, off, len, snr, seed, &mut rng)
    }

    /// `batch` training mixtures with seeds drawn from `rng`.
    pub fn sample_training_batch<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<Vec<MixtureSample>> {
        (0..batch).map(|_| self.sample_crop(rng.random())).collect()
    }

    /// Whole utterance `speech_index` mixed at `snr` (or a random draw).
    pub fn simulate_utterance(&self, speech_index: usize, seed: u64, snr: Option<f64>) -> Result<MixtureSample> {
        let clip = self
            .speech
            .clips
            .get(speech_index)
            .ok_or_else(|| Error::Data(format!("speech index {speech_index} out of range")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drawn = self.draw_snr(&mut rng);
        self.mix_segment(clip, 0, clip.len(), snr.unwrap_or(drawn), seed, &mut rng)
    }

    /// `count` whole-utterance mixtures cycling through the speech corpus.
    pub fn simulate_split(&self, count: usize, seed: u64, prefix: &str, snr: Option<f64>) -> Result<Vec<MixtureSample>> {
        (0..count)
            .map(|i| {
                let mut s = self.simulate_utterance(i % self.speech.len(), item_seed(seed, i as u64), snr)?;
                s.meta.id = format!("{prefix}{i:04}");
                Ok(s)
            })
            .collect()
    }

    fn draw_snr<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.sim.snr_high > self.sim.snr_low {
            rng.random_range(self.sim.snr_low..=self.sim.snr_high)
        } else {
            self.sim.snr_low
        }
    }

    fn mix_segment(
        &self,
        clip: &Clip,
        off: usize,
        len: usize,
        snr: f64,
        seed: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<MixtureSample> {
        let fs = self.stft.sample_rate;
        let geometry = &self.sim.geometry;
        let azimuth = rng.random_range(0.0..PI);
        let delays = geometry.far_field_delays(azimuth, fs);
        let clean = delay_with_context(clip.data.column(0), off, len, &delays)?;

        let noise_clip = pick_clip(&self.noise, len, rng, "noise")?;
        let m = geometry.channels();
        let (noise, spatial) = if noise_clip.data.ncols() == m {
            let o = rng.random_range(0..=noise_clip.len() - len);
            (noise_clip.data.slice(s![o..o + len, ..]).to_owned(), NoiseSpatial::Recorded)
        } else {
            (self.simulated_noise(noise_clip, len, rng)?, NoiseSpatial::Simulated)
        };

        let mut sample = mix_at_snr(clean.view(), noise.view(), snr, self.sim.reference_channel)?;
        sample.meta = MixtureMeta {
            id: String::new(),
            snr_db: snr,
            delays,
            seed,
            reference_channel: self.sim.reference_channel,
            azimuth_deg: Some(azimuth.to_degrees()),
            noise_gain: sample.meta.noise_gain,
            noise_spatial: spatial,
            speech_source: Some(clip.name.clone()),
            noise_source: Some(noise_clip.name.clone()),
        };
        Ok(sample)
    }

    /// Directional component from a random azimuth plus independent
    /// per-channel segments of the same clip.
    fn simulated_noise(&self, clip: &Clip, len: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let geometry = &self.sim.geometry;
        let m = geometry.channels();
        let src = clip.data.column(0);
        let off = rng.random_range(0..=clip.len() - len);
        let delays = geometry.far_field_delays(rng.random_range(0.0..PI), self.stft.sample_rate);
        let point = delay_with_context(src, off, len, &delays)?;
        let mut diffuse = Array2::zeros((len, m));
        for mut col in diffuse.columns_mut() {
            let o = rng.random_range(0..=clip.len() - len);
            col.assign(&src.slice(s![o..o + len]));
        }
        let ratio = self.sim.directional_noise;
        let p_point = point.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
        let p_diff = diffuse.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
        let a = (ratio / p_point).sqrt();
        let b = ((1.0 - ratio) / p_diff).sqrt();
        Ok(point * a + diffuse * b)
    }
}

fn pick_clip<'a, R: Rng>(corpus: &'a Corpus, len: usize, rng: &mut R, what: &str) -> Result<&'a Clip> {
    let eligible: Vec<&Clip> = corpus.clips.iter().filter(|c| c.len() >= len).collect();
    if eligible.is_empty() {
        return Err(Error::Data(format!(
            "no {what} clip has the {len} samples required (longest is {})",
            corpus.longest()
        )));
    }
    Ok(eligible[rng.random_range(0..eligible.len())])
}

/// Crop offset whose segment carries at least [`MIN_ACTIVITY`] of the
/// clip's mean power, falling back to the most energetic of the draws.
fn active_offset<R: Rng>(clip: &Clip, len: usize, rng: &mut R) -> usize {
    let x = clip.data.column(0);
    let clip_power = x.iter().map(|v| v * v).sum::<f64>() / clip.len().max(1) as f64;
    let mut best = (0, -1.0);
    for _ in 0..OFFSET_DRAWS {
        let off = rng.random_range(0..=clip.len() - len);
        let p = x.slice(s![off..off + len]).iter().map(|v| v * v).sum::<f64>() / len as f64;
        if p >= MIN_ACTIVITY * clip_power {
            return off;
        }
        if p > best.1 {
            best = (off, p);
        }
    }
    best.0
}

/// Delays `src[off..off + len]` using up to [`EDGE_PAD`] samples of real
/// context on each side so the crop edges see no artificial zeros.
fn delay_with_context(src: ArrayView1<'_, f64>, off: usize, len: usize, delays: &[f64]) -> Result<Array2<f64>> {
    let pre = off.min(EDGE_PAD);
    let post = (src.len() - off - len).min(EDGE_PAD);
    let seg: Array1<f64> = src.slice(s![off - pre..off + len + post]).to_owned();
    let delayed = delay_channels(seg.view(), delays)?;
    Ok(delayed.slice(s![pre..pre + len, ..]).to_owned())
}

/// One row of a split manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub id: String,
    pub noisy: PathBuf,
    pub clean: PathBuf,
    pub metadata: PathBuf,
    pub snr_db: f64,
}

/// Writes `<id>.noisy.wav`, `<id>.clean.wav` (32-bit float, all channels)
/// and `<id>.json` per sample plus `manifest.csv`. Returns the manifest path.
pub fn write_split(dir: &Path, samples: &[MixtureSample], sample_rate: u32) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    for s in samples {
        let id = &s.meta.id;
        if id.is_empty() {
            return Err(Error::InvalidArgument("samples written to a split need ids".into()));
        }
        let entry = SplitEntry {
            id: id.clone(),
            noisy: PathBuf::from(format!("{id}.noisy.wav")),
            clean: PathBuf::from(format!("{id}.clean.wav")),
            metadata: PathBuf::from(format!("{id}.json")),
            snr_db: s.meta.snr_db,
        };
        write_wav(&dir.join(&entry.noisy), &s.noisy, sample_rate, PcmFormat::Float32)?;
        write_wav(&dir.join(&entry.clean), &s.clean, sample_rate, PcmFormat::Float32)?;
        let meta = serde_json::to_string_pretty(&s.meta).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(dir.join(&entry.metadata), meta + "\n")?;
        w.serialize(&entry).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(manifest)
}

/// Reads a split written by [`write_split`]. The noise is recovered as
/// `noisy - clean`.
pub fn load_split(manifest: &Path) -> Result<Vec<MixtureSample>> {
    let base = manifest.parent().unwrap_or(Path::new(""));
    let mut r = csv::Reader::from_path(manifest)
        .map_err(|e| Error::Data(format!("cannot read split manifest {}: {e}", manifest.display())))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let entry: SplitEntry = row.map_err(|e| Error::Data(e.to_string()))?;
        let (noisy, fs_n) = read_wav(&base.join(&entry.noisy))?;
        let (clean, fs_c) = read_wav(&base.join(&entry.clean))?;
        if fs_n != fs_c || noisy.dim() != clean.dim() {
            return Err(Error::Data(format!("{}: noisy and clean files do not pair up", entry.id)));
        }
        let text = fs::read_to_string(base.join(&entry.metadata))?;
        let meta: MixtureMeta = serde_json::from_str(&text).map_err(|e| Error::Data(e.to_string()))?;
        let noise = &noisy - &clean;
        out.push(MixtureSample { noisy, clean, noise, meta });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("split manifest {} lists no utterances", manifest.display())));
    }
    Ok(out)
}
