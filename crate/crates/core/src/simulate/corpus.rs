//! Speech and noise corpora: WAV manifests and a synthetic generator.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{read_wav, write_wav, PcmFormat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub name: String,
    /// `[N, channels]` samples.
    pub data: Array2<f64>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub clips: Vec<Clip>,
}

/// Reads a manifest: one WAV path per line, blank lines and `#` comments
/// ignored, relative paths resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}

pub fn write_manifest(path: &Path, entries: &[PathBuf]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&e.to_string_lossy());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

impl Corpus {
    pub fn from_clips(clips: Vec<Clip>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Data("corpus is empty".into()));
        }
        Ok(Self { clips })
    }

    /// Loads every WAV listed in `manifest`, requiring `sample_rate`.
    pub fn from_manifest(manifest: &Path, sample_rate: u32) -> Result<Self> {
        let mut clips = Vec::new();
        for path in read_manifest(manifest)? {
            let (data, fs) = read_wav(&path)?;
            if fs != sample_rate {
                return Err(Error::Data(format!(
                    "{} has sample rate {fs}, expected {sample_rate}",
                    path.display()
                )));
            }
            if data.nrows() == 0 {
                return Err(Error::Data(format!("{} is empty", path.display())));
            }
            clips.push(Clip {
                name: path.to_string_lossy().into_owned(),
                data,
            });
        }
        Self::from_clips(clips)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn longest(&self) -> usize {
        self.clips.iter().map(Clip::len).max().unwrap_or(0)
    }
}

struct Formant {
    freq: f64,
    bandwidth: f64,
    gain: f64,
}

/// Speech-like test signal: voiced syllables with gliding pitch and formant
/// shaped harmonics, unvoiced bursts, and pauses. Peak-normalized to 0.5.
pub fn synth_speech<R: Rng>(rng: &mut R, n_samples: usize, sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let nyquist_guard = 0.45 * fs;
    let mut out = vec![0.0; n_samples];
    let mut pos = (rng.random_range(0.05..0.2) * fs) as usize;
    while pos < n_samples {
        let dur = (rng.random_range(0.12..0.35) * fs) as usize;
        let end = (pos + dur).min(n_samples);
        if rng.random::<f64>() < 0.25 {
            // Fricative: differenced white noise under a smooth envelope.
            let mut prev = 0.0;
            let amp = rng.random_range(0.05..0.2);
            let len = (end - pos).min((0.12 * fs) as usize);
            for i in 0..len {
                let w: f64 = rng.random::<f64>() - 0.5;
                let env = (PI * i as f64 / len as f64).sin().powi(2);
                out[pos + i] += amp * env * (w - prev);
                prev = w;
            }
        } else {
            let f0_start: f64 = rng.random_range(90.0..240.0);
            let f0_end = f0_start * rng.random_range(0.8..1.25);
            let formants = [
                Formant { freq: rng.random_range(300.0..900.0), bandwidth: 90.0, gain: 1.0 },
                Formant { freq: rng.random_range(900.0..2500.0), bandwidth: 130.0, gain: 0.5 },
                Formant { freq: rng.random_range(2300.0..3400.0), bandwidth: 180.0, gain: 0.25 },
            ];
            let amp = rng.random_range(0.3..1.0);
            let len = end - pos;
            let max_h = (nyquist_guard / f0_start.min(f0_end)) as usize;
            let mut phases = vec![0.0f64; max_h];
            for i in 0..len {
                let frac = i as f64 / len as f64;
                let f0 = f0_start + (f0_end - f0_start) * frac;
                let env = (PI * frac).sin().powf(0.7);
                let mut acc = 0.0;
                for (k, ph) in phases.iter_mut().enumerate() {
                    let fk = (k + 1) as f64 * f0;
                    *ph += 2.0 * PI * fk / fs;
                    if fk >= nyquist_guard {
                        continue;
                    }
                    let weight: f64 = formants
                        .iter()
                        .map(|f| f.gain / (1.0 + ((fk - f.freq) / f.bandwidth).powi(2)))
                        .sum::<f64>()
                        + 0.02 / (k + 1) as f64;
                    acc += weight * ph.sin();
                }
                out[pos + i] += amp * env * acc;
            }
        }
        pos = end + (rng.random_range(0.03..0.3) * fs) as usize;
    }
    normalize_peak(&mut out, 0.5);
    out
}

/// Stationary-to-slowly-modulated colored noise with an optional hum.
pub fn synth_noise<R: Rng>(rng: &mut R, n_samples: usize, sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let pole = rng.random_range(0.3..0.97);
    let white_mix = rng.random_range(0.05..0.5);
    let mod_freq = rng.random_range(0.1..3.0);
    let mod_depth = rng.random_range(0.0..0.6);
    let hum = if rng.random::<f64>() < 0.4 {
        Some((rng.random_range(50.0..400.0), rng.random_range(0.05..0.3)))
    } else {
        None
    };
    let mut state = 0.0;
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = i as f64 / fs;
        let w: f64 = rng.random::<f64>() * 2.0 - 1.0;
        state = pole * state + (1.0 - pole) * w;
        let mut v = state / (1.0 - pole).sqrt() + white_mix * w;
        v *= 1.0 + mod_depth * (2.0 * PI * mod_freq * t).sin();
        if let Some((f, a)) = hum {
            v += a * (2.0 * PI * f * t).sin();
        }
        out.push(v);
    }
    normalize_peak(&mut out, 0.5);
    out
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / max);
    }
}

/// Writes a synthetic speech corpus and noise corpus as mono 16-bit WAVs plus
/// `speech.txt` / `noise.txt` manifests under `dir`. Returns both manifest
/// paths.
pub fn write_synthetic_corpus(
    dir: &Path,
    n_speech: usize,
    n_noise: usize,
    speech_seconds: (f64, f64),
    noise_seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<(PathBuf, PathBuf)> {
    if n_speech == 0 || n_noise == 0 {
        return Err(Error::InvalidArgument("corpus sizes must be positive".into()));
    }
    if !(speech_seconds.0 > 0.0 && speech_seconds.1 >= speech_seconds.0 && noise_seconds > 0.0) {
        return Err(Error::InvalidArgument("clip durations must be positive".into()));
    }
    fs::create_dir_all(dir.join("speech"))?;
    fs::create_dir_all(dir.join("noise"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs_f = sample_rate as f64;
    let mut speech = Vec::with_capacity(n_speech);
    for i in 0..n_speech {
        let secs = if speech_seconds.1 > speech_seconds.0 {
            rng.random_range(speech_seconds.0..speech_seconds.1)
        } else {
            speech_seconds.0
        };
        let x = synth_speech(&mut rng, (secs * fs_f) as usize, sample_rate);
        let rel = PathBuf::from(format!("speech/s{i:04}.wav"));
        write_wav(&dir.join(&rel), &Array2::from_shape_vec((x.len(), 1), x).expect("mono"), sample_rate, PcmFormat::Int16)?;
        speech.push(rel);
    }
    let mut noise = Vec::with_capacity(n_noise);
    for i in 0..n_noise {
        let x = synth_noise(&mut rng, (noise_seconds * fs_f) as usize, sample_rate);
        let rel = PathBuf::from(format!("noise/n{i:04}.wav"));
        write_wav(&dir.join(&rel), &Array2::from_shape_vec((x.len(), 1), x).expect("mono"), sample_rate, PcmFormat::Int16)?;
        noise.push(rel);
    }
    let sm = dir.join("speech.txt");
    let nm = dir.join("noise.txt");
    write_manifest(&sm, &speech)?;
    write_manifest(&nm, &noise)?;
    Ok((sm, nm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_signals_are_bounded_and_reproducible() {
        let a = synth_speech(&mut ChaCha8Rng::seed_from_u64(1), 16000, 16000);
        let b = synth_speech(&mut ChaCha8Rng::seed_from_u64(1), 16000, 16000);
        assert_eq!(a, b);
        let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-12);
        let n = synth_noise(&mut ChaCha8Rng::seed_from_u64(2), 8000, 16000);
        assert!(n.iter().all(|v| v.is_finite() && v.abs() <= 0.5 + 1e-12));
    }

    #[test]
    fn speech_has_pauses() {
        let x = synth_speech(&mut ChaCha8Rng::seed_from_u64(3), 48000, 16000);
        let quiet = x.chunks(256).filter(|c| c.iter().map(|v| v * v).sum::<f64>() < 1e-8).count();
        assert!(quiet > 0);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (sm, nm) = write_synthetic_corpus(dir.path(), 3, 2, (0.5, 1.0), 1.0, 16000, 7).unwrap();
        let speech = Corpus::from_manifest(&sm, 16000).unwrap();
        let noise = Corpus::from_manifest(&nm, 16000).unwrap();
        assert_eq!(speech.len(), 3);
        assert_eq!(noise.len(), 2);
        assert!(speech.clips.iter().all(|c| c.len() >= 8000 && c.data.ncols() == 1));
        assert!(Corpus::from_manifest(&sm, 8000).is_err());
        assert!(Corpus::from_manifest(&dir.path().join("missing.txt"), 16000).is_err());
    }
}
