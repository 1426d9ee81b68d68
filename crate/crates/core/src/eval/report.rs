//! Corpus evaluation, baselines, CSV reports and the external PESQ hook.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use serde::Serialize;

use super::metrics::{sdr, stoi};
use super::mvdr::oracle_mvdr;
use crate::audio::{write_wav, PcmFormat};
use crate::enhance::{resynthesize, Enhancer, Execution};
use crate::error::{Error, Result};
use crate::mask::compute_cirm;
use crate::simulate::MixtureSample;
use crate::stft::{istft, stft, ComplexSpectrogram, StftConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceMetrics {
    pub utterance_id: String,
    pub snr_db: f64,
    pub stoi: f64,
    pub sdr: f64,
    pub nb_pesq: Option<f64>,
    pub wb_pesq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<UtteranceMetrics>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Mean of an optional column, defined only when every row has a value.
fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Option<Vec<f64>> = v.collect();
    vals.filter(|v| !v.is_empty()).map(|v| mean(v.into_iter()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricReport {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn mean_stoi(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.stoi))
    }

    pub fn mean_sdr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.sdr))
    }

    pub fn mean_snr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.snr_db))
    }

    pub fn mean_nb_pesq(&self) -> Option<f64> {
        mean_opt(self.rows.iter().map(|r| r.nb_pesq))
    }

    pub fn mean_wb_pesq(&self) -> Option<f64> {
        mean_opt(self.rows.iter().map(|r| r.wb_pesq))
    }

    /// Per-utterance rows followed by a `mean` summary row. Absent PESQ
    /// values are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("utterance_id,snr_db,stoi,sdr,nb_pesq,wb_pesq\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{},{}",
                r.utterance_id,
                r.snr_db,
                r.stoi,
                r.sdr,
                fmt_opt(r.nb_pesq),
                fmt_opt(r.wb_pesq)
            );
        }
        let _ = writeln!(
            out,
            "mean,{:.6},{:.6},{:.6},{},{}",
            self.mean_snr(),
            self.mean_stoi(),
            self.mean_sdr(),
            fmt_opt(self.mean_nb_pesq()),
            fmt_opt(self.mean_wb_pesq())
        );
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Produces a single-channel estimate of the reference channel.
pub trait SpeechEnhancer {
    fn name(&self) -> String;
    fn enhance(&self, sample: &MixtureSample) -> Result<Vec<f64>>;
}

/// Unprocessed reference channel.
pub struct NoisyPassthrough {
    pub reference_channel: usize,
}

impl SpeechEnhancer for NoisyPassthrough {
    fn name(&self) -> String {
        "noisy".into()
    }

    fn enhance(&self, sample: &MixtureSample) -> Result<Vec<f64>> {
        channel(&sample.noisy, self.reference_channel)
    }
}

/// MVDR with ground-truth speech and noise covariances.
pub struct OracleMvdr {
    pub stft: StftConfig,
    pub reference_channel: usize,
}

impl SpeechEnhancer for OracleMvdr {
    fn name(&self) -> String {
        "oracle-mvdr".into()
    }

    fn enhance(&self, sample: &MixtureSample) -> Result<Vec<f64>> {
        let r = self.reference_channel;
        let noisy = stft(sample.noisy.view(), &self.stft, r)?;
        let clean = stft(sample.clean.view(), &self.stft, r)?;
        let noise = stft(sample.noise.view(), &self.stft, r)?;
        let out = oracle_mvdr(&noisy, &clean, &noise, r)?;
        let spec = ComplexSpectrogram::new(out.insert_axis(ndarray::Axis(2)), self.stft, 1)?;
        Ok(istft(&spec, sample.len())?.column(0).to_vec())
    }
}

/// Ideal (uncompressed) cIRM applied to the noisy reference.
pub struct OracleCirm {
    pub stft: StftConfig,
    pub reference_channel: usize,
}

impl SpeechEnhancer for OracleCirm {
    fn name(&self) -> String {
        "oracle-cirm".into()
    }

    fn enhance(&self, sample: &MixtureSample) -> Result<Vec<f64>> {
        let r = self.reference_channel;
        let noisy = stft(sample.noisy.view(), &self.stft, r)?;
        let clean = stft(sample.clean.view(), &self.stft, r)?;
        let mask = compute_cirm(clean.reference(), noisy.reference())?;
        resynthesize(&noisy, &mask, sample.len())
    }
}

/// Trained model run in batch or streaming fashion.
pub struct ModelEnhancer {
    pub enhancer: Enhancer,
    pub execution: Execution,
}

impl SpeechEnhancer for ModelEnhancer {
    fn name(&self) -> String {
        format!("mcnet-{}", self.enhancer.meta.model.mode)
    }

    fn enhance(&self, sample: &MixtureSample) -> Result<Vec<f64>> {
        self.enhancer.enhance(sample.noisy.view(), self.execution)
    }
}

fn channel(x: &Array2<f64>, r: usize) -> Result<Vec<f64>> {
    if r == 0 || r > x.ncols() {
        return Err(Error::InvalidArgument(format!("reference channel {r} outside 1..={}", x.ncols())));
    }
    Ok(x.column(r - 1).to_vec())
}

/// External PESQ scorer. The program is invoked as
/// `program <reference.wav> <degraded.wav> <sample_rate> <nb|wb>` and must
/// print the score as the last token on stdout.
#[derive(Debug, Clone)]
pub struct PesqHook {
    pub program: PathBuf,
}

static PESQ_COUNTER: AtomicUsize = AtomicUsize::new(0);

impl PesqHook {
    fn score(&self, reference: &Path, degraded: &Path, fs: u32, band: &str) -> Option<f64> {
        let out = Command::new(&self.program)
            .arg(reference)
            .arg(degraded)
            .arg(fs.to_string())
            .arg(band)
            .output();
        match out {
            Ok(o) if o.status.success() => {
                let text = String::from_utf8_lossy(&o.stdout);
                let v = text.split_whitespace().last().and_then(|t| t.parse::<f64>().ok());
                if v.is_none() {
                    log::warn!("PESQ hook printed no score: {text:?}");
                }
                v
            }
            Ok(o) => {
                log::warn!("PESQ hook exited with {}", o.status);
                None
            }
            Err(e) => {
                log::warn!("PESQ hook failed to start: {e}");
                None
            }
        }
    }

    /// Narrow-band and wide-band scores; a failed call yields `None`.
    pub fn evaluate(&self, reference: &[f64], est: &[f64], fs: u32) -> Result<(Option<f64>, Option<f64>)> {
        let n = PESQ_COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = std::env::temp_dir().join(format!("mcnet-pesq-{}-{n}", std::process::id()));
        std::fs::create_dir_all(&dir)?;
        let rp = dir.join("ref.wav");
        let dp = dir.join("deg.wav");
        write_wav(&rp, &Array2::from_shape_vec((reference.len(), 1), reference.to_vec()).expect("mono"), fs, PcmFormat::Int16)?;
        write_wav(&dp, &Array2::from_shape_vec((est.len(), 1), est.to_vec()).expect("mono"), fs, PcmFormat::Int16)?;
        let nb = self.score(&rp, &dp, fs, "nb");
        let wb = self.score(&rp, &dp, fs, "wb");
        let _ = std::fs::remove_dir_all(&dir);
        Ok((nb, wb))
    }
}

/// Scores `enhancer` on every sample against the clean reference channel, in
/// input order.
pub fn evaluate_corpus(
    enhancer: &dyn SpeechEnhancer,
    samples: &[MixtureSample],
    reference_channel: usize,
    sample_rate: u32,
    pesq: Option<&PesqHook>,
) -> Result<MetricReport> {
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let reference = channel(&s.clean, reference_channel)?;
        let est = enhancer.enhance(s)?;
        if est.len() != reference.len() {
            return Err(Error::Data(format!(
                "{}: estimate has {} samples, reference {}",
                s.meta.id,
                est.len(),
                reference.len()
            )));
        }
        let (nb_pesq, wb_pesq) = match pesq {
            Some(h) => h.evaluate(&reference, &est, sample_rate)?,
            None => (None, None),
        };
        let id = if s.meta.id.is_empty() { format!("utt{i:04}") } else { s.meta.id.clone() };
        rows.push(UtteranceMetrics {
            utterance_id: id,
            snr_db: s.meta.snr_db,
            stoi: stoi(&reference, &est, sample_rate)?,
            sdr: sdr(&reference, &est)?,
            nb_pesq,
            wb_pesq,
        });
        log::debug!("{} {}: {:?}", enhancer.name(), rows[i].utterance_id, rows[i]);
    }
    Ok(MetricReport { rows })
}
