//! STFT analysis and overlap-add synthesis.
//!
//! Frames are centered: the signal is reflect-padded by half a window on both
//! sides, so frame `t` is centered on sample `t * hop` and a signal of `N`
//! samples yields `1 + N / hop` frames.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::Complex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_length: 512,
            hop: 256,
            sample_rate: 16000,
        }
    }
}

impl StftConfig {
    pub fn n_freq(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// Periodic Hann window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_length as f64;
        (0..self.window_length)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
            .collect()
    }

    /// Number of centered frames produced for a signal of `n_samples`.
    pub fn frames_for(&self, n_samples: usize) -> usize {
        1 + n_samples / self.hop
    }

    /// Samples spanned by `frames` consecutive full (unpadded) analysis windows.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        frames.saturating_sub(1) * self.hop + self.window_length
    }

    /// Checks the structural invariants and that the window overlap-adds to a
    /// constant at this hop.
    pub fn validate(&self) -> Result<()> {
        if self.window_length < 2 || !self.window_length.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "window_length must be even and >= 2, got {}",
                self.window_length
            )));
        }
        if self.hop == 0 || self.hop > self.window_length {
            return Err(Error::Config(format!(
                "hop must be in 1..={}, got {}",
                self.window_length, self.hop
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        let w = self.window();
        let mut acc = vec![0.0; self.hop];
        for (i, v) in w.iter().enumerate() {
            acc[i % self.hop] += v;
        }
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        if acc.iter().any(|a| (a - mean).abs() > 1e-9 * mean.max(1.0)) {
            return Err(Error::Config(format!(
                "Hann window of length {} is not COLA at hop {}",
                self.window_length, self.hop
            )));
        }
        Ok(())
    }
}

/// Complex STFT grid laid out as `[frames, frequencies, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub data: Array3<Complex>,
    pub config: StftConfig,
    /// 1-based reference microphone index.
    pub reference_channel: usize,
}

impl ComplexSpectrogram {
    pub fn new(data: Array3<Complex>, config: StftConfig, reference_channel: usize) -> Result<Self> {
        let spec = Self {
            data,
            config,
            reference_channel,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (_, f, m) = self.data.dim();
        if f != self.config.n_freq() {
            return Err(shape_err(format!(
                "spectrogram has {f} bins, config expects {}",
                self.config.n_freq()
            )));
        }
        if self.reference_channel == 0 || self.reference_channel > m {
            return Err(Error::InvalidArgument(format!(
                "reference channel {} outside 1..={m}",
                self.reference_channel
            )));
        }
        if self.data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_freq(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_channels(&self) -> usize {
        self.data.dim().2
    }

    /// Reference channel as a `[T, F]` view.
    pub fn reference(&self) -> ArrayView2<'_, Complex> {
        self.data.index_axis(Axis(2), self.reference_channel - 1)
    }

    /// Magnitudes of the reference channel.
    pub fn reference_magnitude(&self) -> Array2<f64> {
        self.reference().mapv(|c| c.norm())
    }

    /// Keeps frames `range`, used to drop the half-padded edge frames.
    pub fn slice_frames(&self, start: usize, end: usize) -> Self {
        Self {
            data: self.data.slice(s![start..end, .., ..]).to_owned(),
            config: self.config,
            reference_channel: self.reference_channel,
        }
    }
}

struct Planned {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plan(n: usize) -> Planned {
    let mut planner = FftPlanner::new();
    Planned {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(x[i]);
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        out.push(x[n - 2 - i]);
    }
    out
}

/// Multichannel STFT of `wave` (`[N, M]`, samples by channels).
pub fn stft(wave: ArrayView2<'_, f64>, config: &StftConfig, reference_channel: usize) -> Result<ComplexSpectrogram> {
    config.validate()?;
    let (n, m) = wave.dim();
    if n == 0 || m == 0 {
        return Err(Error::EmptySignal);
    }
    if n < config.window_length {
        return Err(Error::InvalidArgument(format!(
            "signal of {n} samples is shorter than one window ({})",
            config.window_length
        )));
    }
    if wave.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("waveform"));
    }
    let win = config.window();
    let wl = config.window_length;
    let pad = wl / 2;
    let n_frames = config.frames_for(n);
    let n_freq = config.n_freq();
    let fft = plan(wl);
    let mut data = Array3::<Complex>::zeros((n_frames, n_freq, m));
    let mut buf = vec![Complex::new(0.0, 0.0); wl];
    for ch in 0..m {
        let x: Vec<f64> = wave.column(ch).to_vec();
        let padded = reflect_pad(&x, pad);
        for t in 0..n_frames {
            let start = t * config.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(padded[start + i] * win[i], 0.0);
            }
            fft.forward.process(&mut buf);
            for f in 0..n_freq {
                data[[t, f, ch]] = buf[f];
            }
        }
    }
    ComplexSpectrogram::new(data, *config, reference_channel)
}

/// Overlap-add synthesis, returning `[out_length, M]`.
pub fn istft(spec: &ComplexSpectrogram, out_length: usize) -> Result<Array2<f64>> {
    let config = &spec.config;
    config.validate()?;
    let (n_frames, n_freq, m) = spec.data.dim();
    if n_freq != config.n_freq() {
        return Err(shape_err("frequency count does not match config"));
    }
    let wl = config.window_length;
    let pad = wl / 2;
    let win = config.window();
    let total = (n_frames.saturating_sub(1)) * config.hop + wl;
    let mut wsum = vec![0.0; total];
    for t in 0..n_frames {
        for (i, w) in win.iter().enumerate() {
            wsum[t * config.hop + i] += w * w;
        }
    }
    let fft = plan(wl);
    let mut out = Array2::<f64>::zeros((out_length, m));
    let mut buf = vec![Complex::new(0.0, 0.0); wl];
    let mut acc = vec![0.0; total];
    for ch in 0..m {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for t in 0..n_frames {
            for (f, b) in buf.iter_mut().take(n_freq).enumerate() {
                *b = spec.data[[t, f, ch]];
            }
            // Hermitian completion; DC and Nyquist bins are taken as real.
            buf[0].im = 0.0;
            buf[wl / 2].im = 0.0;
            for f in 1..wl / 2 {
                buf[wl - f] = buf[f].conj();
            }
            fft.inverse.process(&mut buf);
            let start = t * config.hop;
            for i in 0..wl {
                acc[start + i] += buf[i].re / wl as f64 * win[i];
            }
        }
        for i in 0..out_length {
            let j = i + pad;
            if j < total && wsum[j] > 1e-11 {
                out[[i, ch]] = acc[j] / wsum[j];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
        let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn default_config_is_valid() {
        let c = StftConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n_freq(), 257);
        assert_eq!(c.samples_for_frames(192), 49408);
    }

    #[test]
    fn rejects_non_cola_hop() {
        let c = StftConfig {
            window_length: 512,
            hop: 200,
            sample_rate: 16000,
        };
        assert!(c.validate().is_err());
        let spec = ComplexSpectrogram {
            data: Array3::zeros((3, 257, 1)),
            config: c,
            reference_channel: 1,
        };
        assert!(istft(&spec, 600).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let c = StftConfig::default();
        let x = Array2::<f64>::zeros((2000, 2));
        let spec = stft(x.view(), &c, 1).unwrap();
        assert!(spec.data.iter().all(|v| v.norm() == 0.0));
        let y = istft(&spec, 2000).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn frame_count_and_errors() {
        let c = StftConfig::default();
        let x = Array2::<f64>::zeros((1000, 1));
        assert_eq!(stft(x.view(), &c, 1).unwrap().n_frames(), 1 + 1000 / 256);
        assert!(matches!(
            stft(Array2::<f64>::zeros((0, 1)).view(), &c, 1),
            Err(Error::EmptySignal)
        ));
        let mut bad = Array2::<f64>::zeros((1000, 1));
        bad[[10, 0]] = f64::NAN;
        assert!(matches!(stft(bad.view(), &c, 1), Err(Error::NonFinite(_))));
        assert!(stft(Array2::<f64>::zeros((100, 1)).view(), &c, 1).is_err());
    }

    #[test]
    fn bin_cosine_peaks_at_bin() {
        let c = StftConfig::default();
        let k = 37;
        let n = 8000;
        let x = Array1::from_iter(
            (0..n).map(|i| (2.0 * std::f64::consts::PI * k as f64 * i as f64 / 512.0).cos()),
        );
        let x = x.insert_axis(Axis(1));
        let spec = stft(x.view(), &c, 1).unwrap();
        for t in 2..spec.n_frames() - 2 {
            let mags: Vec<f64> = (0..257).map(|f| spec.data[[t, f, 0]].norm()).collect();
            let argmax = mags
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, k);
            // windowed cosine at an exact bin: |X_k| = sum(w)/2 = N/4
            assert!((mags[k] - 128.0).abs() < 1e-8);
        }
    }

    #[test]
    fn round_trip_white_noise_and_long_signal() {
        let c = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &n in &[513usize, 4097, 48000] {
            let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() - 0.5);
            let spec = stft(x.view(), &c, 1).unwrap();
            let y = istft(&spec, n).unwrap();
            assert!(rel_err(y.view(), x.view()) < 1e-6, "n = {n}");
        }
    }

    #[test]
    fn linearity() {
        let c = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((3000, 1), |_| rng.random::<f64>() - 0.5);
        let y = Array2::from_shape_fn((3000, 1), |_| rng.random::<f64>() - 0.5);
        let (a, b) = (1.7, -0.3);
        let lhs = stft((&x * a + &y * b).view(), &c, 1).unwrap();
        let sx = stft(x.view(), &c, 1).unwrap();
        let sy = stft(y.view(), &c, 1).unwrap();
        for ((l, p), q) in lhs.data.iter().zip(sx.data.iter()).zip(sy.data.iter()) {
            assert!((l - (p * a + q * b)).norm() < 1e-9);
        }
    }
}
