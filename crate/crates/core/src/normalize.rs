//! Reference-channel magnitude normalization.
//!
//! All channels are divided by the mean magnitude of the reference channel.
//! Offline processing uses a single utterance-level mean; online processing
//! tracks it with a first-order recursion over per-frame means.

use ndarray::{s, Axis};

use crate::error::{Error, Result};
use crate::stft::ComplexSpectrogram;

/// Lower bound applied to the normalizer on silent input.
pub const NORM_EPS: f64 = 1e-8;

/// Smoothing factor approximating an `smoothing_len`-frame window.
pub fn smoothing_alpha(smoothing_len: usize) -> f64 {
    let l = smoothing_len as f64;
    (l - 1.0) / (l + 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum NormalizationState {
    Offline {
        mu: f64,
        clamped: bool,
    },
    Online {
        /// Per-frame normalizer `mu(t)`.
        mu: Vec<f64>,
        alpha: f64,
        smoothing_len: usize,
        /// Number of frames whose normalizer hit the guard.
        clamped_frames: usize,
    },
}

impl NormalizationState {
    pub fn clamped(&self) -> bool {
        match self {
            NormalizationState::Offline { clamped, .. } => *clamped,
            NormalizationState::Online { clamped_frames, .. } => *clamped_frames > 0,
        }
    }
}

/// Causal per-frame normalizer tracker shared by batch and streaming paths.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineMean {
    alpha: f64,
    smoothing_len: usize,
    mu: Option<f64>,
}

impl OnlineMean {
    pub fn new(smoothing_len: usize) -> Result<Self> {
        if smoothing_len < 2 {
            return Err(Error::InvalidArgument(format!(
                "smoothing length must be >= 2, got {smoothing_len}"
            )));
        }
        Ok(Self {
            alpha: smoothing_alpha(smoothing_len),
            smoothing_len,
            mu: None,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn smoothing_len(&self) -> usize {
        self.smoothing_len
    }

    /// Feeds one frame's mean reference magnitude; returns the (guarded)
    /// normalizer for that frame and whether the guard was hit.
    pub fn update(&mut self, frame_mean: f64) -> (f64, bool) {
        // the recursion is seeded with the first frame's mean
        let prev = self.mu.unwrap_or(frame_mean);
        let mu = prev + (1.0 - self.alpha) * (frame_mean - prev);
        self.mu = Some(mu);
        if mu < NORM_EPS {
            (NORM_EPS, true)
        } else {
            (mu, false)
        }
    }

    pub fn reset(&mut self) {
        self.mu = None;
    }
}

pub fn offline_normalize(spec: &ComplexSpectrogram) -> Result<(ComplexSpectrogram, NormalizationState)> {
    let (t, f, _) = spec.data.dim();
    if t == 0 || f == 0 {
        return Err(Error::EmptySignal);
    }
    let raw = spec.reference().iter().map(|c| c.norm()).sum::<f64>() / (t * f) as f64;
    let clamped = raw < NORM_EPS;
    let mu = if clamped { NORM_EPS } else { raw };
    let mut out = spec.clone();
    out.data.mapv_inplace(|c| c / mu);
    Ok((out, NormalizationState::Offline { mu, clamped }))
}

pub fn online_normalize(
    spec: &ComplexSpectrogram,
    smoothing_len: usize,
) -> Result<(ComplexSpectrogram, NormalizationState)> {
    let (t, f, _) = spec.data.dim();
    if t == 0 || f == 0 {
        return Err(Error::EmptySignal);
    }
    let mut tracker = OnlineMean::new(smoothing_len)?;
    let reference = spec.reference();
    let mut out = spec.clone();
    let mut mus = Vec::with_capacity(t);
    let mut clamped_frames = 0;
    for (ti, row) in reference.axis_iter(Axis(0)).enumerate() {
        let frame_mean = row.iter().map(|c| c.norm()).sum::<f64>() / f as f64;
        let (mu, clamped) = tracker.update(frame_mean);
        clamped_frames += clamped as usize;
        out.data
            .slice_mut(s![ti, .., ..])
            .mapv_inplace(|c| c / mu);
        mus.push(mu);
    }
    Ok((
        out,
        NormalizationState::Online {
            mu: mus,
            alpha: tracker.alpha,
            smoothing_len,
            clamped_frames,
        },
    ))
}
